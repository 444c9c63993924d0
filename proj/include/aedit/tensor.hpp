#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace aedit {

class Tape;

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Raised whenever an operation would produce NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major double tensor.
///
/// A tensor is either plain data or a handle into a Tape: operations on
/// tracked tensors are recorded so gradients can be pulled back with
/// Tape::backward. Copies of a tracked tensor refer to the same tape node.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data);
  explicit Tensor(Shape shape, double fill = 0.0);

  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> data);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t rows() const;
  std::size_t cols() const;
  bool empty() const noexcept { return data_.empty(); }

  std::span<const double> values() const noexcept { return data_; }
  // Only untracked tensors may be written in place.
  std::span<double> mutable_values();

  double operator[](std::size_t i) const { return data_[i]; }
  double at(std::size_t r, std::size_t c) const;
  double item() const;

  bool tracked() const noexcept { return tape_ != nullptr; }
  Tape* tape() const noexcept { return tape_; }
  std::size_t node() const noexcept { return node_; }
  Tensor detach() const;

 private:
  friend class Tape;

  Shape shape_;
  std::vector<double> data_;
  Tape* tape_ = nullptr;
  std::size_t node_ = 0;
};

// Bitwise comparison of shape and payload; tape membership is ignored.
bool identical(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);
double frobenius_norm(const Tensor& t);
void require_finite(std::span<const double> values, const char* what);

}  // namespace aedit
