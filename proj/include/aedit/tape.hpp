#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "aedit/tensor.hpp"

namespace aedit {

enum class OpKind : std::uint8_t {
  Leaf,
  Add,
  Sub,
  Mul,
  Scale,
  Matmul,
  Transpose,
  Exp,
  Sqrt,
  Sum,
  Mean,
  RowSoftmax,
  Relu,
  Reshape,
  Slice,
  Concat,
  SquaredNorm,
};

const char* op_name(OpKind kind);

/// Reverse-mode differentiation tape.
///
/// Nodes are appended in creation order, so the node list is already a
/// topological order. A tape is single use: after backward() it refuses new
/// records and a second backward(). It must outlive every tensor that
/// refers to it and is confined to one thread.
class Tape {
 public:
  static constexpr std::ptrdiff_t kConstant = -1;

  struct Node {
    OpKind kind = OpKind::Leaf;
    std::vector<std::ptrdiff_t> inputs;  // kConstant for untracked operands
    Shape shape;
    std::vector<Tensor> saved;  // detached values the backward rule needs
    std::vector<Shape> input_shapes;
    double factor = 0.0;
    std::size_t axis = 0;
    std::size_t offset = 0;
    bool broadcast = false;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers value as a differentiable leaf.
  Tensor watch(Tensor value);

  void backward(const Tensor& loss);

  // Gradient of the last backward() loss w.r.t. t; zeros when t did not
  // influence the loss.
  Tensor grad(const Tensor& t) const;

  std::size_t node_count() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }

  // Used by the op implementations.
  Tensor record(Node node, Tensor result);
  std::ptrdiff_t handle_of(const Tensor& t) const;

 private:
  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  bool consumed_ = false;
};

// Tape shared by the tracked inputs, or nullptr when none is tracked.
// Throws std::logic_error when inputs live on different tapes.
Tape* common_tape(std::initializer_list<const Tensor*> inputs);

}  // namespace aedit
