#pragma once

#include <stdexcept>
#include <vector>

#include "aedit/tensor.hpp"

namespace aedit {

class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct JacobiOptions {
  int max_sweeps = 100;
  double tolerance = 1e-12;
};

/// Thin SVD: M (m x n) = U diag(sigma) V^T with k = min(m, n), U m x k,
/// V n x k, sigma descending. Columns for zero singular values are completed
/// to an orthonormal set.
struct Svd {
  Tensor u;
  std::vector<double> sigma;
  Tensor v;
};

// One-sided (Hestenes) Jacobi.
Svd svd(const Tensor& m, const JacobiOptions& options = {});

// U diag(sigma) V^T for arbitrary (e.g. reweighted) singular values.
Tensor svd_compose(const Tensor& u, const std::vector<double>& sigma, const Tensor& v);

/// Eigen-decomposition of a symmetric matrix: S = Q diag(values) Q^T with
/// eigenvalues in descending order.
struct SymmetricEigen {
  std::vector<double> values;
  Tensor vectors;
};

SymmetricEigen symmetric_eigen(const Tensor& s, const JacobiOptions& options = {});

// Principal square root of a symmetric PSD matrix. Eigenvalues in
// [-1e-8 * scale, 0) are clamped to zero, anything more negative throws.
Tensor psd_sqrt(const Tensor& s);

}  // namespace aedit
