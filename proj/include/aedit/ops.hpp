#pragma once

#include <cstddef>
#include <span>

#include "aedit/tensor.hpp"

// Differentiable tensor operations. Each op is recorded on the tape of its
// tracked inputs (if any) and rejects non-finite results.
namespace aedit::ops {

// Elementwise; `b` may also be a 1 x n row broadcast over the rows of an
// m x n `a`.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor exp(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor row_softmax(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor squared_frobenius_norm(const Tensor& a);

Tensor reshape(const Tensor& a, Shape shape);
// Rank-2 slice of `length` rows (axis 0) or columns (axis 1).
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);

}  // namespace aedit::ops

namespace aedit::detail {

// C = op(A) * op(B), where op transposes when the flag is set. A is m x k
// after op, B is k x n after op. C is overwritten.
void gemm(const double* a, bool trans_a, const double* b, bool trans_b, std::size_t m,
          std::size_t n, std::size_t k, double* c);

}  // namespace aedit::detail
