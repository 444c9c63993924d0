#include "aedit/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "aedit/tape.hpp"

namespace aedit::detail {

void gemm(const double* a, bool trans_a, const double* b, bool trans_b, std::size_t m, std::size_t n,
          std::size_t k, double* c) {
  std::fill(c, c + m * n, 0.0);
  if (!trans_b) {
    // i-p-j order keeps the innermost loop contiguous in B and C.
    for (std::size_t i = 0; i < m; ++i) {
      double* crow = c + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = trans_a ? a[p * m + i] : a[i * k + p];
        if (av == 0.0) continue;
        const double* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
    return;
  }
  // op(B) = B^T: rows of B are contiguous columns of op(B).
  std::vector<double> arow(k);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) arow[p] = trans_a ? a[p * m + i] : a[i * k + p];
    double* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * bj[p];
      crow[j] = acc;
    }
  }
}

}  // namespace aedit::detail

namespace aedit::ops {
namespace {

using Node = Tape::Node;

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + " expects a matrix, got shape " + shape_string(t.shape()));
  }
}

Tensor make_result(Shape shape, std::vector<double> data, const char* op) {
  require_finite(data, op);
  return Tensor(std::move(shape), std::move(data));
}

// Records `result` on the tape shared by `inputs`, if any.
Tensor finish(std::initializer_list<const Tensor*> inputs, Node node, Tensor result) {
  Tape* tape = common_tape(inputs);
  if (!tape) return result;
  for (const Tensor* in : inputs) {
    node.inputs.push_back(tape->handle_of(*in));
    node.input_shapes.push_back(in->shape());
  }
  return tape->record(std::move(node), std::move(result));
}

bool row_broadcast(const Tensor& a, const Tensor& b) {
  return a.rank() == 2 && b.rank() == 2 && b.shape()[0] == 1 && b.shape()[1] == a.shape()[1] &&
         a.shape()[0] != 1;
}

Tensor elementwise_sum(const Tensor& a, const Tensor& b, double sign, OpKind kind, const char* name) {
  const bool bcast = row_broadcast(a, b);
  if (!bcast && a.shape() != b.shape()) {
    throw ShapeError(std::string(name) + " shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  std::vector<double> out(a.size());
  auto av = a.values();
  auto bv = b.values();
  if (bcast) {
    const std::size_t cols = a.shape()[1];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + sign * bv[i % cols];
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + sign * bv[i];
  }
  Node node;
  node.kind = kind;
  node.broadcast = bcast;
  return finish({&a, &b}, std::move(node), make_result(a.shape(), std::move(out), name));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return elementwise_sum(a, b, 1.0, OpKind::Add, "add"); }

Tensor sub(const Tensor& a, const Tensor& b) { return elementwise_sum(a, b, -1.0, OpKind::Sub, "sub"); }

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mul shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  Node node;
  node.kind = OpKind::Mul;
  if (a.tracked() || b.tracked()) node.saved = {a.detach(), b.detach()};
  return finish({&a, &b}, std::move(node), make_result(a.shape(), std::move(out), "mul"));
}

Tensor scale(const Tensor& a, double factor) {
  if (!std::isfinite(factor)) throw NumericError("scale by non-finite factor");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  Node node;
  node.kind = OpKind::Scale;
  node.factor = factor;
  return finish({&a}, std::move(node), make_result(a.shape(), std::move(out), "scale"));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw ShapeError("matmul inner dimension mismatch " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  std::vector<double> out(m * n);
  detail::gemm(a.values().data(), false, b.values().data(), false, m, n, k, out.data());
  Node node;
  node.kind = OpKind::Matmul;
  if (a.tracked() || b.tracked()) node.saved = {a.detach(), b.detach()};
  return finish({&a, &b}, std::move(node), make_result(Shape{m, n}, std::move(out), "matmul"));
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
  Node node;
  node.kind = OpKind::Transpose;
  return finish({&a}, std::move(node), make_result(Shape{c, r}, std::move(out), "transpose"));
}

Tensor exp(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a[i]);
  Tensor result = make_result(a.shape(), std::move(out), "exp");
  Node node;
  node.kind = OpKind::Exp;
  if (a.tracked()) node.saved = {result.detach()};
  return finish({&a}, std::move(node), std::move(result));
}

Tensor sqrt(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(a[i]);
  Tensor result = make_result(a.shape(), std::move(out), "sqrt");
  Node node;
  node.kind = OpKind::Sqrt;
  if (a.tracked()) node.saved = {result.detach()};
  return finish({&a}, std::move(node), std::move(result));
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
  Node node;
  node.kind = OpKind::Relu;
  if (a.tracked()) node.saved = {a.detach()};
  return finish({&a}, std::move(node), make_result(a.shape(), std::move(out), "relu"));
}

Tensor row_softmax(const Tensor& a) {
  std::size_t rows = 1, cols = a.size();
  if (a.rank() == 2) {
    rows = a.shape()[0];
    cols = a.shape()[1];
  } else if (a.rank() != 1) {
    throw ShapeError("row_softmax expects rank 1 or 2, got " + shape_string(a.shape()));
  }
  std::vector<double> out(a.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = a.values().data() + r * cols;
    double* o = out.data() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      o[c] = std::exp(in[c] - mx);
      z += o[c];
    }
    for (std::size_t c = 0; c < cols; ++c) o[c] /= z;
  }
  Tensor result = make_result(a.shape(), std::move(out), "row_softmax");
  Node node;
  node.kind = OpKind::RowSoftmax;
  if (a.tracked()) node.saved = {result.detach()};
  return finish({&a}, std::move(node), std::move(result));
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  Node node;
  node.kind = OpKind::Sum;
  return finish({&a}, std::move(node), make_result(Shape{}, {s}, "sum"));
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("mean of empty tensor");
  double s = 0.0;
  for (double v : a.values()) s += v;
  Node node;
  node.kind = OpKind::Mean;
  return finish({&a}, std::move(node), make_result(Shape{}, {s / static_cast<double>(a.size())}, "mean"));
}

Tensor squared_frobenius_norm(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v * v;
  Node node;
  node.kind = OpKind::SquaredNorm;
  if (a.tracked()) node.saved = {a.detach()};
  return finish({&a}, std::move(node), make_result(Shape{}, {s}, "squared_frobenius_norm"));
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw ShapeError("reshape " + shape_string(a.shape()) + " to " + shape_string(shape));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  Node node;
  node.kind = OpKind::Reshape;
  return finish({&a}, std::move(node), Tensor(std::move(shape), std::move(out)));
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length) {
  require_rank2(a, "slice");
  if (axis > 1) throw ShapeError("slice axis must be 0 or 1");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  const std::size_t extent = axis == 0 ? r : c;
  if (start + length > extent) {
    throw ShapeError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") out of range for " + shape_string(a.shape()));
  }
  std::vector<double> out;
  Shape shape;
  if (axis == 0) {
    out.assign(a.values().begin() + static_cast<std::ptrdiff_t>(start * c),
               a.values().begin() + static_cast<std::ptrdiff_t>((start + length) * c));
    shape = {length, c};
  } else {
    out.resize(r * length);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < length; ++j) out[i * length + j] = a[i * c + start + j];
    shape = {r, length};
  }
  Node node;
  node.kind = OpKind::Slice;
  node.axis = axis;
  node.offset = start;
  return finish({&a}, std::move(node), Tensor(std::move(shape), std::move(out)));
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  if (axis > 1) throw ShapeError("concat axis must be 0 or 1");
  for (const Tensor& p : parts) require_rank2(p, "concat");
  const std::size_t other = 1 - axis;
  const std::size_t fixed = parts[0].shape()[other];
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.shape()[other] != fixed) throw ShapeError("concat extent mismatch " + shape_string(p.shape()));
    total += p.shape()[axis];
  }
  Shape shape = axis == 0 ? Shape{total, fixed} : Shape{fixed, total};
  std::vector<double> out(shape_size(shape));
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t pr = p.shape()[0], pc = p.shape()[1];
    if (axis == 0) {
      std::copy(p.values().begin(), p.values().end(), out.begin() + static_cast<std::ptrdiff_t>(offset * pc));
      offset += pr;
    } else {
      for (std::size_t i = 0; i < pr; ++i)
        for (std::size_t j = 0; j < pc; ++j) out[i * total + offset + j] = p[i * pc + j];
      offset += pc;
    }
  }
  Tensor result(std::move(shape), std::move(out));

  Tape* tape = nullptr;
  for (const Tensor& p : parts) {
    if (!p.tracked()) continue;
    if (tape && tape != p.tape()) throw std::logic_error("concat inputs live on different tapes");
    tape = p.tape();
  }
  if (!tape) return result;
  Node node;
  node.kind = OpKind::Concat;
  node.axis = axis;
  for (const Tensor& p : parts) {
    node.inputs.push_back(tape->handle_of(p));
    node.input_shapes.push_back(p.shape());
  }
  return tape->record(std::move(node), std::move(result));
}

}  // namespace aedit::ops
