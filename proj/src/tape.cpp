#include "aedit/tape.hpp"

#include <cmath>
#include <stdexcept>

#include "aedit/ops.hpp"

namespace aedit {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::Matmul: return "matmul";
    case OpKind::Transpose: return "transpose";
    case OpKind::Exp: return "exp";
    case OpKind::Sqrt: return "sqrt";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::RowSoftmax: return "row_softmax";
    case OpKind::Relu: return "relu";
    case OpKind::Reshape: return "reshape";
    case OpKind::Slice: return "slice";
    case OpKind::Concat: return "concat";
    case OpKind::SquaredNorm: return "squared_frobenius_norm";
  }
  return "?";
}

Tape* common_tape(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = nullptr;
  for (const Tensor* t : inputs) {
    if (!t->tracked()) continue;
    if (tape && tape != t->tape()) throw std::logic_error("operands live on different tapes");
    tape = t->tape();
  }
  return tape;
}

Tensor Tape::watch(Tensor value) {
  Node node;
  node.kind = OpKind::Leaf;
  node.shape = value.shape();
  return record(std::move(node), value.detach());
}

Tensor Tape::record(Node node, Tensor result) {
  if (consumed_) throw std::logic_error("recording on a tape that already ran backward");
  node.shape = result.shape();
  nodes_.push_back(std::move(node));
  result.tape_ = this;
  result.node_ = nodes_.size() - 1;
  return result;
}

std::ptrdiff_t Tape::handle_of(const Tensor& t) const {
  if (!t.tracked()) return kConstant;
  if (t.tape() != this) throw std::logic_error("tensor belongs to another tape");
  return static_cast<std::ptrdiff_t>(t.node());
}

namespace {

using Grad = std::vector<double>;

Grad& slot(std::vector<Grad>& grads, std::ptrdiff_t id, std::size_t n) {
  Grad& g = grads[static_cast<std::size_t>(id)];
  if (g.empty()) g.assign(n, 0.0);
  return g;
}

void propagate(const Tape::Node& node, const Grad& up, std::vector<Grad>& grads) {
  const auto& in = node.inputs;
  auto tracked = [&](std::size_t i) { return in[i] != Tape::kConstant; };
  auto target = [&](std::size_t i) -> Grad& { return slot(grads, in[i], shape_size(node.input_shapes[i])); };

  switch (node.kind) {
    case OpKind::Leaf:
      return;
    case OpKind::Add:
    case OpKind::Sub: {
      const double sign = node.kind == OpKind::Add ? 1.0 : -1.0;
      if (tracked(0)) {
        Grad& g = target(0);
        for (std::size_t i = 0; i < up.size(); ++i) g[i] += up[i];
      }
      if (tracked(1)) {
        Grad& g = target(1);
        if (node.broadcast) {
          const std::size_t cols = node.shape[1];
          for (std::size_t i = 0; i < up.size(); ++i) g[i % cols] += sign * up[i];
        } else {
          for (std::size_t i = 0; i < up.size(); ++i) g[i] += sign * up[i];
        }
      }
      return;
    }
    case OpKind::Mul: {
      const auto a = node.saved[0].values();
      const auto b = node.saved[1].values();
      if (tracked(0)) {
        Grad& g = target(0);
        for (std::size_t i = 0; i < up.size(); ++i) g[i] += up[i] * b[i];
      }
      if (tracked(1)) {
        Grad& g = target(1);
        for (std::size_t i = 0; i < up.size(); ++i) g[i] += up[i] * a[i];
      }
      return;
    }
    case OpKind::Scale: {
      Grad& g = target(0);
      for (std::size_t i = 0; i < up.size(); ++i) g[i] += node.factor * up[i];
      return;
    }
    case OpKind::Matmul: {
      const Tensor& a = node.saved[0];
      const Tensor& b = node.saved[1];
      const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
      if (tracked(0)) {
        Grad tmp(m * k);
        detail::gemm(up.data(), false, b.values().data(), true, m, k, n, tmp.data());
        Grad& g = target(0);
        for (std::size_t i = 0; i < tmp.size(); ++i) g[i] += tmp[i];
      }
      if (tracked(1)) {
        Grad tmp(k * n);
        detail::gemm(a.values().data(), true, up.data(), false, k, n, m, tmp.data());
        Grad& g = target(1);
        for (std::size_t i = 0; i < tmp.size(); ++i) g[i] += tmp[i];
      }
      return;
    }
    case OpKind::Transpose: {
      const std::size_t r = node.shape[0], c = node.shape[1];  // output r x c, input c x r
      Grad& g = target(0);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[j * r + i] += up[i * c + j];
      return;
    }
    case OpKind::Exp: {
      const auto out = node.saved[0].values();
      Grad& g = target(0);
      for (std::size_t i = 0; i < up.size(); ++i) g[i] += up[i] * out[i];
      return;
    }
    case OpKind::Sqrt: {
      const auto out = node.saved[0].values();
      Grad& g = target(0);
      for (std::size_t i = 0; i < up.size(); ++i) g[i] += up[i] * 0.5 / out[i];
      return;
    }
    case OpKind::Relu: {
      const auto x = node.saved[0].values();
      Grad& g = target(0);
      for (std::size_t i = 0; i < up.size(); ++i)
        if (x[i] > 0.0) g[i] += up[i];
      return;
    }
    case OpKind::RowSoftmax: {
      const auto y = node.saved[0].values();
      const std::size_t cols = node.shape.size() == 2 ? node.shape[1] : y.size();
      const std::size_t rows = y.size() / cols;
      Grad& g = target(0);
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += up[r * cols + c] * y[r * cols + c];
        for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += y[r * cols + c] * (up[r * cols + c] - dot);
      }
      return;
    }
    case OpKind::Sum:
    case OpKind::Mean: {
      Grad& g = target(0);
      const double v = node.kind == OpKind::Sum ? up[0] : up[0] / static_cast<double>(g.size());
      for (double& x : g) x += v;
      return;
    }
    case OpKind::SquaredNorm: {
      const auto x = node.saved[0].values();
      Grad& g = target(0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * up[0] * x[i];
      return;
    }
    case OpKind::Reshape: {
      Grad& g = target(0);
      for (std::size_t i = 0; i < up.size(); ++i) g[i] += up[i];
      return;
    }
    case OpKind::Slice: {
      Grad& g = target(0);
      const std::size_t in_cols = node.input_shapes[0][1];
      const std::size_t r = node.shape[0], c = node.shape[1];
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) {
          const std::size_t src = node.axis == 0 ? (node.offset + i) * in_cols + j : i * in_cols + node.offset + j;
          g[src] += up[i * c + j];
        }
      return;
    }
    case OpKind::Concat: {
      const std::size_t total_cols = node.shape[1];
      std::size_t offset = 0;
      for (std::size_t p = 0; p < in.size(); ++p) {
        const std::size_t pr = node.input_shapes[p][0], pc = node.input_shapes[p][1];
        if (tracked(p)) {
          Grad& g = target(p);
          for (std::size_t i = 0; i < pr; ++i)
            for (std::size_t j = 0; j < pc; ++j) {
              const std::size_t src = node.axis == 0 ? (offset + i) * pc + j : i * total_cols + offset + j;
              g[i * pc + j] += up[src];
            }
        }
        offset += node.axis == 0 ? pr : pc;
      }
      return;
    }
  }
}

}  // namespace

void Tape::backward(const Tensor& loss) {
  if (!loss.tracked()) throw std::logic_error("backward on a loss that is not tape-tracked");
  if (loss.tape() != this) throw std::logic_error("backward on a loss recorded on another tape");
  if (loss.size() != 1) throw ShapeError("backward expects a scalar loss, got " + shape_string(loss.shape()));
  if (consumed_) throw std::logic_error("tape already ran backward; rebuild the graph");
  consumed_ = true;

  grads_.assign(nodes_.size(), {});
  grads_[loss.node()] = {1.0};
  for (std::size_t id = loss.node() + 1; id-- > 0;) {
    const Node& node = nodes_[id];
    if (grads_[id].empty() || node.kind == OpKind::Leaf) continue;
    propagate(node, grads_[id], grads_);
  }
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    if (!grads_[id].empty()) require_finite(grads_[id], op_name(nodes_[id].kind));
  }
}

Tensor Tape::grad(const Tensor& t) const {
  if (t.tape() != this) throw std::logic_error("grad() of a tensor not recorded on this tape");
  if (!consumed_) throw std::logic_error("grad() before backward()");
  const Grad& g = grads_[t.node()];
  if (g.empty()) return Tensor(t.shape(), 0.0);
  return Tensor(t.shape(), g);
}

}  // namespace aedit
