#pragma once

// Helpers shared by the unit tests and the acceptance runner: seeded random
// tensors, a central-difference gradient oracle and a random op-graph
// generator for checking the tape.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "aedit/ops.hpp"
#include "aedit/tape.hpp"
#include "aedit/tensor.hpp"

namespace aedit::testing {

inline Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v));
}

inline Tensor random_normal(std::mt19937_64& rng, Shape shape, double stddev = 1.0) {
  std::normal_distribution<double> n(0.0, stddev);
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = n(rng);
  return Tensor(std::move(shape), std::move(v));
}

// Scalar function of a list of inputs; must work on plain and tracked tensors.
using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

// Reverse-mode gradients of f at x.
inline std::vector<Tensor> tape_gradients(const ScalarFn& f, const std::vector<Tensor>& x) {
  Tape tape;
  std::vector<Tensor> leaves;
  for (const Tensor& t : x) leaves.push_back(tape.watch(t));
  tape.backward(f(leaves));
  std::vector<Tensor> g;
  for (const Tensor& l : leaves) g.push_back(tape.grad(l));
  return g;
}

// Central differences of f at x, one coordinate at a time.
inline std::vector<Tensor> numeric_gradients(const ScalarFn& f, const std::vector<Tensor>& x, double h = 1e-6) {
  std::vector<Tensor> g;
  std::vector<Tensor> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor gi(x[i].shape());
    for (std::size_t k = 0; k < x[i].size(); ++k) {
      const double x0 = x[i][k];
      probe[i].mutable_values()[k] = x0 + h;
      const double up = f(probe).item();
      probe[i].mutable_values()[k] = x0 - h;
      const double down = f(probe).item();
      probe[i].mutable_values()[k] = x0;
      gi.mutable_values()[k] = (up - down) / (2.0 * h);
    }
    g.push_back(std::move(gi));
  }
  return g;
}

// |a - b| / max(|b|, floor) over the concatenation of all gradient blocks.
inline double relative_error(const std::vector<Tensor>& a, const std::vector<Tensor>& b, double floor = 1e-8) {
  double diff = 0.0, ref = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t k = 0; k < a[i].size(); ++k) {
      diff += (a[i][k] - b[i][k]) * (a[i][k] - b[i][k]);
      ref += b[i][k] * b[i][k];
    }
  }
  return std::sqrt(diff) / std::max(std::sqrt(ref), floor);
}

/// A random differentiable expression over a few matrix leaves. The recipe
/// is fixed at construction so the same graph can be replayed on tracked
/// and perturbed inputs.
class RandomGraph {
 public:
  RandomGraph(std::uint64_t seed, int ops = 8) : seed_(seed), ops_(ops) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> dim(1, 4);
    const std::size_t n = 2 + rng() % 2;
    for (std::size_t i = 0; i < n; ++i) inputs_.push_back(random_tensor(rng, {dim(rng), dim(rng)}));
  }

  const std::vector<Tensor>& inputs() const { return inputs_; }

  // Replays the recipe; the choice stream depends only on the seed and shapes.
  Tensor operator()(const std::vector<Tensor>& x) const {
    std::mt19937_64 rng(seed_ ^ 0x9e3779b97f4a7c15ULL);
    std::vector<Tensor> pool = x;
    auto pick = [&]() -> const Tensor& { return pool[rng() % pool.size()]; };
    auto constant = [&](Shape s) { return random_tensor(rng, std::move(s)); };
    for (int step = 0; step < ops_; ++step) {
      const Tensor a = pick();
      const std::size_t r = a.rows(), c = a.cols();
      switch (rng() % 14) {
        case 0: pool.push_back(ops::add(a, partner(pool, rng, a.shape(), constant))); break;
        case 1: pool.push_back(ops::sub(a, partner(pool, rng, a.shape(), constant))); break;
        case 2: pool.push_back(ops::mul(a, partner(pool, rng, a.shape(), constant))); break;
        case 3: pool.push_back(ops::scale(a, 0.5 + (rng() % 100) / 100.0)); break;
        case 4: {
          const std::size_t n = 1 + rng() % 4;
          pool.push_back(ops::matmul(a, partner(pool, rng, {c, n}, constant)));
          break;
        }
        case 5: pool.push_back(ops::transpose(a)); break;
        case 6: pool.push_back(ops::exp(ops::scale(a, 0.5))); break;
        case 7: pool.push_back(ops::sqrt(ops::add(ops::mul(a, a), Tensor(a.shape(), 0.5)))); break;
        case 8: {
          // A random shift; landing within h of the kink is vanishingly unlikely.
          const Tensor shift = constant(a.shape());
          pool.push_back(ops::relu(ops::add(a, shift)));
          break;
        }
        case 9: pool.push_back(ops::row_softmax(ops::scale(a, 2.0))); break;
        case 10: pool.push_back(ops::reshape(a, {c, r})); break;
        case 11: {
          const std::size_t axis = rng() % 2, extent = axis ? c : r;
          const std::size_t start = rng() % extent, len = 1 + rng() % (extent - start);
          pool.push_back(ops::slice(a, axis, start, len));
          break;
        }
        case 12: {
          const std::size_t axis = rng() % 2;
          const Tensor b = partner(pool, rng, axis ? Shape{r, 1 + rng() % 3} : Shape{1 + rng() % 3, c}, constant);
          const Tensor parts[] = {a, b};
          pool.push_back(ops::concat(parts, axis));
          break;
        }
        default:
          if (r > 1) pool.push_back(ops::add(a, partner(pool, rng, {1, c}, constant)));
          else pool.push_back(ops::sub(a, ops::scale(a, 0.25)));
          break;
      }
    }
    // Weight every node so gradients reach all branches.
    Tensor loss = ops::mean(pool.back());
    for (std::size_t i = 0; i < pool.size(); ++i) {
      const Tensor w = constant(pool[i].shape());
      loss = ops::add(loss, i % 3 == 0 ? ops::scale(ops::squared_frobenius_norm(pool[i]), 0.1)
                                       : ops::sum(ops::mul(pool[i], w)));
    }
    return loss;
  }

 private:
  // An existing node of the requested shape, or a fresh constant.
  template <typename Make>
  static Tensor partner(const std::vector<Tensor>& pool, std::mt19937_64& rng, const Shape& shape, Make&& make) {
    std::vector<const Tensor*> fits;
    for (const Tensor& t : pool)
      if (t.shape() == shape) fits.push_back(&t);
    if (!fits.empty() && rng() % 3 != 0) return *fits[rng() % fits.size()];
    return make(shape);
  }

  std::uint64_t seed_;
  int ops_;
  std::vector<Tensor> inputs_;
};

}  // namespace aedit::testing
