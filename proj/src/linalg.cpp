#include "aedit/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace aedit {
namespace {

// Column-major scratch matrix; Jacobi rotations act on column pairs.
struct Columns {
  std::size_t rows = 0, cols = 0;
  std::vector<double> data;

  Columns(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  double* col(std::size_t j) { return data.data() + j * rows; }
  const double* col(std::size_t j) const { return data.data() + j * rows; }
};

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void rotate(double* p, double* q, std::size_t n, double c, double s) {
  for (std::size_t i = 0; i < n; ++i) {
    const double a = p[i], b = q[i];
    p[i] = c * a - s * b;
    q[i] = s * a + c * b;
  }
}

// Fills the columns of `basis` listed in `missing` so that all columns are
// orthonormal, by Gram-Schmidt against the canonical basis.
void complete_basis(Columns& basis, const std::vector<std::size_t>& missing) {
  std::vector<bool> ok(basis.cols, true);
  for (std::size_t j : missing) ok[j] = false;
  std::size_t candidate = 0;
  for (std::size_t j : missing) {
    double* target = basis.col(j);
    for (;; ++candidate) {
      if (candidate >= basis.rows) throw ConvergenceError("cannot complete orthonormal basis");
      std::fill(target, target + basis.rows, 0.0);
      target[candidate] = 1.0;
      // Two passes of modified Gram-Schmidt for stability.
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t k = 0; k < basis.cols; ++k) {
          if (!ok[k]) continue;
          const double proj = dot(basis.col(k), target, basis.rows);
          for (std::size_t i = 0; i < basis.rows; ++i) target[i] -= proj * basis.col(k)[i];
        }
      }
      const double norm = std::sqrt(dot(target, target, basis.rows));
      if (norm > 1e-6) {
        for (std::size_t i = 0; i < basis.rows; ++i) target[i] /= norm;
        ok[j] = true;
        ++candidate;
        break;
      }
    }
  }
}

Tensor to_row_major(const Columns& c, const std::vector<std::size_t>& order) {
  std::vector<double> out(c.rows * order.size());
  for (std::size_t j = 0; j < order.size(); ++j)
    for (std::size_t i = 0; i < c.rows; ++i) out[i * order.size() + j] = c.col(order[j])[i];
  return Tensor::matrix(c.rows, order.size(), std::move(out));
}

// Hestenes Jacobi on a tall (rows >= cols) matrix.
Svd svd_tall(const Tensor& m, const JacobiOptions& options) {
  const std::size_t rows = m.shape()[0], cols = m.shape()[1];
  Columns w(rows, cols), v(cols, cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) w.col(j)[i] = m[i * cols + j];
  for (std::size_t j = 0; j < cols; ++j) v.col(j)[j] = 1.0;

  bool converged = cols < 2;
  for (int sweep = 0; sweep < options.max_sweeps && !converged; ++sweep) {
    converged = true;
    for (std::size_t p = 0; p + 1 < cols; ++p) {
      for (std::size_t q = p + 1; q < cols; ++q) {
        const double alpha = dot(w.col(p), w.col(p), rows);
        const double beta = dot(w.col(q), w.col(q), rows);
        const double gamma = dot(w.col(p), w.col(q), rows);
        if (gamma == 0.0 || std::abs(gamma) <= options.tolerance * std::sqrt(alpha * beta)) continue;
        converged = false;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        rotate(w.col(p), w.col(q), rows, c, s);
        rotate(v.col(p), v.col(q), cols, c, s);
      }
    }
  }
  if (!converged) {
    throw ConvergenceError("Jacobi SVD did not converge within " + std::to_string(options.max_sweeps) +
                           " sweeps");
  }

  std::vector<double> sigma(cols);
  for (std::size_t j = 0; j < cols; ++j) sigma[j] = std::sqrt(dot(w.col(j), w.col(j), rows));
  std::vector<std::size_t> order(cols);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sigma[a] > sigma[b]; });

  const double largest = cols ? sigma[order[0]] : 0.0;
  const double floor = largest * static_cast<double>(std::max(rows, cols)) * 1e-15;
  std::vector<std::size_t> missing;
  for (std::size_t j = 0; j < cols; ++j) {
    double* col = w.col(j);
    if (sigma[j] > floor && sigma[j] > 0.0) {
      for (std::size_t i = 0; i < rows; ++i) col[i] /= sigma[j];
    } else {
      missing.push_back(j);
    }
  }
  // Fill in the order the columns will appear so the result is deterministic.
  std::vector<std::size_t> missing_sorted;
  for (std::size_t j : order)
    if (std::find(missing.begin(), missing.end(), j) != missing.end()) missing_sorted.push_back(j);
  complete_basis(w, missing_sorted);

  Svd out;
  out.u = to_row_major(w, order);
  out.v = to_row_major(v, order);
  out.sigma.resize(cols);
  for (std::size_t j = 0; j < cols; ++j) out.sigma[j] = sigma[order[j]];
  return out;
}

}  // namespace

Svd svd(const Tensor& m, const JacobiOptions& options) {
  if (m.rank() != 2) throw ShapeError("svd expects a matrix, got " + shape_string(m.shape()));
  require_finite(m.values(), "svd input");
  const std::size_t rows = m.shape()[0], cols = m.shape()[1];
  if (rows >= cols) return svd_tall(m, options);

  std::vector<double> t(m.size());
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) t[j * rows + i] = m[i * cols + j];
  Svd flipped = svd_tall(Tensor::matrix(cols, rows, std::move(t)), options);
  return Svd{std::move(flipped.v), std::move(flipped.sigma), std::move(flipped.u)};
}

Tensor svd_compose(const Tensor& u, const std::vector<double>& sigma, const Tensor& v) {
  const std::size_t rows = u.shape()[0], cols = v.shape()[0], k = sigma.size();
  if (u.shape()[1] != k || v.shape()[1] != k) throw ShapeError("svd_compose factor shapes disagree");
  std::vector<double> out(rows * cols, 0.0);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += u[i * k + p] * sigma[p] * v[j * k + p];
      out[i * cols + j] = s;
    }
  require_finite(out, "svd_compose");
  return Tensor::matrix(rows, cols, std::move(out));
}

SymmetricEigen symmetric_eigen(const Tensor& s, const JacobiOptions& options) {
  if (s.rank() != 2 || s.shape()[0] != s.shape()[1]) {
    throw ShapeError("symmetric_eigen expects a square matrix, got " + shape_string(s.shape()));
  }
  require_finite(s.values(), "symmetric_eigen input");
  const std::size_t n = s.shape()[0];
  std::vector<double> a(s.values().begin(), s.values().end());
  Columns q(n, n);
  for (std::size_t j = 0; j < n; ++j) q.col(j)[j] = 1.0;

  auto off_norm = [&] {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) off += a[i * n + j] * a[i * n + j];
    return std::sqrt(off);
  };
  const double total = std::sqrt(std::inner_product(a.begin(), a.end(), a.begin(), 0.0));

  bool converged = off_norm() <= options.tolerance * total;
  for (int sweep = 0; sweep < options.max_sweeps && !converged; ++sweep) {
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t r = p + 1; r < n; ++r) {
        const double apq = a[p * n + r];
        if (apq == 0.0) continue;
        const double theta = (a[r * n + r] - a[p * n + p]) / (2.0 * apq);
        const double t = std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double sn = t * c;
        for (std::size_t k = 0; k < n; ++k) {  // columns p, r
          const double akp = a[k * n + p], akr = a[k * n + r];
          a[k * n + p] = c * akp - sn * akr;
          a[k * n + r] = sn * akp + c * akr;
        }
        for (std::size_t k = 0; k < n; ++k) {  // rows p, r
          const double apk = a[p * n + k], ark = a[r * n + k];
          a[p * n + k] = c * apk - sn * ark;
          a[r * n + k] = sn * apk + c * ark;
        }
        rotate(q.col(p), q.col(r), n, c, sn);
      }
    }
    converged = off_norm() <= options.tolerance * total;
  }
  if (!converged) {
    throw ConvergenceError("Jacobi eigen-decomposition did not converge within " +
                           std::to_string(options.max_sweeps) + " sweeps");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return a[x * n + x] > a[y * n + y]; });
  SymmetricEigen out;
  out.values.resize(n);
  for (std::size_t j = 0; j < n; ++j) out.values[j] = a[order[j] * n + order[j]];
  out.vectors = to_row_major(q, order);
  return out;
}

Tensor psd_sqrt(const Tensor& s) {
  if (s.rank() != 2 || s.shape()[0] != s.shape()[1]) {
    throw ShapeError("psd_sqrt expects a square matrix, got " + shape_string(s.shape()));
  }
  const std::size_t n = s.shape()[0];
  double scale = 1.0;
  for (double v : s.values()) scale = std::max(scale, std::abs(v));
  const double tol = 1e-8 * scale;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (std::abs(s[i * n + j] - s[j * n + i]) > tol) throw std::invalid_argument("psd_sqrt: matrix is not symmetric");

  const SymmetricEigen eig = symmetric_eigen(s);
  std::vector<double> root(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double lambda = eig.values[j];
    if (lambda < -tol) {
      throw std::domain_error("psd_sqrt: eigenvalue " + std::to_string(lambda) + " is below -1e-8");
    }
    root[j] = lambda > 0.0 ? std::sqrt(lambda) : 0.0;
  }
  const Tensor& q = eig.vectors;
  std::vector<double> out(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) acc += q[i * n + k] * root[k] * q[j * n + k];
      out[i * n + j] = acc;
      out[j * n + i] = acc;
    }
  return Tensor::matrix(n, n, std::move(out));
}

}  // namespace aedit
