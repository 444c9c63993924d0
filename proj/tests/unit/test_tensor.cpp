#include <cmath>
#include <cstring>
#include <random>
#include <sstream>
#include <stdexcept>

#include "doctest.h"

#include "aedit/ops.hpp"
#include "aedit/serialize.hpp"
#include "aedit/tape.hpp"
#include "aedit/tensor.hpp"
#include "support.hpp"

using namespace aedit;
using aedit::testing::random_tensor;

TEST_CASE("matmul with the identity returns the other operand") {
  const Tensor id = Tensor::from_rows({{1, 0}, {0, 1}});
  const Tensor b = Tensor::from_rows({{2, 3}, {4, 5}});
  CHECK(identical(ops::matmul(id, b), b));
}

TEST_CASE("row_softmax of equal logits is uniform") {
  const Tensor p = ops::row_softmax(Tensor::vector({0.0, 0.0}));
  CHECK(p[0] == 0.5);
  CHECK(p[1] == 0.5);
}

TEST_CASE("squared Frobenius norm of [[3,4]] is 25") {
  CHECK(ops::squared_frobenius_norm(Tensor::from_rows({{3, 4}})).item() == 25.0);
}

TEST_CASE("gemm agrees with a naive triple loop for every transpose combination") {
  std::mt19937_64 rng(5);
  for (int ta = 0; ta < 2; ++ta) {
    for (int tb = 0; tb < 2; ++tb) {
      const std::size_t m = 3, n = 4, k = 5;
      const Tensor a = random_tensor(rng, ta ? Shape{k, m} : Shape{m, k});
      const Tensor b = random_tensor(rng, tb ? Shape{n, k} : Shape{k, n});
      std::vector<double> c(m * n);
      detail::gemm(a.values().data(), ta, b.values().data(), tb, m, n, k, c.data());
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          double ref = 0.0;
          for (std::size_t p = 0; p < k; ++p) ref += (ta ? a.at(p, i) : a.at(i, p)) * (tb ? b.at(j, p) : b.at(p, j));
          CHECK(c[i * n + j] == doctest::Approx(ref).epsilon(1e-14));
        }
      }
    }
  }
}

TEST_CASE("shape mismatches are rejected") {
  const Tensor a(Shape{2, 3}), b(Shape{3, 2});
  CHECK_THROWS_AS(ops::add(a, b), ShapeError);
  CHECK_THROWS_AS(ops::matmul(a, a), ShapeError);
  CHECK_THROWS_AS(ops::reshape(a, {4}), ShapeError);
  CHECK_THROWS_AS(ops::slice(a, 1, 2, 2), ShapeError);
  CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST_CASE("row broadcast adds a 1 x n row to every row") {
  const Tensor a = Tensor::from_rows({{1, 2}, {3, 4}, {5, 6}});
  const Tensor r = ops::add(a, Tensor::from_rows({{10, 20}}));
  CHECK(identical(r, Tensor::from_rows({{11, 22}, {13, 24}, {15, 26}})));
}

TEST_CASE("non-finite results raise NumericError") {
  CHECK_THROWS_AS(ops::exp(Tensor::vector({1000.0})), NumericError);
  CHECK_THROWS_AS(ops::sqrt(Tensor::vector({-1.0})), NumericError);
  CHECK_THROWS_AS(ops::scale(Tensor::vector({1.0}), std::nan("")), NumericError);
}

TEST_CASE("d(x*x)/dx at 3 is 6") {
  Tape tape;
  const Tensor x = tape.watch(Tensor::scalar(3.0));
  tape.backward(ops::mul(x, x));
  CHECK(tape.grad(x).item() == 6.0);
}

TEST_CASE("d sum(A B)/dA with B = I is all ones") {
  Tape tape;
  const Tensor a = tape.watch(Tensor::from_rows({{1, 2}, {3, 4}}));
  tape.backward(ops::sum(ops::matmul(a, Tensor::from_rows({{1, 0}, {0, 1}}))));
  CHECK(identical(tape.grad(a), Tensor(Shape{2, 2}, 1.0)));
}

TEST_CASE("tape is single use") {
  Tape tape;
  const Tensor x = tape.watch(Tensor::scalar(2.0));
  const Tensor y = ops::mul(x, x);
  CHECK_THROWS_AS(tape.grad(x), std::logic_error);
  tape.backward(y);
  CHECK_THROWS_AS(tape.backward(y), std::logic_error);
  CHECK_THROWS_AS(ops::add(x, x), std::logic_error);
}

TEST_CASE("gradients are zero for leaves that do not reach the loss") {
  Tape tape;
  const Tensor x = tape.watch(Tensor::vector({1, 2}));
  const Tensor unused = tape.watch(Tensor::vector({5, 6, 7}));
  tape.backward(ops::sum(x));
  CHECK(identical(tape.grad(unused), Tensor(Shape{3}, 0.0)));
}

TEST_CASE("operands from two tapes cannot be mixed") {
  Tape t1, t2;
  const Tensor a = t1.watch(Tensor::scalar(1.0));
  const Tensor b = t2.watch(Tensor::scalar(1.0));
  CHECK_THROWS_AS(ops::add(a, b), std::logic_error);
}

TEST_CASE("tracked tensors refuse in-place writes; detached copies do not") {
  Tape tape;
  const Tensor x = tape.watch(Tensor::vector({1, 2}));
  Tensor copy = x;
  CHECK_THROWS_AS(copy.mutable_values(), std::logic_error);
  Tensor d = x.detach();
  d.mutable_values()[0] = 9.0;
  CHECK(x[0] == 1.0);
}

TEST_CASE("property: reverse mode matches central differences on random graphs") {
  // Hand-rolled generator: each seed picks leaf shapes and an op sequence.
  for (std::uint64_t seed = 1; seed <= 200; ++seed) {
    const aedit::testing::RandomGraph g(seed);
    const auto ad = aedit::testing::tape_gradients(g, g.inputs());
    const auto fd = aedit::testing::numeric_gradients(g, g.inputs());
    INFO("graph seed " << seed);
    CHECK(aedit::testing::relative_error(ad, fd) <= 1e-5);
  }
}

TEST_CASE("property: row_softmax rows are stochastic") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor p = ops::row_softmax(random_tensor(rng, {1 + rng() % 6, 1 + rng() % 9}, -30, 30));
    for (std::size_t r = 0; r < p.rows(); ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < p.cols(); ++c) {
        CHECK(p.at(r, c) >= 0.0);
        s += p.at(r, c);
      }
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("tensor records round-trip bit-exactly") {
  std::mt19937_64 rng(3);
  for (const Shape& s : {Shape{}, Shape{5}, Shape{3, 4}, Shape{2, 0}, Shape{2, 3, 2}}) {
    const Tensor t = random_tensor(rng, s);
    std::stringstream buf;
    io::write_tensor(buf, t);
    const Tensor back = io::read_tensor(buf);
    CHECK(identical(t, back));
  }
}

TEST_CASE("tensor record header layout") {
  std::stringstream buf;
  io::write_tensor(buf, Tensor::from_rows({{1.5, -2.0}}));
  const std::string bytes = buf.str();
  REQUIRE(bytes.size() == 4 + 4 + 2 * 8 + 2 * 8);
  CHECK(bytes.substr(0, 4) == "TNSR");
  CHECK(static_cast<unsigned char>(bytes[4]) == 2);
  CHECK(static_cast<unsigned char>(bytes[8]) == 1);
  CHECK(static_cast<unsigned char>(bytes[16]) == 2);
  double first;
  std::memcpy(&first, bytes.data() + 24, 8);
  CHECK(first == 1.5);
}

TEST_CASE("corrupt tensor records raise FormatError") {
  std::stringstream bad_magic("XXXX");
  CHECK_THROWS_AS(io::read_tensor(bad_magic), io::FormatError);
  std::stringstream full;
  io::write_tensor(full, Tensor::vector({1, 2, 3}));
  std::stringstream truncated(full.str().substr(0, full.str().size() - 3));
  CHECK_THROWS_AS(io::read_tensor(truncated), io::FormatError);
}
