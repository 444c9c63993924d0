#include <cmath>
#include <random>
#include <stdexcept>

#include "doctest.h"

#include "aedit/config.hpp"
#include "aedit/denoiser.hpp"
#include "aedit/ops.hpp"
#include "aedit/prompt_edit.hpp"
#include "aedit/tape.hpp"
#include "support.hpp"

using namespace aedit;
using aedit::testing::random_normal;

namespace {

// Random prompt with the standard layout: SOT, `words` word rows, EOT padding.
PromptEmbedding random_prompt(std::mt19937_64& rng, std::size_t words, std::size_t len = 8, std::size_t d = 32) {
  PromptEmbedding p;
  p.matrix = random_normal(rng, {len, d}, 0.3);
  p.roles.assign(len, TokenRole::Eot);
  p.roles[0] = TokenRole::Sot;
  for (std::size_t i = 1; i <= words; ++i) p.roles[i] = TokenRole::Word;
  p.polarity.assign(len, Polarity::None);
  return p;
}

EditSpec spec_of(EditMode mode, std::size_t words, std::vector<std::size_t> negatives) {
  EditSpec s;
  s.mode = mode;
  s.target_caption.assign(words, 1);
  s.negative_positions = std::move(negatives);
  return s;
}

double row_norm(const Tensor& m, std::size_t r) {
  double s = 0.0;
  for (std::size_t c = 0; c < m.cols(); ++c) s += m.at(r, c) * m.at(r, c);
  return std::sqrt(s);
}

bool rows_identical(const Tensor& a, const Tensor& b, std::size_t r) {
  for (std::size_t c = 0; c < a.cols(); ++c)
    if (a.at(r, c) != b.at(r, c)) return false;
  return true;
}

}  // namespace

TEST_CASE("classify_tokens marks negative positions and leaves SOT/EOT untagged") {
  std::mt19937_64 rng(1);
  const PromptEmbedding p = random_prompt(rng, 2);
  const PromptEmbedding c = classify_tokens(p, spec_of(EditMode::Delete, 2, {1}));
  const std::vector<Polarity> expected{Polarity::None,     Polarity::Positive, Polarity::Negative, Polarity::None,
                                       Polarity::None,     Polarity::None,     Polarity::None,     Polarity::None};
  CHECK(c.polarity == expected);
  CHECK(identical(c.matrix, p.matrix));
}

TEST_CASE("classify_tokens boundary cases") {
  std::mt19937_64 rng(2);
  const PromptEmbedding p = random_prompt(rng, 3);
  const PromptEmbedding all_neg = classify_tokens(p, spec_of(EditMode::Replace, 3, {0, 1, 2}));
  for (std::size_t r = 1; r <= 3; ++r) CHECK(all_neg.polarity[r] == Polarity::Negative);
  const PromptEmbedding none = classify_tokens(p, spec_of(EditMode::ReconstructOnly, 3, {}));
  for (std::size_t r = 1; r <= 3; ++r) CHECK(none.polarity[r] == Polarity::Positive);
  CHECK(identical(none.matrix, p.matrix));
  CHECK_THROWS_AS(classify_tokens(p, spec_of(EditMode::Delete, 3, {3})), std::out_of_range);
}

TEST_CASE("suppression matrix stacks negatives then EOT rows") {
  std::mt19937_64 rng(3);
  const PromptEmbedding p = random_prompt(rng, 2);
  const SuppressionMatrix one = build_suppression_matrix(classify_tokens(p, spec_of(EditMode::Delete, 2, {1})));
  CHECK(one.x.shape() == Shape{6, 32});
  CHECK(one.rows == std::vector<std::size_t>{2, 3, 4, 5, 6, 7});
  const SuppressionMatrix zero = build_suppression_matrix(classify_tokens(p, spec_of(EditMode::ReconstructOnly, 2, {})));
  CHECK(zero.rows == std::vector<std::size_t>{3, 4, 5, 6, 7});
  const PromptEmbedding three = random_prompt(rng, 3);
  const SuppressionMatrix order = build_suppression_matrix(classify_tokens(three, spec_of(EditMode::Replace, 3, {2, 0})));
  // Caption order, not spec order.
  CHECK(order.rows == std::vector<std::size_t>{1, 3, 4, 5, 6, 7});
  for (std::size_t i = 0; i < order.rows.size(); ++i)
    for (std::size_t c = 0; c < 32; ++c) CHECK(order.x.at(i, c) == three.matrix.at(order.rows[i], c));
}

TEST_CASE("singular value reweighting constants") {
  const auto del = SuppressionConfig::for_mode(EditMode::Delete);
  const auto add = SuppressionConfig::for_mode(EditMode::Add);
  const auto rep = SuppressionConfig::for_mode(EditMode::Replace);
  CHECK(del.beta == 1.0);
  CHECK(del.alpha == 1.0);
  CHECK(add.beta == 1.2);
  CHECK(add.alpha == 0.001);
  CHECK(rep.beta == 1.2);
  CHECK(rep.alpha == 0.001);
  CHECK(regularize_singular_values({2.0}, del)[0] == doctest::Approx(14.778112197861299).epsilon(1e-14));
  CHECK(regularize_singular_values({2.0}, add)[0] == doctest::Approx(2.4048048032016007).epsilon(1e-14));
  CHECK(regularize_singular_values({0.0}, del)[0] == 0.0);
  SuppressionConfig flipped = del;
  flipped.sign_flipped = true;
  CHECK(regularize_singular_values({2.0}, flipped)[0] == doctest::Approx(2.0 * std::exp(-2.0)).epsilon(1e-14));
}

TEST_CASE("property: reweighting is monotone for the shipped configs") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  for (EditMode mode : {EditMode::Delete, EditMode::Add, EditMode::Replace, EditMode::ReconstructOnly}) {
    for (int trial = 0; trial < 200; ++trial) {
      double a = u(rng), b = u(rng);
      if (a < b) std::swap(a, b);
      const auto s = regularize_singular_values({a, b}, SuppressionConfig::for_mode(mode));
      CHECK(s[0] >= s[1]);
    }
  }
}

TEST_CASE("property: identity reweighting makes eot_suppress the identity") {
  std::mt19937_64 rng(5);
  const SuppressionConfig identity{1.0, 0.0, false};
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t words = 1 + rng() % 5;
    const PromptEmbedding p = random_prompt(rng, words);
    std::vector<std::size_t> neg;
    for (std::size_t i = 0; i < words; ++i)
      if (rng() % 2) neg.push_back(i);
    const PromptEmbedding out = eot_suppress(p, spec_of(EditMode::Delete, words, neg), identity);
    CHECK(max_abs_diff(out.matrix, p.matrix) <= 1e-8);
  }
}

TEST_CASE("property: suppression keeps positive rows bitwise and moves only negative and EOT rows") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t words = 2 + rng() % 4;
    const PromptEmbedding p = random_prompt(rng, words);
    const std::size_t neg = rng() % words;
    const EditSpec spec = spec_of(EditMode::Delete, words, {neg});
    const PromptEmbedding out = eot_suppress(p, spec);
    CHECK(rows_identical(out.matrix, p.matrix, 0));
    for (std::size_t w = 0; w < words; ++w)
      if (w != neg) CHECK(rows_identical(out.matrix, p.matrix, w + 1));
    CHECK(row_norm(out.matrix, neg + 1) != doctest::Approx(row_norm(p.matrix, neg + 1)));
    CHECK(out.polarity[neg + 1] == Polarity::Negative);
  }
}

TEST_CASE("eot_suppress picks constants from the mode") {
  std::mt19937_64 rng(7);
  const PromptEmbedding p = random_prompt(rng, 2);
  for (EditMode mode : {EditMode::Delete, EditMode::Add, EditMode::Replace}) {
    const EditSpec spec = spec_of(mode, 2, {1});
    CHECK(identical(eot_suppress(p, spec).matrix, eot_suppress(p, spec, SuppressionConfig::for_mode(mode)).matrix));
  }
}

TEST_CASE("spec overrides replace the mode constants") {
  EditSpec s = spec_of(EditMode::Delete, 2, {0});
  s.overrides.beta = 0.5;
  s.overrides.embed_lr = 0.2;
  const SuppressionConfig c = s.suppression(true);
  CHECK(c.beta == 0.5);
  CHECK(c.alpha == 1.0);
  CHECK(c.sign_flipped);
  CHECK(s.attention().embed_lr == 0.2);
  CHECK(s.attention().lambda_neg == 0.5);
}

TEST_CASE("split_attention groups columns by polarity") {
  std::mt19937_64 rng(8);
  const Tensor map = ops::row_softmax(random_normal(rng, {64, 8}));
  const std::vector<Polarity> mask{Polarity::None, Polarity::Positive, Polarity::Negative, Polarity::Positive,
                                   Polarity::None, Polarity::None,     Polarity::None,     Polarity::None};
  const AttentionSplit s = split_attention(map, mask);
  CHECK(s.pos_cols == std::vector<std::size_t>{1, 3});
  CHECK(s.neg_cols == std::vector<std::size_t>{2});
  CHECK(s.pos_cols.size() + s.neg_cols.size() == 3);
  for (std::size_t r = 0; r < 64; ++r) {
    CHECK(s.pos.at(r, 0) == map.at(r, 1));
    CHECK(s.pos.at(r, 1) == map.at(r, 3));
    CHECK(s.neg.at(r, 0) == map.at(r, 2));
  }
  std::vector<Polarity> all_pos = mask;
  all_pos[2] = Polarity::Positive;
  const AttentionSplit p = split_attention(map, all_pos);
  CHECK(p.neg.empty());
  CHECK(attention_loss(p, p, AttnLossConfig{}).item() == 0.0);
  CHECK_THROWS_AS(split_attention(map, std::vector<Polarity>(5)), ShapeError);
}

TEST_CASE("attention loss arithmetic") {
  // |dpos|^2 = 0.04, |dneg|^2 = 0.1
  const Tensor hp = Tensor::from_rows({{0.2}}), rp = Tensor::from_rows({{0.0}});
  const Tensor hn = Tensor::from_rows({{0.3, 0.1}}), rn = Tensor::from_rows({{0.0, 0.0}});
  CHECK(attention_loss(hp, rp, hn, rn, AttnLossConfig{}).item() == doctest::Approx(-0.01).epsilon(1e-12));
  CHECK(attention_loss(hp, hp, hn, hn, AttnLossConfig{}).item() == 0.0);
  AttnLossConfig pos_only;
  pos_only.lambda_neg = 0.0;
  CHECK(attention_loss(hp, rp, hn, rn, pos_only).item() == doctest::Approx(0.04).epsilon(1e-12));
  CHECK_THROWS_AS(attention_loss(hp, rn, hn, rn, AttnLossConfig{}), ShapeError);
}

TEST_CASE("attention loss gradient matches finite differences") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t rows = 1 + rng() % 10, np = 1 + rng() % 3, nn = 1 + rng() % 3;
    const Tensor rp = random_normal(rng, {rows, np}), rn = random_normal(rng, {rows, nn});
    const aedit::testing::ScalarFn f = [&](const std::vector<Tensor>& x) {
      return attention_loss(x[0], rp, x[1], rn, AttnLossConfig{});
    };
    const std::vector<Tensor> x{random_normal(rng, {rows, np}), random_normal(rng, {rows, nn})};
    CHECK(aedit::testing::relative_error(aedit::testing::tape_gradients(f, x), aedit::testing::numeric_gradients(f, x)) <=
          1e-5);
  }
}

TEST_CASE("property: one gradient step shrinks the positive gap and widens the negative gap") {
  // Quadratic surrogate: the attention maps themselves are the variables.
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor rp = random_normal(rng, {16, 2}), rn = random_normal(rng, {16, 1});
    const Tensor hp = ops::add(rp, random_normal(rng, {16, 2}, 0.1));
    const Tensor hn = ops::add(rn, random_normal(rng, {16, 1}, 0.1));
    const aedit::testing::ScalarFn f = [&](const std::vector<Tensor>& x) {
      return attention_loss(x[0], rp, x[1], rn, AttnLossConfig{});
    };
    const auto g = aedit::testing::tape_gradients(f, {hp, hn});
    const Tensor hp2 = ops::sub(hp, ops::scale(g[0], 0.01)), hn2 = ops::sub(hn, ops::scale(g[1], 0.01));
    CHECK(frobenius_norm(ops::sub(hp2, rp)) < frobenius_norm(ops::sub(hp, rp)));
    CHECK(frobenius_norm(ops::sub(hn2, rn)) > frobenius_norm(ops::sub(hn, rn)));
  }
}

TEST_CASE("prompt update freezes SOT and moves everything else") {
  std::mt19937_64 rng(11);
  const PromptEmbedding p = random_prompt(rng, 2);
  CHECK(identical(update_prompt_embedding(p, Tensor(p.matrix.shape()), 0.01).matrix, p.matrix));
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor g = random_normal(rng, p.matrix.shape());
    const PromptEmbedding q = update_prompt_embedding(p, g, 0.01);
    CHECK(rows_identical(q.matrix, p.matrix, 0));
    for (std::size_t r = 1; r < 8; ++r)
      for (std::size_t c = 0; c < 32; ++c)
        CHECK(q.matrix.at(r, c) == doctest::Approx(p.matrix.at(r, c) - 0.01 * g.at(r, c)).epsilon(1e-15));
  }
  CHECK_THROWS_AS(update_prompt_embedding(p, Tensor(Shape{8, 31}), 0.01), ShapeError);
}

TEST_CASE("edit spec JSON round-trip and strictness") {
  const nlohmann::json j = {{"mode", "replace"},
                            {"target_caption", {3, 5}},
                            {"negative_positions", {1}},
                            {"overrides", {{"alpha", 0.5}}}};
  const EditSpec s = EditSpec::from_json(j);
  CHECK(s.mode == EditMode::Replace);
  CHECK(s.target_caption == std::vector<int>{3, 5});
  CHECK(*s.overrides.alpha == 0.5);
  CHECK(s.to_json() == j);
  CHECK_THROWS_WITH_AS(EditSpec::from_json({{"mode", "delete"}, {"target", {1}}}), doctest::Contains("target"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(EditSpec::from_json({{"mode", "erase"}, {"target_caption", {1}}}), doctest::Contains("mode"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(EditSpec::from_json({{"target_caption", {1}}, {"overrides", {{"gamma", 1}}}}),
                       doctest::Contains("overrides.gamma"), ConfigError);
  CHECK_THROWS_AS(EditSpec::from_json({{"target_caption", "x"}}), ConfigError);
}

TEST_CASE("edit spec validation") {
  CHECK_NOTHROW(spec_of(EditMode::Delete, 2, {1}).validate(6));
  CHECK_NOTHROW(spec_of(EditMode::ReconstructOnly, 2, {}).validate(6));
  CHECK_THROWS_AS(spec_of(EditMode::Delete, 2, {}).validate(6), ConfigError);
  CHECK_THROWS_AS(spec_of(EditMode::Delete, 2, {2}).validate(6), ConfigError);
  CHECK_THROWS_AS(spec_of(EditMode::Delete, 2, {1, 1}).validate(6), ConfigError);
  CHECK_THROWS_AS(spec_of(EditMode::Add, 7, {0}).validate(6), ConfigError);
  EditSpec s = spec_of(EditMode::Add, 2, {0});
  s.overrides.beta = 0.0;
  CHECK_THROWS_AS(s.validate(6), ConfigError);
}
