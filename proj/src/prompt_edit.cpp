#include "aedit/prompt_edit.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "aedit/config.hpp"
#include "aedit/linalg.hpp"
#include "aedit/ops.hpp"

namespace aedit {

std::string to_string(EditMode mode) {
  switch (mode) {
    case EditMode::Delete: return "delete";
    case EditMode::Add: return "add";
    case EditMode::Replace: return "replace";
    case EditMode::ReconstructOnly: return "reconstruct-only";
  }
  return "?";
}

EditMode parse_edit_mode(const std::string& name) {
  for (EditMode m : {EditMode::Delete, EditMode::Add, EditMode::Replace, EditMode::ReconstructOnly})
    if (to_string(m) == name) return m;
  throw ConfigError("config key 'mode' has unknown value '" + name + "'");
}

SuppressionConfig SuppressionConfig::for_mode(EditMode mode) {
  switch (mode) {
    case EditMode::Delete: return {1.0, 1.0, false};
    case EditMode::Add:
    case EditMode::Replace: return {1.2, 0.001, false};
    case EditMode::ReconstructOnly: return {1.0, 0.0, false};
  }
  return {};
}

void EditSpec::validate(std::size_t max_words) const {
  if (target_caption.empty() || target_caption.size() > max_words) {
    throw ConfigError("config key 'target_caption' must hold 1.." + std::to_string(max_words) + " tokens");
  }
  if (negative_positions.empty() && mode != EditMode::ReconstructOnly) {
    throw ConfigError("config key 'negative_positions' is empty for a " + to_string(mode) + " edit");
  }
  for (std::size_t i = 0; i < negative_positions.size(); ++i) {
    if (negative_positions[i] >= target_caption.size()) {
      throw ConfigError("config key 'negative_positions' entry " + std::to_string(negative_positions[i]) +
                        " is not a caption position");
    }
    for (std::size_t j = 0; j < i; ++j)
      if (negative_positions[j] == negative_positions[i]) throw ConfigError("config key 'negative_positions' repeats an entry");
  }
  if (overrides.beta && !(*overrides.beta > 0.0)) throw ConfigError("config key 'overrides.beta' must be positive");
  if (overrides.lambda_pos && *overrides.lambda_pos < 0.0) throw ConfigError("config key 'overrides.lambda_pos' must be >= 0");
  if (overrides.lambda_neg && *overrides.lambda_neg < 0.0) throw ConfigError("config key 'overrides.lambda_neg' must be >= 0");
}

SuppressionConfig EditSpec::suppression(bool sign_flipped) const {
  SuppressionConfig c = SuppressionConfig::for_mode(mode);
  if (overrides.beta) c.beta = *overrides.beta;
  if (overrides.alpha) c.alpha = *overrides.alpha;
  c.sign_flipped = sign_flipped;
  return c;
}

AttnLossConfig EditSpec::attention(const AttnLossConfig& base) const {
  AttnLossConfig c = base;
  if (overrides.lambda_pos) c.lambda_pos = *overrides.lambda_pos;
  if (overrides.lambda_neg) c.lambda_neg = *overrides.lambda_neg;
  if (overrides.embed_lr) c.embed_lr = *overrides.embed_lr;
  return c;
}

nlohmann::json EditSpec::to_json() const {
  nlohmann::json j{{"mode", to_string(mode)},
                   {"target_caption", target_caption},
                   {"negative_positions", negative_positions}};
  nlohmann::json o = nlohmann::json::object();
  if (overrides.beta) o["beta"] = *overrides.beta;
  if (overrides.alpha) o["alpha"] = *overrides.alpha;
  if (overrides.lambda_pos) o["lambda_pos"] = *overrides.lambda_pos;
  if (overrides.lambda_neg) o["lambda_neg"] = *overrides.lambda_neg;
  if (overrides.embed_lr) o["embed_lr"] = *overrides.embed_lr;
  if (!o.empty()) j["overrides"] = o;
  return j;
}

EditSpec EditSpec::from_json(const nlohmann::json& j) {
  config::require_keys(j, {"mode", "target_caption", "negative_positions", "overrides"}, "");
  EditSpec s;
  std::string mode = "reconstruct-only";
  config::read(j, "mode", mode, "");
  s.mode = parse_edit_mode(mode);
  if (!j.contains("target_caption")) throw ConfigError("config key 'target_caption' is missing");
  config::read(j, "target_caption", s.target_caption, "");
  std::vector<long long> negatives;
  config::read(j, "negative_positions", negatives, "");
  for (long long n : negatives) {
    if (n < 0) throw ConfigError("config key 'negative_positions' has a negative entry");
    s.negative_positions.push_back(static_cast<std::size_t>(n));
  }
  if (j.contains("overrides")) {
    const auto& o = j.at("overrides");
    config::require_keys(o, {"beta", "alpha", "lambda_pos", "lambda_neg", "embed_lr"}, "overrides.");
    auto opt = [&](const char* key, std::optional<double>& out) {
      if (!o.contains(key)) return;
      double v = 0.0;
      config::read(o, key, v, "overrides.");
      out = v;
    };
    opt("beta", s.overrides.beta);
    opt("alpha", s.overrides.alpha);
    opt("lambda_pos", s.overrides.lambda_pos);
    opt("lambda_neg", s.overrides.lambda_neg);
    opt("embed_lr", s.overrides.embed_lr);
  }
  return s;
}

PromptEmbedding classify_tokens(const PromptEmbedding& p, const EditSpec& spec) {
  PromptEmbedding out = p;
  const std::size_t words = p.word_count();
  for (std::size_t r = 0; r < out.length(); ++r)
    out.polarity[r] = out.roles[r] == TokenRole::Word ? Polarity::Positive : Polarity::None;
  for (std::size_t pos : spec.negative_positions) {
    if (pos >= words) {
      throw std::out_of_range("negative position " + std::to_string(pos) + " outside " + std::to_string(words) +
                              " word rows");
    }
    out.polarity[pos + 1] = Polarity::Negative;
  }
  return out;
}

SuppressionMatrix build_suppression_matrix(const PromptEmbedding& p) {
  SuppressionMatrix m;
  for (std::size_t r = 0; r < p.length(); ++r)
    if (p.roles[r] == TokenRole::Word && p.polarity[r] == Polarity::Negative) m.rows.push_back(r);
  for (std::size_t r = 0; r < p.length(); ++r)
    if (p.roles[r] == TokenRole::Eot) m.rows.push_back(r);
  if (m.rows.empty()) throw std::invalid_argument("prompt has neither negative nor EOT rows");
  std::vector<Tensor> parts;
  for (std::size_t r : m.rows) parts.push_back(ops::slice(p.matrix, 0, r, 1));
  m.x = ops::concat(parts, 0).detach();
  return m;
}

PromptEmbedding splice_rows(const PromptEmbedding& p, const SuppressionMatrix& layout, const Tensor& x_hat) {
  if (x_hat.shape() != layout.x.shape()) throw ShapeError("spliced matrix shape " + shape_string(x_hat.shape()));
  PromptEmbedding out = p;
  out.matrix = p.matrix.detach();
  auto dst = out.matrix.mutable_values();
  const std::size_t d = p.matrix.cols();
  for (std::size_t i = 0; i < layout.rows.size(); ++i)
    for (std::size_t c = 0; c < d; ++c) dst[layout.rows[i] * d + c] = x_hat[i * d + c];
  return out;
}

std::vector<double> regularize_singular_values(const std::vector<double>& sigma, const SuppressionConfig& cfg) {
  std::vector<double> out(sigma.size());
  const double rate = cfg.sign_flipped ? -cfg.alpha : cfg.alpha;
  for (std::size_t i = 0; i < sigma.size(); ++i) out[i] = cfg.beta * std::exp(rate * sigma[i]) * sigma[i];
  return out;
}

PromptEmbedding eot_suppress(const PromptEmbedding& p, const EditSpec& spec, const SuppressionConfig& cfg) {
  const PromptEmbedding classified = classify_tokens(p, spec);
  const SuppressionMatrix layout = build_suppression_matrix(classified);
  const Svd f = svd(layout.x);
  const Tensor x_hat = svd_compose(f.u, regularize_singular_values(f.sigma, cfg), f.v);
  return splice_rows(classified, layout, x_hat);
}

PromptEmbedding eot_suppress(const PromptEmbedding& p, const EditSpec& spec) {
  return eot_suppress(p, spec, spec.suppression());
}

namespace {

Tensor select_columns(const Tensor& map, const std::vector<std::size_t>& cols) {
  if (cols.empty()) return {};
  std::vector<double> s(map.cols() * cols.size(), 0.0);
  for (std::size_t j = 0; j < cols.size(); ++j) s[cols[j] * cols.size() + j] = 1.0;
  return ops::matmul(map, Tensor::matrix(map.cols(), cols.size(), std::move(s)));
}

}  // namespace

AttentionSplit split_attention(const Tensor& mean_map, const std::vector<Polarity>& mask) {
  if (mean_map.rank() != 2 || mean_map.cols() != mask.size()) {
    throw ShapeError("attention map " + shape_string(mean_map.shape()) + " does not match a mask of " +
                     std::to_string(mask.size()) + " rows");
  }
  AttentionSplit s;
  for (std::size_t c = 0; c < mask.size(); ++c) {
    if (mask[c] == Polarity::Positive) s.pos_cols.push_back(c);
    if (mask[c] == Polarity::Negative) s.neg_cols.push_back(c);
  }
  s.pos = select_columns(mean_map, s.pos_cols);
  s.neg = select_columns(mean_map, s.neg_cols);
  return s;
}

AttentionSplit split_attention(const AttentionRecord& attn, const std::vector<Polarity>& mask) {
  return split_attention(attn.mean_map(), mask);
}

Tensor attention_loss(const Tensor& hat_pos, const Tensor& ref_pos, const Tensor& hat_neg, const Tensor& ref_neg,
                      const AttnLossConfig& cfg) {
  if (hat_pos.shape() != ref_pos.shape() || hat_neg.shape() != ref_neg.shape()) {
    throw ShapeError("attention loss groups differ in shape");
  }
  Tensor loss = Tensor::scalar(0.0);
  if (!hat_pos.empty()) {
    loss = ops::add(loss, ops::scale(ops::squared_frobenius_norm(ops::sub(hat_pos, ref_pos)), cfg.lambda_pos));
  }
  if (!hat_neg.empty()) {
    loss = ops::add(loss, ops::scale(ops::squared_frobenius_norm(ops::sub(hat_neg, ref_neg)), -cfg.lambda_neg));
  }
  return loss;
}

Tensor attention_loss(const AttentionSplit& hat, const AttentionSplit& ref, const AttnLossConfig& cfg) {
  if (hat.pos_cols != ref.pos_cols || hat.neg_cols != ref.neg_cols) {
    throw std::invalid_argument("attention splits use different masks");
  }
  return attention_loss(hat.pos, ref.pos, hat.neg, ref.neg, cfg);
}

PromptEmbedding update_prompt_embedding(const PromptEmbedding& p, const Tensor& grad, double embed_lr) {
  if (grad.shape() != p.matrix.shape()) {
    throw ShapeError("gradient shape " + shape_string(grad.shape()) + " vs prompt " + shape_string(p.matrix.shape()));
  }
  PromptEmbedding out = p;
  out.matrix = p.matrix.detach();
  auto v = out.matrix.mutable_values();
  const std::size_t d = p.matrix.cols();
  for (std::size_t r = 0; r < p.length(); ++r) {
    if (p.roles[r] == TokenRole::Sot) continue;
    for (std::size_t c = 0; c < d; ++c) v[r * d + c] -= embed_lr * grad[r * d + c];
  }
  require_finite(v, "prompt embedding update");
  return out;
}

}  // namespace aedit
