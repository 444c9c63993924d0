#include "aedit/denoiser.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>

#include "aedit/config.hpp"
#include "aedit/ops.hpp"
#include "aedit/serialize.hpp"

namespace aedit {

nlohmann::json DenoiserConfig::to_json() const {
  return {{"latent_tokens", latent_tokens}, {"patch_dim", patch_dim},   {"hidden", hidden},
          {"embed_dim", embed_dim},         {"heads", heads},           {"ffn_hidden", ffn_hidden},
          {"blocks", blocks},               {"prompt_len", prompt_len}, {"vocab_size", vocab_size},
          {"train_steps", train_steps},     {"beta_start", beta_start},   {"beta_end", beta_end},
          {"data_variance", data_variance}};
}

DenoiserConfig DenoiserConfig::from_json(const nlohmann::json& j) {
  using config::read;
  config::require_keys(j,
                       {"latent_tokens", "patch_dim", "hidden", "embed_dim", "heads", "ffn_hidden", "blocks",
                        "prompt_len", "vocab_size", "train_steps", "beta_start", "beta_end", "data_variance"},
                       "model.");
  DenoiserConfig c;
  read(j, "latent_tokens", c.latent_tokens, "model.");
  read(j, "patch_dim", c.patch_dim, "model.");
  read(j, "hidden", c.hidden, "model.");
  read(j, "embed_dim", c.embed_dim, "model.");
  read(j, "heads", c.heads, "model.");
  read(j, "ffn_hidden", c.ffn_hidden, "model.");
  read(j, "blocks", c.blocks, "model.");
  read(j, "prompt_len", c.prompt_len, "model.");
  read(j, "vocab_size", c.vocab_size, "model.");
  read(j, "train_steps", c.train_steps, "model.");
  read(j, "beta_start", c.beta_start, "model.");
  read(j, "beta_end", c.beta_end, "model.");
  read(j, "data_variance", c.data_variance, "model.");
  if (c.heads == 0 || c.hidden % c.heads != 0) throw ConfigError("config key 'model.heads' must divide 'model.hidden'");
  if (c.prompt_len < 3) throw ConfigError("config key 'model.prompt_len' must be at least 3");
  if (c.blocks < 1) throw ConfigError("config key 'model.blocks' must be at least 1");
  if (c.train_steps < 2) throw ConfigError("config key 'model.train_steps' must be at least 2");
  if (!(c.data_variance > 0.0)) throw ConfigError("config key 'model.data_variance' must be positive");
  return c;
}

std::size_t PromptEmbedding::word_count() const {
  std::size_t n = 0;
  for (TokenRole r : roles) n += r == TokenRole::Word;
  return n;
}

void PromptEmbedding::validate() const {
  const std::size_t len = roles.size();
  if (matrix.rank() != 2 || matrix.rows() != len) throw std::invalid_argument("prompt matrix/roles size mismatch");
  if (polarity.size() != len) throw std::invalid_argument("prompt polarity size mismatch");
  if (len < 2 || roles[0] != TokenRole::Sot) throw std::invalid_argument("prompt row 0 must be SOT");
  std::size_t i = 1;
  while (i < len && roles[i] == TokenRole::Word) ++i;
  if (i == len) throw std::invalid_argument("prompt needs at least one EOT row");
  for (; i < len; ++i)
    if (roles[i] != TokenRole::Eot) throw std::invalid_argument("prompt rows after the words must all be EOT");
  for (std::size_t r = 0; r < len; ++r)
    if (roles[r] != TokenRole::Word && polarity[r] != Polarity::None) {
      throw std::invalid_argument("only word rows may carry a positive/negative tag");
    }
}

Tensor AttentionRecord::mean_map() const {
  if (maps.empty()) throw std::logic_error("empty attention record");
  Tensor acc = maps[0];
  for (std::size_t i = 1; i < maps.size(); ++i) acc = ops::add(acc, maps[i]);
  return ops::scale(acc, 1.0 / static_cast<double>(maps.size()));
}

std::vector<Tensor*> DenoiserParams::all() {
  std::vector<Tensor*> out{&token_table, &time_embedding, &position_embedding};
  for (auto& b : blocks) {
    for (Tensor* t : {&b.latent_proj, &b.latent_bias, &b.query, &b.key, &b.value, &b.out, &b.position_gate, &b.mix_in, &b.mix,
                      &b.mix_out, &b.ff_in, &b.ff_in_bias, &b.ff_out, &b.ff_out_bias})
      out.push_back(t);
  }
  out.push_back(&out_proj);
  out.push_back(&out_bias);
  out.push_back(&skip_gain);
  return out;
}

std::vector<const Tensor*> DenoiserParams::all() const {
  std::vector<const Tensor*> out;
  for (Tensor* t : const_cast<DenoiserParams*>(this)->all()) out.push_back(t);
  return out;
}

namespace {

Tensor gaussian(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(rows * cols);
  for (double& x : v) x = dist(rng);
  return Tensor::matrix(rows, cols, std::move(v));
}

Tensor zeros(std::size_t rows, std::size_t cols) { return Tensor(Shape{rows, cols}, 0.0); }

// Shapes every parameter must have under `c`, in DenoiserParams::all() order.
std::vector<Shape> expected_shapes(const DenoiserConfig& c) {
  std::vector<Shape> s{{c.vocab_size + 2, c.embed_dim},
                       {static_cast<std::size_t>(c.train_steps), c.hidden},
                       {c.latent_tokens, c.hidden}};
  for (std::size_t b = 0; b < c.blocks; ++b) {
    s.insert(s.end(), {{c.patch_dim, c.hidden},
                       {1, c.hidden},
                       {c.hidden, c.hidden},
                       {c.embed_dim, c.hidden},
                       {c.embed_dim, c.hidden},
                       {c.hidden, c.hidden},
                       {c.latent_tokens, c.hidden},
                       {c.latent_tokens, c.hidden},
                       {c.hidden, c.hidden},
                       {c.latent_tokens, c.hidden},
                       {c.hidden, c.ffn_hidden},
                       {1, c.ffn_hidden},
                       {c.ffn_hidden, c.hidden},
                       {1, c.hidden}});
  }
  s.push_back({c.hidden, c.patch_dim});
  s.push_back({1, c.patch_dim});
  s.push_back({1, c.patch_dim});
  return s;
}

DenoiserParams init_params(const DenoiserConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto inv_sqrt = [](std::size_t n) { return 1.0 / std::sqrt(static_cast<double>(n)); };
  DenoiserParams p;
  p.token_table = gaussian(rng, c.vocab_size + 2, c.embed_dim, inv_sqrt(c.embed_dim));
  p.time_embedding = gaussian(rng, static_cast<std::size_t>(c.train_steps), c.hidden, 0.02);
  p.position_embedding = gaussian(rng, c.latent_tokens, c.hidden, 0.5);
  for (std::size_t b = 0; b < c.blocks; ++b) {
    BlockParams bp;
    bp.latent_proj = gaussian(rng, c.patch_dim, c.hidden, inv_sqrt(c.patch_dim));
    bp.latent_bias = zeros(1, c.hidden);
    bp.query = gaussian(rng, c.hidden, c.hidden, inv_sqrt(c.hidden));
    bp.key = gaussian(rng, c.embed_dim, c.hidden, inv_sqrt(c.embed_dim));
    bp.value = gaussian(rng, c.embed_dim, c.hidden, inv_sqrt(c.embed_dim));
    bp.out = gaussian(rng, c.hidden, c.hidden, 0.5 * inv_sqrt(c.hidden));
    bp.position_gate = gaussian(rng, c.latent_tokens, c.hidden, 0.5);
    for (double& g : bp.position_gate.mutable_values()) g += 1.0;
    bp.mix_in = gaussian(rng, c.latent_tokens, c.hidden, 1.0);
    bp.mix = gaussian(rng, c.hidden, c.hidden, 0.5 * inv_sqrt(c.hidden));
    bp.mix_out = gaussian(rng, c.latent_tokens, c.hidden, 1.0);
    bp.ff_in = gaussian(rng, c.hidden, c.ffn_hidden, std::sqrt(2.0) * inv_sqrt(c.hidden));
    bp.ff_in_bias = zeros(1, c.ffn_hidden);
    bp.ff_out = gaussian(rng, c.ffn_hidden, c.hidden, 0.5 * inv_sqrt(c.ffn_hidden));
    bp.ff_out_bias = zeros(1, c.hidden);
    p.blocks.push_back(std::move(bp));
  }
  // Zero head: an untrained model predicts eps = 0.
  p.out_proj = zeros(c.hidden, c.patch_dim);
  p.out_bias = zeros(1, c.patch_dim);
  p.skip_gain = zeros(1, c.patch_dim);
  return p;
}

}  // namespace

Denoiser::Denoiser(DenoiserConfig config, std::uint64_t seed)
    : Denoiser(config, init_params(config, seed)) {}

Denoiser::Denoiser(DenoiserConfig config, DenoiserParams params)
    : config_(config),
      params_(std::move(params)),
      alpha_bar_(build_schedule(config.train_steps, config.beta_start, config.beta_end).alpha_bar) {
  const auto shapes = expected_shapes(config_);
  const auto tensors = params_.all();
  if (tensors.size() != shapes.size()) throw std::invalid_argument("parameter count does not match config");
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (tensors[i]->shape() != shapes[i]) {
      throw ShapeError("parameter " + std::to_string(i) + " has shape " + shape_string(tensors[i]->shape()) +
                       ", expected " + shape_string(shapes[i]));
    }
  }
}

PromptEmbedding Denoiser::embed_prompt(std::span<const int> caption) const {
  const std::size_t len = config_.prompt_len, d = config_.embed_dim;
  if (caption.size() > len - 2) {
    throw std::invalid_argument("caption of " + std::to_string(caption.size()) + " tokens exceeds " +
                                std::to_string(len - 2));
  }
  PromptEmbedding p;
  p.roles.assign(len, TokenRole::Eot);
  p.polarity.assign(len, Polarity::None);
  p.roles[0] = TokenRole::Sot;
  std::vector<std::size_t> rows(len, config_.eot_id());
  rows[0] = config_.sot_id();
  for (std::size_t i = 0; i < caption.size(); ++i) {
    if (caption[i] < 0 || static_cast<std::size_t>(caption[i]) >= config_.vocab_size) {
      throw std::invalid_argument("unknown token id " + std::to_string(caption[i]));
    }
    rows[i + 1] = static_cast<std::size_t>(caption[i]);
    p.roles[i + 1] = TokenRole::Word;
  }
  std::vector<double> m(len * d);
  const auto table = params_.token_table.values();
  for (std::size_t r = 0; r < len; ++r) std::memcpy(&m[r * d], &table[rows[r] * d], d * sizeof(double));
  p.matrix = Tensor::matrix(len, d, std::move(m));
  return p;
}

void Denoiser::check_inputs(const Tensor& z, int t, const Tensor& cond) const {
  if (z.shape() != config_.latent_shape()) {
    throw ShapeError("latent shape " + shape_string(z.shape()) + ", expected " +
                     shape_string(config_.latent_shape()));
  }
  if (cond.shape() != Shape{config_.prompt_len, config_.embed_dim}) {
    throw ShapeError("condition shape " + shape_string(cond.shape()) + ", expected [" +
                     std::to_string(config_.prompt_len) + "x" + std::to_string(config_.embed_dim) + "]");
  }
  if (t < 1 || t > config_.train_steps) {
    throw std::out_of_range("timestep " + std::to_string(t) + " outside [1, " + std::to_string(config_.train_steps) +
                            "]");
  }
}

Prediction Denoiser::forward(const Tensor& z, int t, const Tensor& cond) const {
  check_inputs(z, t, cond);
  const Tensor time_row = ops::slice(params_.time_embedding, 0, static_cast<std::size_t>(t - 1), 1);
  return forward_with(params_, time_row, z, cond, t);
}

Tensor Denoiser::predict(const Tensor& z, int model_t, const Tensor& cond) const {
  return forward(z, model_t, cond).eps;
}

Prediction Denoiser::forward_with(const DenoiserParams& w, const Tensor& time_row, const Tensor& z,
                                  const Tensor& cond, int t) const {
  const std::size_t heads = config_.heads;
  const std::size_t head_dim = config_.hidden / heads;
  const double score_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  Prediction out;
  out.attention.timestep = t;
  out.attention.blocks = config_.blocks;
  out.attention.heads = heads;

  const Preconditioning pre = preconditioning(t);
  const Tensor z_in = ops::scale(z, pre.in);
  const Tensor ones(Shape{config_.latent_tokens, 1}, 1.0);
  const Tensor pool(Shape{1, config_.latent_tokens}, 1.0 / std::sqrt(static_cast<double>(config_.latent_tokens)));
  const Tensor mean_pool(Shape{1, config_.latent_tokens}, 1.0 / static_cast<double>(config_.latent_tokens));
  Tensor h = ops::add(w.position_embedding, time_row);
  for (std::size_t b = 0; b < w.blocks.size(); ++b) {
    const BlockParams& bp = w.blocks[b];
    h = ops::add(h, ops::add(ops::matmul(z_in, bp.latent_proj), bp.latent_bias));

    const Tensor q = ops::matmul(h, bp.query);
    const Tensor k = ops::matmul(cond, bp.key);
    const Tensor v = ops::matmul(cond, bp.value);
    std::vector<Tensor> head_out;
    head_out.reserve(heads);
    for (std::size_t hd = 0; hd < heads; ++hd) {
      const Tensor qh = ops::slice(q, 1, hd * head_dim, head_dim);
      const Tensor kh = ops::slice(k, 1, hd * head_dim, head_dim);
      const Tensor vh = ops::slice(v, 1, hd * head_dim, head_dim);
      Tensor attn = ops::row_softmax(ops::scale(ops::matmul(qh, ops::transpose(kh)), score_scale));
      head_out.push_back(ops::matmul(attn, vh));
      out.attention.maps.push_back(std::move(attn));
    }
    h = ops::add(h, ops::mul(ops::matmul(ops::concat(head_out, 1), bp.out), bp.position_gate));

    // Global mixing: position-weighted pooling over all patches, broadcast
    // back with position-dependent weights. Lets a patch see the whole latent.
    const Tensor pooled = ops::matmul(pool, ops::mul(h, bp.mix_in));
    h = ops::add(h, ops::mul(ops::matmul(ones, ops::matmul(pooled, bp.mix)), bp.mix_out));

    const Tensor ff = ops::relu(ops::add(ops::matmul(h, bp.ff_in), bp.ff_in_bias));
    h = ops::add(h, ops::add(ops::matmul(ff, bp.ff_out), bp.ff_out_bias));

    if (b == 0) out.features = ops::matmul(mean_pool, h);
  }
  // Gain-weighted linear shortcut plus a head with a unit-scale target.
  const Tensor skip = ops::matmul(ones, ops::scale(w.skip_gain, pre.skip));
  const Tensor head = ops::add(ops::matmul(h, w.out_proj), w.out_bias);
  out.eps = ops::add(ops::scale(head, pre.out), ops::mul(z, skip));
  return out;
}

Denoiser::Preconditioning Denoiser::preconditioning(int t) const {
  const double abar = alpha_bar_.at(static_cast<std::size_t>(t));
  const double var = config_.data_variance;
  const double total = abar * var + (1.0 - abar);
  return {1.0 / std::sqrt(total), std::sqrt(1.0 - abar) / total, std::sqrt(abar * var / total)};
}

std::uint64_t Denoiser::checksum() const {
  std::uint64_t hash = 1469598103934665603ull;
  for (const Tensor* t : params_.all()) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(t->values().data());
    for (std::size_t i = 0; i < t->size() * sizeof(double); ++i) {
      hash ^= bytes[i];
      hash *= 1099511628211ull;
    }
  }
  return hash;
}

void Denoiser::save(const std::filesystem::path& path, const nlohmann::json& extra) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io::FormatError("cannot open " + path.string() + " for writing");
  nlohmann::json header = extra;
  header["config"] = config_.to_json();
  io::write_magic(out, "AEDN");
  io::write_block(out, header.dump());
  for (const Tensor* t : params_.all()) io::write_tensor(out, *t);
  if (!out) throw io::FormatError("failed writing checkpoint " + path.string());
}

Denoiser Denoiser::load(const std::filesystem::path& path, nlohmann::json* header) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io::FormatError("cannot open checkpoint " + path.string());
  io::expect_magic(in, "AEDN");
  const nlohmann::json h = nlohmann::json::parse(io::read_block(in));
  if (!h.contains("config")) throw io::FormatError("checkpoint header lacks a config block");
  const DenoiserConfig config = DenoiserConfig::from_json(h.at("config"));
  DenoiserParams params;
  params.blocks.resize(config.blocks);
  for (Tensor* t : params.all()) *t = io::read_tensor(in);
  if (header) *header = h;
  return Denoiser(config, std::move(params));
}

}  // namespace aedit
