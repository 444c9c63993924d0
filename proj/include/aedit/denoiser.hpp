#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "json.hpp"

#include "aedit/diffusion.hpp"
#include "aedit/tensor.hpp"

namespace aedit {

struct DenoiserConfig {
  std::size_t latent_tokens = 64;  // 32 x 32 latent as 8 x 8 patches
  std::size_t patch_dim = 16;      // 4 x 4 cells per patch
  std::size_t hidden = 64;
  std::size_t embed_dim = 32;
  std::size_t heads = 4;
  std::size_t ffn_hidden = 64;
  std::size_t blocks = 2;
  std::size_t prompt_len = 8;
  std::size_t vocab_size = 16;
  int train_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  double data_variance = 2.0;  // per-cell latent variance assumed by the input/output scaling

  std::size_t sot_id() const { return vocab_size; }
  std::size_t eot_id() const { return vocab_size + 1; }
  Shape latent_shape() const { return {latent_tokens, patch_dim}; }

  nlohmann::json to_json() const;
  static DenoiserConfig from_json(const nlohmann::json& j);
};

enum class TokenRole : std::uint8_t { Sot, Word, Eot };
enum class Polarity : std::uint8_t { None, Positive, Negative };

/// Fixed-length prompt embedding [SOT, words..., EOT...] with per-row roles
/// and the positive/negative edit mask.
struct PromptEmbedding {
  Tensor matrix;  // prompt_len x embed_dim
  std::vector<TokenRole> roles;
  std::vector<Polarity> polarity;

  std::size_t length() const { return roles.size(); }
  std::size_t word_count() const;
  // Throws std::invalid_argument when the layout invariants are broken.
  void validate() const;
};

/// Cross-attention probabilities of one forward pass: one (latent_tokens x
/// prompt_len) row-stochastic map per block and head, index block * heads + head.
struct AttentionRecord {
  int timestep = 0;
  std::size_t blocks = 0;
  std::size_t heads = 0;
  std::vector<Tensor> maps;

  const Tensor& map(std::size_t block, std::size_t head) const { return maps.at(block * heads + head); }
  // Mean over all blocks and heads; differentiable when the maps are tracked.
  Tensor mean_map() const;
};

struct BlockParams {
  Tensor latent_proj, latent_bias;
  Tensor query, key, value, out;
  Tensor position_gate;  // latent_tokens x hidden, scales the attention output per position
  Tensor mix_in, mix, mix_out;  // global token mixing: pooling weights, channel map, broadcast weights
  Tensor ff_in, ff_in_bias, ff_out, ff_out_bias;
};

struct DenoiserParams {
  Tensor token_table;     // (vocab_size + 2) x embed_dim; SOT and EOT rows last
  Tensor time_embedding;  // train_steps x hidden, row t - 1 for timestep t
  Tensor position_embedding;
  std::vector<BlockParams> blocks;
  Tensor out_proj, out_bias;
  Tensor skip_gain;  // 1 x patch_dim

  // Fixed order used by checkpoints and the optimizer.
  std::vector<Tensor*> all();
  std::vector<const Tensor*> all() const;
};

struct Prediction {
  Tensor eps;
  AttentionRecord attention;
  Tensor features;  // 1 x hidden, token-mean of the first block's output
};

/// Cross-attention noise predictor eps(z_t, t, cond).
class Denoiser : public NoisePredictor {
 public:
  Denoiser(DenoiserConfig config, std::uint64_t seed);
  Denoiser(DenoiserConfig config, DenoiserParams params);

  const DenoiserConfig& config() const { return config_; }
  const DenoiserParams& params() const { return params_; }
  DenoiserParams& mutable_params() { return params_; }

  // [SOT, caption tokens, EOT padding]; an empty caption is the null text.
  PromptEmbedding embed_prompt(std::span<const int> caption) const;
  PromptEmbedding null_prompt() const { return embed_prompt({}); }

  // z: latent_tokens x patch_dim, 1 <= t <= train_steps, cond: prompt_len x
  // embed_dim. z and cond may be tape-tracked.
  Prediction forward(const Tensor& z, int t, const Tensor& cond) const;
  Tensor predict(const Tensor& z, int model_t, const Tensor& cond) const override;

  // Forward with externally supplied weights (e.g. tape leaves) and time row.
  Prediction forward_with(const DenoiserParams& weights, const Tensor& time_row, const Tensor& z,
                          const Tensor& cond, int t) const;

  // Input, shortcut and head scales at timestep t.
  struct Preconditioning {
    double in, skip, out;
  };
  Preconditioning preconditioning(int t) const;

  // FNV-1a over all parameter bytes.
  std::uint64_t checksum() const;

  void save(const std::filesystem::path& path, const nlohmann::json& extra = nlohmann::json::object()) const;
  static Denoiser load(const std::filesystem::path& path, nlohmann::json* header = nullptr);

 private:
  void check_inputs(const Tensor& z, int t, const Tensor& cond) const;

  DenoiserConfig config_;
  DenoiserParams params_;
  std::vector<double> alpha_bar_;  // training schedule, index = timestep
};

}  // namespace aedit
