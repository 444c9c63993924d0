#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "aedit/denoiser.hpp"
#include "aedit/tensor.hpp"

namespace aedit {

enum class EditMode { Delete, Add, Replace, ReconstructOnly };

std::string to_string(EditMode mode);
// Accepts "delete", "add", "replace", "reconstruct-only".
EditMode parse_edit_mode(const std::string& name);

struct SuppressionConfig {
  double beta = 1.0;
  double alpha = 1.0;
  // Uses exp(-alpha * sigma) instead of exp(alpha * sigma).
  bool sign_flipped = false;

  // (1.0, 1.0) for deletion, (1.2, 0.001) for addition and replacement,
  // identity for reconstruct-only.
  static SuppressionConfig for_mode(EditMode mode);
};

struct AttnLossConfig {
  double lambda_pos = 1.0;
  double lambda_neg = 0.5;
  double embed_lr = 0.01;
};

struct EditOverrides {
  std::optional<double> beta, alpha, lambda_pos, lambda_neg, embed_lr;
};

/// Target caption plus the word positions (0-based, caption order) that the
/// edit targets.
struct EditSpec {
  EditMode mode = EditMode::ReconstructOnly;
  std::vector<int> target_caption;
  std::vector<std::size_t> negative_positions;
  EditOverrides overrides;

  // Throws std::invalid_argument naming the offending field.
  void validate(std::size_t max_words) const;
  SuppressionConfig suppression(bool sign_flipped = false) const;
  AttnLossConfig attention(const AttnLossConfig& base = {}) const;

  nlohmann::json to_json() const;
  // Unknown keys and mistyped values are rejected with the key in the message.
  static EditSpec from_json(const nlohmann::json& j);
};

// P' : negative word rows at spec.negative_positions, remaining words positive.
PromptEmbedding classify_tokens(const PromptEmbedding& p, const EditSpec& spec);

/// Negative word rows (caption order) stacked above all EOT rows. `rows[i]`
/// is the prompt row that x row i came from.
struct SuppressionMatrix {
  Tensor x;
  std::vector<std::size_t> rows;
};

SuppressionMatrix build_suppression_matrix(const PromptEmbedding& p);
// Writes the rows of `x_hat` back to the prompt rows they were taken from.
PromptEmbedding splice_rows(const PromptEmbedding& p, const SuppressionMatrix& layout, const Tensor& x_hat);

// sigma_hat_i = beta * exp(+-alpha * sigma_i) * sigma_i.
std::vector<double> regularize_singular_values(const std::vector<double>& sigma, const SuppressionConfig& cfg);

// classify -> stack -> SVD -> reweight -> recompose -> splice.
PromptEmbedding eot_suppress(const PromptEmbedding& p, const EditSpec& spec, const SuppressionConfig& cfg);
PromptEmbedding eot_suppress(const PromptEmbedding& p, const EditSpec& spec);

/// Column groups of a (latent_tokens x L) attention map. A group with no
/// columns is left as an empty tensor.
struct AttentionSplit {
  Tensor pos;
  Tensor neg;
  std::vector<std::size_t> pos_cols;
  std::vector<std::size_t> neg_cols;
};

// Splits the head/block mean map by polarity. Differentiable in the maps.
AttentionSplit split_attention(const AttentionRecord& attn, const std::vector<Polarity>& mask);
AttentionSplit split_attention(const Tensor& mean_map, const std::vector<Polarity>& mask);

// lambda_pos * |A_hat_pos - A_pos|^2 - lambda_neg * |A_hat_neg - A_neg|^2.
// Empty groups contribute zero. Differentiable in the hat maps.
Tensor attention_loss(const AttentionSplit& hat, const AttentionSplit& ref, const AttnLossConfig& cfg);
Tensor attention_loss(const Tensor& hat_pos, const Tensor& ref_pos, const Tensor& hat_neg, const Tensor& ref_neg,
                      const AttnLossConfig& cfg);

// Word and EOT rows move by -embed_lr * grad; the SOT row is kept.
PromptEmbedding update_prompt_embedding(const PromptEmbedding& p, const Tensor& grad, double embed_lr);

}  // namespace aedit
