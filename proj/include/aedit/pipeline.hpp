#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "aedit/denoiser.hpp"
#include "aedit/diffusion.hpp"
#include "aedit/nulltext.hpp"
#include "aedit/prompt_edit.hpp"

namespace aedit {

struct EditRunConfig {
  ScheduleConfig schedule;
  double w_invert = 1.0;
  double w_denoise = 7.5;
  double eta = 0.01;
  int inner_iters = 10;
  int max_halvings = 3;
  AttnLossConfig attention;
  bool suppression_sign_flipped = false;
  InversionFormula inversion_formula = InversionFormula::Exact;
  std::uint64_t seed = 0;
  bool null_opt_enabled = true;
  bool eot_sup_enabled = true;
  bool attn_loss_enabled = true;

  NullOptConfig null_opt() const { return {w_denoise, eta, inner_iters, max_halvings}; }

  nlohmann::json to_json() const;
  // Strict: unknown keys and wrong types raise ConfigError naming the key.
  static EditRunConfig from_json(const nlohmann::json& j);
};

// Failure inside one pipeline stage ("inversion", "null-optimization",
// "eot-suppression", "denoising", "reconstruction").
class PipelineError : public std::runtime_error {
 public:
  PipelineError(std::string stage, const std::string& what)
      : std::runtime_error("stage " + stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct StepDiagnostics {
  int t = 0;
  double null_loss = 0.0;  // final inner loss of the null optimization (0 when disabled)
  double attn_loss = 0.0;  // attention loss before the embedding update (0 when disabled)
};

struct EditResult {
  Tensor edited;
  Tensor reconstruction;  // same nulls, unmodified prompt
  LatentTrajectory trajectory;
  NullTextSet nulls;
  PromptEmbedding prompt_before;   // P' (target caption with roles/polarity)
  PromptEmbedding prompt_suppressed;  // P-hat before any attention-loss update
  PromptEmbedding prompt_after;    // P-hat after the last update
  std::vector<NullOptStep> null_steps;
  std::vector<StepDiagnostics> steps;  // t = T..1
  double seconds = 0.0;
};

// Everything up to and including the null-text stage. The later stages only
// read it, so ablations that differ downstream of it can share one.
struct EditPrep {
  PromptEmbedding prompt;  // P' with roles/polarity
  LatentTrajectory trajectory;
  NullTextSet nulls;
  std::vector<NullOptStep> null_steps;  // empty when null optimization is off
  double seconds = 0.0;
};

EditPrep prepare_edit(const Denoiser& model, const Tensor& z0, const EditSpec& spec, const EditRunConfig& cfg);
// Suppression, guided denoising and the reconstruction branch. `cfg` must
// agree with the one `prep` was built with on schedule and null settings.
EditResult finish_edit(const Denoiser& model, const EditPrep& prep, const EditSpec& spec, const EditRunConfig& cfg);

/// Inversion -> null-text optimization -> EOT suppression -> guided
/// denoising with attention-loss refinement. A reconstruct-only spec skips
/// suppression and refinement.
EditResult edit(const Denoiser& model, const Tensor& z0, const EditSpec& spec, const EditRunConfig& cfg);

struct FidelityReport {
  Tensor latent;
  double relative_mse = 0.0;
  EditResult run;
};

// Full inversion + null optimization + denoising with the unmodified prompt.
FidelityReport reconstruct_only(const Denoiser& model, const Tensor& z0, const std::vector<int>& caption,
                                const EditRunConfig& cfg);

// Generation from fresh Gaussian noise (seeded) with a constant null.
Tensor regenerate(const Denoiser& model, const std::vector<int>& caption, std::uint64_t seed, const EditRunConfig& cfg);

/// Writes config.json, trajectory.bin (+ .json), nulls.bin, prompt_before.bin,
/// prompt_after.bin, output.bin and diagnostics.csv into `dir`.
void write_run_dir(const std::filesystem::path& dir, const EditResult& result, const nlohmann::json& config);

}  // namespace aedit
