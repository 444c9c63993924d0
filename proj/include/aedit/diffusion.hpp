#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "json.hpp"

#include "aedit/tensor.hpp"

namespace aedit {

/// Diffusion horizon with cumulative signal coefficients. Step indices run
/// 0..T with alpha_bar[0] == 1 (clean latent). model_timestep[t] is the
/// training timestep fed to the denoiser for step t.
struct NoiseSchedule {
  int steps = 0;
  std::vector<double> beta;       // beta[t - 1] belongs to step t
  std::vector<double> alpha_bar;  // size steps + 1
  std::vector<int> model_timestep;

  // Builds a schedule directly from cumulative products (used by tests and
  // by stride sub-sampling).
  static NoiseSchedule from_alpha_bar(std::vector<double> alpha_bar, std::vector<int> model_timestep = {});
};

struct ScheduleConfig {
  int train_steps = 1000;
  int steps = 50;
  double beta_start = 1e-4;
  double beta_end = 0.02;

  nlohmann::json to_json() const;
  static ScheduleConfig from_json(const nlohmann::json& j);
};

// Linear betas over T steps, alpha_bar[t] = prod_{i<=t} (1 - beta_i).
NoiseSchedule build_schedule(int steps, double beta_start, double beta_end);

// Keeps every (train.steps / steps)-th step of a training schedule.
NoiseSchedule subsample_schedule(const NoiseSchedule& train, int steps);

// The T-step inference schedule over the training schedule of `config`.
NoiseSchedule inference_schedule(const ScheduleConfig& config);

/// Classifier-free guidance: w * eps_cond + (1 - w) * eps_uncond.
/// Returns eps_cond itself when w == 1.
Tensor cfg_predict(const Tensor& eps_cond, const Tensor& eps_uncond, double w);

// Deterministic DDIM update from step t to t - 1 (1 <= t <= T).
Tensor ddim_step(const Tensor& z_t, int t, const Tensor& eps, const NoiseSchedule& schedule);

enum class InversionFormula {
  Exact,      // algebraic inverse of ddim_step
  AsPrinted,  // epsilon coefficient without the sqrt(alpha_bar[t+1]) factor
};

// DDIM update from step t to t + 1 (0 <= t <= T - 1).
Tensor ddim_invert_step(const Tensor& z_t, int t, const Tensor& eps, const NoiseSchedule& schedule,
                        InversionFormula formula = InversionFormula::Exact);

/// Anything that predicts noise for a latent at a training timestep under a
/// conditioning matrix.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  virtual Tensor predict(const Tensor& z, int model_t, const Tensor& cond) const = 0;
};

// Pivotal latents z*_0..z*_T.
struct LatentTrajectory {
  std::vector<Tensor> states;

  int steps() const { return static_cast<int>(states.size()) - 1; }
  const Tensor& at(int t) const { return states.at(static_cast<std::size_t>(t)); }
};

struct InversionOptions {
  double w = 1.0;
  InversionFormula formula = InversionFormula::Exact;
};

/// DDIM inversion of z0 under `cond`. The step t -> t + 1 evaluates the
/// predictor at z_t with the timestep of step t + 1. `null_cond` is only
/// evaluated when w != 1.
LatentTrajectory invert_trajectory(const NoisePredictor& model, const Tensor& z0, const Tensor& cond,
                                   const Tensor& null_cond, const NoiseSchedule& schedule,
                                   const InversionOptions& options = {});

// Supplies the unconditional embedding used at step t.
using NullProvider = std::function<const Tensor&(int t)>;

/// Guided deterministic DDIM denoising from z_T down to z_0. When `states`
/// is non-null it receives z_T..z_0 in that order.
Tensor denoise(const NoisePredictor& model, const Tensor& z_T, const Tensor& cond, const NullProvider& null_at,
               const NoiseSchedule& schedule, double w, std::vector<Tensor>* states = nullptr);

// T + 1 tensor records; the sidecar is written next to it with a .json
// extension.
void save_trajectory(const std::filesystem::path& bin, const LatentTrajectory& trajectory,
                     const nlohmann::json& sidecar);
LatentTrajectory load_trajectory(const std::filesystem::path& bin);

}  // namespace aedit
