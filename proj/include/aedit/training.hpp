#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "json.hpp"

#include "aedit/denoiser.hpp"
#include "aedit/diffusion.hpp"

namespace aedit {

struct TrainingExample {
  Tensor latent;  // latent_tokens x patch_dim
  std::vector<int> caption;
};

enum class Optimizer { SgdMomentum, Adam };

struct TrainConfig {
  int epochs = 30;
  double lr = 1e-3;
  Optimizer optimizer = Optimizer::Adam;
  double momentum = 0.9;  // also Adam's first-moment decay
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch = 16;
  double cond_dropout = 0.1;
  std::uint64_t seed = 0;
  ScheduleConfig schedule;

  nlohmann::json to_json() const;
};

struct TrainResult {
  double initial_loss = 0.0;       // model before training, on a fixed probe of up to 256 samples
  std::vector<double> epoch_loss;  // per-element MSE averaged over each epoch
};

class TrainingDivergence : public std::runtime_error {
 public:
  TrainingDivergence(int epoch, const std::string& what)
      : std::runtime_error("training diverged in epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

using EpochCallback = std::function<void(int epoch, double loss)>;

/// DDPM epsilon-prediction training with classifier-free condition dropout
/// and Adam (or SGD with momentum). Timesteps are drawn from the inference grid of
/// `config.schedule`. Deterministic for a given seed.
TrainResult train(Denoiser& model, const std::vector<TrainingExample>& data, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

// Per-element MSE of eps-prediction for one example (no parameter update).
double denoising_loss(const Denoiser& model, const TrainingExample& example, int model_t, const Tensor& noise,
                      const NoiseSchedule& train_schedule, bool drop_condition);

}  // namespace aedit
