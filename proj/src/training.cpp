#include "aedit/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "aedit/ops.hpp"
#include "aedit/tape.hpp"

namespace aedit {

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"lr", lr},
          {"optimizer", optimizer == Optimizer::Adam ? "adam" : "sgd"},
          {"momentum", momentum},
          {"beta2", beta2},
          {"adam_eps", adam_eps},
          {"batch", batch},
          {"cond_dropout", cond_dropout},
          {"seed", seed},
          {"schedule", schedule.to_json()}};
}

namespace {

// Rows of the token table that make up the prompt for `caption`.
std::vector<std::size_t> prompt_rows(const DenoiserConfig& c, const std::vector<int>& caption, bool dropped) {
  std::vector<std::size_t> rows(c.prompt_len, c.eot_id());
  rows[0] = c.sot_id();
  if (!dropped)
    for (std::size_t i = 0; i < caption.size(); ++i) rows[i + 1] = static_cast<std::size_t>(caption[i]);
  return rows;
}

Tensor noisy_latent(const Tensor& x0, const Tensor& noise, double alpha_bar) {
  return ops::add(ops::scale(x0, std::sqrt(alpha_bar)), ops::scale(noise, std::sqrt(1.0 - alpha_bar)));
}

Tensor gaussian_like(const Tensor& like, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(like.size());
  for (double& x : v) x = dist(rng);
  return Tensor(like.shape(), std::move(v));
}

struct Draw {
  int model_t;
  double alpha_bar;
  Tensor noise;
  bool dropped;
};

Draw draw(const TrainingExample& ex, const NoiseSchedule& sched, int stride, int steps, double dropout,
          std::mt19937_64& rng) {
  std::uniform_int_distribution<int> step(1, steps);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int t = step(rng) * stride;
  Tensor noise = gaussian_like(ex.latent, rng);
  const bool dropped = unit(rng) < dropout;
  return {t, sched.alpha_bar[static_cast<std::size_t>(t)], std::move(noise), dropped};
}

}  // namespace

double denoising_loss(const Denoiser& model, const TrainingExample& example, int model_t, const Tensor& noise,
                      const NoiseSchedule& train_schedule, bool drop_condition) {
  const Tensor zt = noisy_latent(example.latent, noise, train_schedule.alpha_bar.at(static_cast<std::size_t>(model_t)));
  const PromptEmbedding cond = drop_condition ? model.null_prompt() : model.embed_prompt(example.caption);
  const Tensor eps = model.predict(zt, model_t, cond.matrix);
  return ops::squared_frobenius_norm(ops::sub(eps, noise)).item() / static_cast<double>(noise.size());
}

TrainResult train(Denoiser& model, const std::vector<TrainingExample>& data, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  if (data.empty()) throw std::invalid_argument("training dataset is empty");
  if (config.batch == 0) throw std::invalid_argument("batch size must be positive");
  const DenoiserConfig& mc = model.config();
  if (config.schedule.train_steps != mc.train_steps || config.schedule.beta_start != mc.beta_start ||
      config.schedule.beta_end != mc.beta_end) {
    throw std::invalid_argument("training schedule does not match the model's schedule");
  }
  const NoiseSchedule sched = build_schedule(config.schedule.train_steps, config.schedule.beta_start,
                                             config.schedule.beta_end);
  if (config.schedule.steps < 1 || sched.steps % config.schedule.steps != 0) {
    throw std::invalid_argument("inference steps must divide the training steps");
  }
  const int stride = sched.steps / config.schedule.steps;

  DenoiserParams& params = model.mutable_params();
  const std::vector<Tensor*> tensors = params.all();
  std::vector<std::vector<double>> velocity(tensors.size()), second(tensors.size()), grad(tensors.size());
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    velocity[i].assign(tensors[i]->size(), 0.0);
    second[i].assign(tensors[i]->size(), 0.0);
  }
  std::uint64_t update_count = 0;

  TrainResult result;
  std::mt19937_64 rng(config.seed);

  {
    // Untrained loss on a probe drawn from an independent stream.
    std::mt19937_64 probe_rng(config.seed ^ 0x9e3779b97f4a7c15ull);
    const std::size_t n = std::min<std::size_t>(data.size(), 256);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      Draw d = draw(data[i], sched, stride, config.schedule.steps, config.cond_dropout, probe_rng);
      total += denoising_loss(model, data[i], d.model_t, d.noise, sched, d.dropped);
    }
    result.initial_loss = total / static_cast<double>(n);
  }

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t table_idx = 0, time_idx = 1;  // positions in DenoiserParams::all()

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_total = 0.0;
    try {
      for (std::size_t start = 0; start < order.size(); start += config.batch) {
        const std::size_t end = std::min(order.size(), start + config.batch);
        for (std::size_t i = 0; i < tensors.size(); ++i) grad[i].assign(tensors[i]->size(), 0.0);

        for (std::size_t s = start; s < end; ++s) {
          const TrainingExample& ex = data[order[s]];
          Draw d = draw(ex, sched, stride, config.schedule.steps, config.cond_dropout, rng);

          Tape tape;
          DenoiserParams leaves;
          leaves.blocks.resize(params.blocks.size());
          const std::vector<Tensor*> leaf_slots = leaves.all();
          for (std::size_t i = 0; i < tensors.size(); ++i)
            if (i != table_idx && i != time_idx) *leaf_slots[i] = tape.watch(*tensors[i]);

          const std::size_t time_row_index = static_cast<std::size_t>(d.model_t - 1);
          const Tensor time_row = tape.watch(ops::slice(params.time_embedding, 0, time_row_index, 1));
          const std::vector<std::size_t> rows = prompt_rows(mc, ex.caption, d.dropped);
          const PromptEmbedding prompt =
              d.dropped ? model.null_prompt() : model.embed_prompt(ex.caption);
          const Tensor cond = tape.watch(prompt.matrix);

          const Tensor zt = noisy_latent(ex.latent, d.noise, d.alpha_bar);
          const Prediction pred = model.forward_with(leaves, time_row, zt, cond, d.model_t);
          const Tensor loss =
              ops::scale(ops::squared_frobenius_norm(ops::sub(pred.eps, d.noise)), 1.0 / static_cast<double>(zt.size()));
          tape.backward(loss);
          epoch_total += loss.item();

          for (std::size_t i = 0; i < tensors.size(); ++i) {
            if (i == table_idx || i == time_idx) continue;
            const Tensor g = tape.grad(*leaf_slots[i]);
            for (std::size_t k = 0; k < g.size(); ++k) grad[i][k] += g[k];
          }
          const Tensor gt = tape.grad(time_row);
          for (std::size_t k = 0; k < gt.size(); ++k) grad[time_idx][time_row_index * gt.size() + k] += gt[k];
          const Tensor gc = tape.grad(cond);
          for (std::size_t r = 0; r < rows.size(); ++r)
            for (std::size_t k = 0; k < mc.embed_dim; ++k) grad[table_idx][rows[r] * mc.embed_dim + k] += gc[r * mc.embed_dim + k];
        }

        const double inv_batch = 1.0 / static_cast<double>(end - start);
        ++update_count;
        const double bias1 = 1.0 - std::pow(config.momentum, static_cast<double>(update_count));
        const double bias2 = 1.0 - std::pow(config.beta2, static_cast<double>(update_count));
        for (std::size_t i = 0; i < tensors.size(); ++i) {
          auto values = tensors[i]->mutable_values();
          for (std::size_t k = 0; k < values.size(); ++k) {
            const double g = grad[i][k] * inv_batch;
            if (config.optimizer == Optimizer::SgdMomentum) {
              velocity[i][k] = config.momentum * velocity[i][k] + g;
              values[k] -= config.lr * velocity[i][k];
            } else {
              velocity[i][k] = config.momentum * velocity[i][k] + (1.0 - config.momentum) * g;
              second[i][k] = config.beta2 * second[i][k] + (1.0 - config.beta2) * g * g;
              values[k] -= config.lr * (velocity[i][k] / bias1) / (std::sqrt(second[i][k] / bias2) + config.adam_eps);
            }
          }
          require_finite(values, "parameter update");
        }
      }
    } catch (const NumericError& e) {
      throw TrainingDivergence(epoch, e.what());
    }
    const double mean_loss = epoch_total / static_cast<double>(data.size());
    if (!std::isfinite(mean_loss)) throw TrainingDivergence(epoch, "non-finite loss");
    result.epoch_loss.push_back(mean_loss);
    if (on_epoch) on_epoch(epoch, mean_loss);
  }
  return result;
}

}  // namespace aedit
