#include "aedit/diffusion.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "aedit/config.hpp"
#include "aedit/ops.hpp"
#include "aedit/serialize.hpp"

namespace aedit {

NoiseSchedule NoiseSchedule::from_alpha_bar(std::vector<double> alpha_bar, std::vector<int> model_timestep) {
  if (alpha_bar.size() < 2) throw std::invalid_argument("schedule needs at least one step");
  if (alpha_bar[0] != 1.0) throw std::invalid_argument("alpha_bar[0] must be 1");
  NoiseSchedule s;
  s.steps = static_cast<int>(alpha_bar.size()) - 1;
  s.beta.resize(static_cast<std::size_t>(s.steps));
  for (std::size_t t = 1; t < alpha_bar.size(); ++t) {
    if (!(alpha_bar[t] > 0.0 && alpha_bar[t] <= alpha_bar[t - 1])) {
      throw std::invalid_argument("alpha_bar must be positive and non-increasing");
    }
    s.beta[t - 1] = 1.0 - alpha_bar[t] / alpha_bar[t - 1];
  }
  s.alpha_bar = std::move(alpha_bar);
  if (model_timestep.empty()) {
    model_timestep.resize(s.alpha_bar.size());
    for (std::size_t t = 0; t < model_timestep.size(); ++t) model_timestep[t] = static_cast<int>(t);
  }
  if (model_timestep.size() != s.alpha_bar.size()) throw std::invalid_argument("model_timestep size mismatch");
  s.model_timestep = std::move(model_timestep);
  return s;
}

nlohmann::json ScheduleConfig::to_json() const {
  return {{"train_steps", train_steps}, {"steps", steps}, {"beta_start", beta_start}, {"beta_end", beta_end}};
}

ScheduleConfig ScheduleConfig::from_json(const nlohmann::json& j) {
  config::require_keys(j, {"train_steps", "steps", "beta_start", "beta_end"}, "schedule.");
  ScheduleConfig c;
  config::read(j, "train_steps", c.train_steps, "schedule.");
  config::read(j, "steps", c.steps, "schedule.");
  config::read(j, "beta_start", c.beta_start, "schedule.");
  config::read(j, "beta_end", c.beta_end, "schedule.");
  return c;
}

NoiseSchedule build_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 2) throw std::invalid_argument("schedule needs T >= 2");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw std::invalid_argument("need 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.steps = steps;
  s.beta.resize(static_cast<std::size_t>(steps));
  s.alpha_bar.assign(static_cast<std::size_t>(steps) + 1, 1.0);
  s.model_timestep.resize(static_cast<std::size_t>(steps) + 1);
  for (int i = 0; i < steps; ++i) {
    s.beta[static_cast<std::size_t>(i)] =
        beta_start + (beta_end - beta_start) * static_cast<double>(i) / static_cast<double>(steps - 1);
  }
  for (int t = 0; t <= steps; ++t) s.model_timestep[static_cast<std::size_t>(t)] = t;
  for (std::size_t t = 1; t < s.alpha_bar.size(); ++t) s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - s.beta[t - 1]);
  return s;
}

NoiseSchedule subsample_schedule(const NoiseSchedule& train, int steps) {
  if (steps < 1 || train.steps % steps != 0) {
    throw std::invalid_argument("inference steps must divide the training steps");
  }
  const int stride = train.steps / steps;
  std::vector<double> alpha_bar(static_cast<std::size_t>(steps) + 1);
  std::vector<int> model_t(static_cast<std::size_t>(steps) + 1);
  for (int t = 0; t <= steps; ++t) {
    alpha_bar[static_cast<std::size_t>(t)] = train.alpha_bar[static_cast<std::size_t>(t * stride)];
    model_t[static_cast<std::size_t>(t)] = train.model_timestep[static_cast<std::size_t>(t * stride)];
  }
  return NoiseSchedule::from_alpha_bar(std::move(alpha_bar), std::move(model_t));
}

NoiseSchedule inference_schedule(const ScheduleConfig& config) {
  return subsample_schedule(build_schedule(config.train_steps, config.beta_start, config.beta_end), config.steps);
}

Tensor cfg_predict(const Tensor& eps_cond, const Tensor& eps_uncond, double w) {
  if (eps_cond.shape() != eps_uncond.shape()) {
    throw ShapeError("cfg_predict shape mismatch " + shape_string(eps_cond.shape()) + " vs " +
                     shape_string(eps_uncond.shape()));
  }
  if (!(w >= 0.0)) throw std::invalid_argument("guidance scale must be >= 0");
  if (w == 1.0) return eps_cond;
  return ops::add(ops::scale(eps_cond, w), ops::scale(eps_uncond, 1.0 - w));
}

namespace {

void check_step(int t, int lo, int hi, const char* what) {
  if (t < lo || t > hi) {
    throw std::out_of_range(std::string(what) + ": step " + std::to_string(t) + " outside [" + std::to_string(lo) +
                            ", " + std::to_string(hi) + "]");
  }
}

// Moves a latent from cumulative coefficient `from` to `to` along the DDIM
// ODE with fixed epsilon.
Tensor transport(const Tensor& z, const Tensor& eps, double from, double to, double eps_factor_scale) {
  if (z.shape() != eps.shape()) throw ShapeError("latent/epsilon shape mismatch");
  const double latent_coef = std::sqrt(to / from);
  const double eps_coef = eps_factor_scale * (std::sqrt((1.0 - to) / to) - std::sqrt((1.0 - from) / from));
  return ops::add(ops::scale(z, latent_coef), ops::scale(eps, eps_coef));
}

}  // namespace

Tensor ddim_step(const Tensor& z_t, int t, const Tensor& eps, const NoiseSchedule& schedule) {
  check_step(t, 1, schedule.steps, "ddim_step");
  const double a_t = schedule.alpha_bar[static_cast<std::size_t>(t)];
  const double a_prev = schedule.alpha_bar[static_cast<std::size_t>(t - 1)];
  return transport(z_t, eps, a_t, a_prev, std::sqrt(a_prev));
}

Tensor ddim_invert_step(const Tensor& z_t, int t, const Tensor& eps, const NoiseSchedule& schedule,
                        InversionFormula formula) {
  check_step(t, 0, schedule.steps - 1, "ddim_invert_step");
  const double a_t = schedule.alpha_bar[static_cast<std::size_t>(t)];
  const double a_next = schedule.alpha_bar[static_cast<std::size_t>(t + 1)];
  const double factor = formula == InversionFormula::Exact ? std::sqrt(a_next) : 1.0;
  return transport(z_t, eps, a_t, a_next, factor);
}

LatentTrajectory invert_trajectory(const NoisePredictor& model, const Tensor& z0, const Tensor& cond,
                                   const Tensor& null_cond, const NoiseSchedule& schedule,
                                   const InversionOptions& options) {
  LatentTrajectory traj;
  traj.states.reserve(static_cast<std::size_t>(schedule.steps) + 1);
  traj.states.push_back(z0.detach());
  for (int t = 0; t < schedule.steps; ++t) {
    const Tensor& z = traj.states.back();
    const int model_t = schedule.model_timestep[static_cast<std::size_t>(t + 1)];
    Tensor eps = model.predict(z, model_t, cond);
    if (options.w != 1.0) eps = cfg_predict(eps, model.predict(z, model_t, null_cond), options.w);
    traj.states.push_back(ddim_invert_step(z, t, eps, schedule, options.formula));
  }
  return traj;
}

Tensor denoise(const NoisePredictor& model, const Tensor& z_T, const Tensor& cond, const NullProvider& null_at,
               const NoiseSchedule& schedule, double w, std::vector<Tensor>* states) {
  Tensor z = z_T.detach();
  if (states) states->push_back(z);
  for (int t = schedule.steps; t >= 1; --t) {
    const int model_t = schedule.model_timestep[static_cast<std::size_t>(t)];
    Tensor eps = model.predict(z, model_t, cond);
    if (w != 1.0) eps = cfg_predict(eps, model.predict(z, model_t, null_at(t)), w);
    z = ddim_step(z, t, eps, schedule);
    if (states) states->push_back(z);
  }
  return z;
}

void save_trajectory(const std::filesystem::path& bin, const LatentTrajectory& trajectory,
                     const nlohmann::json& sidecar) {
  io::save_tensors(bin, trajectory.states);
  std::filesystem::path side = bin;
  side.replace_extension(".json");
  io::write_text(side, sidecar.dump(2) + "\n");
}

LatentTrajectory load_trajectory(const std::filesystem::path& bin) { return {io::load_tensors(bin)}; }

}  // namespace aedit
