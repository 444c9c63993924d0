#include "aedit/nulltext.hpp"

#include <fstream>
#include <stdexcept>

#include "aedit/ops.hpp"
#include "aedit/serialize.hpp"
#include "aedit/tape.hpp"

namespace aedit {

const Tensor& NullTextSet::at(int t) const {
  if (t < 1 || t > steps()) {
    throw std::out_of_range("null embedding for step " + std::to_string(t) + " outside [1, " +
                            std::to_string(steps()) + "]");
  }
  return embeddings[static_cast<std::size_t>(steps() - t)];
}

NullTextSet NullTextSet::constant(const Tensor& null, int steps, double w) {
  NullTextSet s;
  s.embeddings.assign(static_cast<std::size_t>(steps), null.detach());
  s.eta = 0.0;
  s.inner_iters = 0;
  s.w = w;
  return s;
}

void NullTextSet::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io::FormatError("cannot open " + path.string() + " for writing");
  const nlohmann::json header{{"T", steps()}, {"eta", eta}, {"inner_iters", inner_iters}, {"w", w}};
  io::write_block(out, header.dump());
  for (const Tensor& e : embeddings) io::write_tensor(out, e);
  if (!out) throw io::FormatError("failed writing " + path.string());
}

NullTextSet NullTextSet::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io::FormatError("cannot open " + path.string());
  const nlohmann::json h = nlohmann::json::parse(io::read_block(in));
  NullTextSet s;
  const int steps = h.at("T").get<int>();
  s.eta = h.at("eta").get<double>();
  s.inner_iters = h.at("inner_iters").get<int>();
  s.w = h.at("w").get<double>();
  for (int i = 0; i < steps; ++i) s.embeddings.push_back(io::read_tensor(in));
  return s;
}

namespace {

struct Probe {
  double loss;
  Tensor grad;
};

// Loss and gradient of one guided DDIM step w.r.t. the null embedding.
Probe probe(const Denoiser& model, const Tensor& z_t, int t, const Tensor& eps_cond, const Tensor& null,
            const Tensor& target, const NoiseSchedule& schedule, double w) {
  Tape tape;
  const Tensor leaf = tape.watch(null);
  const int model_t = schedule.model_timestep[static_cast<std::size_t>(t)];
  const Tensor eps_uncond = model.predict(z_t, model_t, leaf);
  const Tensor z_prev = ddim_step(z_t, t, cfg_predict(eps_cond, eps_uncond, w), schedule);
  const Tensor loss = ops::squared_frobenius_norm(ops::sub(target, z_prev));
  if (!loss.tracked()) return {loss.item(), Tensor(null.shape(), 0.0)};
  tape.backward(loss);
  return {loss.item(), tape.grad(leaf)};
}

}  // namespace

NullOptResult optimize_null_texts(const Denoiser& model, const LatentTrajectory& pivots, const PromptEmbedding& prompt,
                                  const NoiseSchedule& schedule, const NullOptConfig& config) {
  if (pivots.steps() != schedule.steps) {
    throw std::invalid_argument("trajectory has " + std::to_string(pivots.steps()) + " steps, schedule " +
                                std::to_string(schedule.steps));
  }
  if (config.inner_iters < 1) throw std::invalid_argument("inner_iters must be >= 1");
  NullOptResult result;
  result.nulls.eta = config.eta;
  result.nulls.inner_iters = config.inner_iters;
  result.nulls.w = config.w;

  Tensor null = model.null_prompt().matrix;
  Tensor z = pivots.at(schedule.steps);
  for (int t = schedule.steps; t >= 1; --t) {
    const int model_t = schedule.model_timestep[static_cast<std::size_t>(t)];
    const Tensor& target = pivots.at(t - 1);
    const Tensor eps_cond = model.predict(z, model_t, prompt.matrix);

    NullOptStep step;
    step.t = t;
    Probe current = probe(model, z, t, eps_cond, null, target, schedule, config.w);
    step.initial_loss = current.loss;
    step.losses.push_back(current.loss);
    double eta = config.eta;
    for (int i = 0; i < config.inner_iters; ++i) {
      const Tensor candidate = ops::sub(null, ops::scale(current.grad, eta));
      Probe next = probe(model, z, t, eps_cond, candidate, target, schedule, config.w);
      if (next.loss <= current.loss) {
        null = candidate;
        current = std::move(next);
        ++step.accepted;
        step.losses.push_back(current.loss);
      } else if (step.halvings < config.max_halvings) {
        eta *= 0.5;
        ++step.halvings;
      } else {
        break;
      }
    }
    step.final_loss = current.loss;
    result.nulls.embeddings.push_back(null);
    result.steps.push_back(std::move(step));

    const Tensor eps_uncond = model.predict(z, model_t, null);
    z = ddim_step(z, t, cfg_predict(eps_cond, eps_uncond, config.w), schedule);
  }
  return result;
}

Tensor reconstruct(const Denoiser& model, const Tensor& z_T, const PromptEmbedding& prompt, const NullTextSet& nulls,
                   const NoiseSchedule& schedule, double w, std::vector<Tensor>* states) {
  if (nulls.steps() != schedule.steps) {
    throw std::invalid_argument("null set has " + std::to_string(nulls.steps()) + " entries, schedule " +
                                std::to_string(schedule.steps));
  }
  return denoise(model, z_T, prompt.matrix, [&](int t) -> const Tensor& { return nulls.at(t); }, schedule, w, states);
}

double relative_mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("relative_mse shape mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  if (den == 0.0) throw std::invalid_argument("relative_mse against a zero reference");
  return num / den;
}

}  // namespace aedit
