#include "aedit/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <random>

#include "aedit/config.hpp"
#include "aedit/ops.hpp"
#include "aedit/serialize.hpp"
#include "aedit/tape.hpp"

namespace aedit {

nlohmann::json EditRunConfig::to_json() const {
  return {{"schedule", schedule.to_json()},
          {"w_invert", w_invert},
          {"w_denoise", w_denoise},
          {"eta", eta},
          {"inner_iters", inner_iters},
          {"max_halvings", max_halvings},
          {"lambda_pos", attention.lambda_pos},
          {"lambda_neg", attention.lambda_neg},
          {"embed_lr", attention.embed_lr},
          {"suppression_sign_flipped", suppression_sign_flipped},
          {"inversion_formula", inversion_formula == InversionFormula::Exact ? "exact" : "as-printed"},
          {"seed", seed},
          {"null_opt_enabled", null_opt_enabled},
          {"eot_sup_enabled", eot_sup_enabled},
          {"attn_loss_enabled", attn_loss_enabled}};
}

EditRunConfig EditRunConfig::from_json(const nlohmann::json& j) {
  using config::read;
  config::require_keys(j,
                       {"schedule", "w_invert", "w_denoise", "eta", "inner_iters", "max_halvings", "lambda_pos",
                        "lambda_neg", "embed_lr", "suppression_sign_flipped", "inversion_formula", "seed", "null_opt_enabled",
                        "eot_sup_enabled", "attn_loss_enabled"},
                       "");
  EditRunConfig c;
  if (j.contains("schedule")) c.schedule = ScheduleConfig::from_json(j.at("schedule"));
  read(j, "w_invert", c.w_invert, "");
  read(j, "w_denoise", c.w_denoise, "");
  read(j, "eta", c.eta, "");
  read(j, "inner_iters", c.inner_iters, "");
  read(j, "max_halvings", c.max_halvings, "");
  read(j, "lambda_pos", c.attention.lambda_pos, "");
  read(j, "lambda_neg", c.attention.lambda_neg, "");
  read(j, "embed_lr", c.attention.embed_lr, "");
  read(j, "suppression_sign_flipped", c.suppression_sign_flipped, "");
  std::string formula = "exact";
  read(j, "inversion_formula", formula, "");
  if (formula == "exact") {
    c.inversion_formula = InversionFormula::Exact;
  } else if (formula == "as-printed") {
    c.inversion_formula = InversionFormula::AsPrinted;
  } else {
    throw ConfigError("config key 'inversion_formula' must be \"exact\" or \"as-printed\"");
  }
  read(j, "seed", c.seed, "");
  read(j, "null_opt_enabled", c.null_opt_enabled, "");
  read(j, "eot_sup_enabled", c.eot_sup_enabled, "");
  read(j, "attn_loss_enabled", c.attn_loss_enabled, "");

  if (!(c.w_invert >= 0.0)) throw ConfigError("config key 'w_invert' must be >= 0");
  if (!(c.w_denoise >= 0.0)) throw ConfigError("config key 'w_denoise' must be >= 0");
  if (!(c.eta > 0.0)) throw ConfigError("config key 'eta' must be positive");
  if (c.inner_iters < 1) throw ConfigError("config key 'inner_iters' must be >= 1");
  if (c.max_halvings < 0) throw ConfigError("config key 'max_halvings' must be >= 0");
  if (c.attention.lambda_pos < 0.0) throw ConfigError("config key 'lambda_pos' must be >= 0");
  if (c.attention.lambda_neg < 0.0) throw ConfigError("config key 'lambda_neg' must be >= 0");
  if (c.schedule.steps < 1 || c.schedule.train_steps < 2 || c.schedule.train_steps % c.schedule.steps != 0) {
    throw ConfigError("config key 'schedule.steps' must divide 'schedule.train_steps'");
  }
  return c;
}

namespace {

template <typename F>
auto stage(const char* name, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const PipelineError&) {
    throw;
  } catch (const std::exception& e) {
    throw PipelineError(name, e.what());
  }
}

// Attention loss of P-hat against the reference maps at one state; returns
// the loss value and its gradient w.r.t. the P-hat matrix.
std::pair<double, Tensor> attention_gradient(const Denoiser& model, const Tensor& z, int model_t,
                                             const PromptEmbedding& reference, const PromptEmbedding& current,
                                             const AttnLossConfig& cfg) {
  const AttentionSplit ref = split_attention(model.forward(z, model_t, reference.matrix).attention, current.polarity);
  Tape tape;
  const Tensor leaf = tape.watch(current.matrix);
  const AttentionSplit hat = split_attention(model.forward(z, model_t, leaf).attention, current.polarity);
  const Tensor loss = attention_loss(hat, ref, cfg);
  if (!loss.tracked()) return {loss.item(), Tensor(current.matrix.shape(), 0.0)};
  tape.backward(loss);
  return {loss.item(), tape.grad(leaf)};
}

}  // namespace

EditPrep prepare_edit(const Denoiser& model, const Tensor& z0, const EditSpec& spec, const EditRunConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  stage("setup", [&] {
    spec.validate(model.config().prompt_len - 2);
    return 0;
  });
  const NoiseSchedule schedule = stage("setup", [&] { return inference_schedule(cfg.schedule); });

  EditPrep prep;
  prep.prompt = stage("setup", [&] { return classify_tokens(model.embed_prompt(spec.target_caption), spec); });
  prep.trajectory = stage("inversion", [&] {
    return invert_trajectory(model, z0, prep.prompt.matrix, model.null_prompt().matrix, schedule,
                             {cfg.w_invert, cfg.inversion_formula});
  });
  stage("null-optimization", [&] {
    if (cfg.null_opt_enabled) {
      NullOptResult opt = optimize_null_texts(model, prep.trajectory, prep.prompt, schedule, cfg.null_opt());
      prep.nulls = std::move(opt.nulls);
      prep.null_steps = std::move(opt.steps);
    } else {
      prep.nulls = NullTextSet::constant(model.null_prompt().matrix, schedule.steps, cfg.w_denoise);
    }
    return 0;
  });
  prep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return prep;
}

EditResult finish_edit(const Denoiser& model, const EditPrep& prep, const EditSpec& spec, const EditRunConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  const NoiseSchedule schedule = stage("setup", [&] { return inference_schedule(cfg.schedule); });
  const int T = schedule.steps;
  if (prep.trajectory.steps() != T || prep.nulls.steps() != T) {
    throw PipelineError("setup", "prepared state has " + std::to_string(prep.trajectory.steps()) +
                                     " steps, schedule " + std::to_string(T));
  }
  const bool editing = spec.mode != EditMode::ReconstructOnly;

  EditResult r;
  r.prompt_before = prep.prompt;
  r.trajectory = prep.trajectory;
  r.nulls = prep.nulls;
  r.null_steps = prep.null_steps;

  r.prompt_suppressed = stage("eot-suppression", [&] {
    if (!editing || !cfg.eot_sup_enabled) return r.prompt_before;
    return eot_suppress(r.prompt_before, spec, spec.suppression(cfg.suppression_sign_flipped));
  });

  const AttnLossConfig attn = spec.attention(cfg.attention);
  const bool refine = editing && cfg.attn_loss_enabled;
  stage("denoising", [&] {
    PromptEmbedding current = r.prompt_suppressed;
    Tensor z = r.trajectory.at(T);
    for (int t = T; t >= 1; --t) {
      const int model_t = schedule.model_timestep[static_cast<std::size_t>(t)];
      StepDiagnostics d;
      d.t = t;
      if (!r.null_steps.empty()) d.null_loss = r.null_steps[static_cast<std::size_t>(T - t)].final_loss;
      if (refine) {
        auto [loss, grad] = attention_gradient(model, z, model_t, r.prompt_before, current, attn);
        d.attn_loss = loss;
        current = update_prompt_embedding(current, grad, attn.embed_lr);
      }
      Tensor eps = model.predict(z, model_t, current.matrix);
      if (cfg.w_denoise != 1.0) eps = cfg_predict(eps, model.predict(z, model_t, r.nulls.at(t)), cfg.w_denoise);
      z = ddim_step(z, t, eps, schedule);
      r.steps.push_back(d);
    }
    r.edited = z;
    r.prompt_after = current;
    return 0;
  });

  r.reconstruction = stage("reconstruction", [&] {
    if (!editing) return r.edited;
    return reconstruct(model, r.trajectory.at(T), r.prompt_before, r.nulls, schedule, cfg.w_denoise);
  });
  r.seconds = prep.seconds + std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

EditResult edit(const Denoiser& model, const Tensor& z0, const EditSpec& spec, const EditRunConfig& cfg) {
  return finish_edit(model, prepare_edit(model, z0, spec, cfg), spec, cfg);
}

FidelityReport reconstruct_only(const Denoiser& model, const Tensor& z0, const std::vector<int>& caption,
                                const EditRunConfig& cfg) {
  EditSpec spec;
  spec.mode = EditMode::ReconstructOnly;
  spec.target_caption = caption;
  FidelityReport report;
  report.run = edit(model, z0, spec, cfg);
  report.latent = report.run.edited;
  report.relative_mse = relative_mse(report.latent, z0);
  return report;
}

Tensor regenerate(const Denoiser& model, const std::vector<int>& caption, std::uint64_t seed,
                  const EditRunConfig& cfg) {
  const NoiseSchedule schedule = inference_schedule(cfg.schedule);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(shape_size(model.config().latent_shape()));
  for (double& x : v) x = n(rng);
  const Tensor z_T(model.config().latent_shape(), std::move(v));
  const PromptEmbedding p = model.embed_prompt(caption);
  const Tensor null = model.null_prompt().matrix;
  return denoise(model, z_T, p.matrix, [&](int) -> const Tensor& { return null; }, schedule, cfg.w_denoise);
}

void write_run_dir(const std::filesystem::path& dir, const EditResult& result, const nlohmann::json& config) {
  std::filesystem::create_directories(dir);
  io::write_text(dir / "config.json", config.dump(2) + "\n");
  const nlohmann::json run = config.value("run", nlohmann::json::object());
  const nlohmann::json sidecar{{"T", result.trajectory.steps()},
                               {"w", run.value("w_invert", 1.0)},
                               {"schedule", run.value("schedule", nlohmann::json::object())},
                               {"seed", run.value("seed", std::uint64_t{0})}};
  save_trajectory(dir / "trajectory.bin", result.trajectory, sidecar);
  result.nulls.save(dir / "nulls.bin");
  io::save_tensors(dir / "prompt_before.bin", {result.prompt_before.matrix});
  io::save_tensors(dir / "prompt_after.bin", {result.prompt_after.matrix});
  io::save_tensors(dir / "output.bin", {result.edited});
  std::string csv = "step,null_loss,attn_loss\n";
  char line[128];
  for (const StepDiagnostics& d : result.steps) {
    std::snprintf(line, sizeof line, "%d,%.17g,%.17g\n", d.t, d.null_loss, d.attn_loss);
    csv += line;
  }
  io::write_text(dir / "diagnostics.csv", csv);
}

}  // namespace aedit
