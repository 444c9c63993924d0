#include <filesystem>
#include <random>
#include <sstream>

#include "doctest.h"

#include "aedit/config.hpp"
#include "aedit/pipeline.hpp"
#include "aedit/serialize.hpp"
#include "support.hpp"

using namespace aedit;
using aedit::testing::random_normal;

namespace {

Denoiser tiny_model(std::uint64_t seed) {
  DenoiserConfig c;
  c.latent_tokens = 6;
  c.patch_dim = 3;
  c.hidden = 8;
  c.embed_dim = 5;
  c.heads = 2;
  c.ffn_hidden = 6;
  c.prompt_len = 5;
  c.vocab_size = 4;
  c.train_steps = 20;
  Denoiser m(c, seed);
  std::mt19937_64 rng(seed + 100);
  m.mutable_params().out_proj = random_normal(rng, {c.hidden, c.patch_dim}, 0.3);
  m.mutable_params().out_bias = random_normal(rng, {1, c.patch_dim}, 0.1);
  m.mutable_params().skip_gain = random_normal(rng, {1, c.patch_dim}, 0.5);
  return m;
}

EditRunConfig tiny_run() {
  EditRunConfig cfg;
  cfg.schedule.train_steps = 20;
  cfg.schedule.steps = 5;
  return cfg;
}

EditSpec delete_spec() {
  EditSpec s;
  s.mode = EditMode::Delete;
  s.target_caption = {1, 2, 3};
  s.negative_positions = {1};
  return s;
}

Tensor input(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return random_normal(rng, {6, 3});
}

}  // namespace

TEST_CASE("reconstruct-only with every toggle off is plain guided DDIM reconstruction") {
  const Denoiser model = tiny_model(1);
  EditRunConfig cfg = tiny_run();
  cfg.null_opt_enabled = false;
  cfg.eot_sup_enabled = false;
  cfg.attn_loss_enabled = false;
  const Tensor z0 = input(1);
  const std::vector<int> caption{2, 3};
  const FidelityReport rep = reconstruct_only(model, z0, caption, cfg);

  const NoiseSchedule schedule = inference_schedule(cfg.schedule);
  const PromptEmbedding p = model.embed_prompt(caption);
  const LatentTrajectory traj = invert_trajectory(model, z0, p.matrix, model.null_prompt().matrix, schedule);
  const NullTextSet nulls = NullTextSet::constant(model.null_prompt().matrix, 5, 7.5);
  CHECK(identical(rep.latent, reconstruct(model, traj.at(5), p, nulls, schedule, 7.5)));
  CHECK(rep.relative_mse == relative_mse(rep.latent, z0));
  for (const StepDiagnostics& d : rep.run.steps) {
    CHECK(d.null_loss == 0.0);
    CHECK(d.attn_loss == 0.0);
  }
}

TEST_CASE("reconstruct-only skips suppression and refinement even when enabled") {
  const Denoiser model = tiny_model(2);
  const EditRunConfig cfg = tiny_run();
  const FidelityReport rep = reconstruct_only(model, input(2), {1, 2}, cfg);
  CHECK(identical(rep.run.prompt_after.matrix, rep.run.prompt_before.matrix));
  CHECK(identical(rep.run.prompt_suppressed.matrix, rep.run.prompt_before.matrix));
  CHECK(identical(rep.run.reconstruction, rep.run.edited));
}

TEST_CASE("edits are deterministic and leave the model alone") {
  const Denoiser model = tiny_model(3);
  const auto sum = model.checksum();
  const EditRunConfig cfg = tiny_run();
  const EditResult a = edit(model, input(3), delete_spec(), cfg);
  const EditResult b = edit(model, input(3), delete_spec(), cfg);
  CHECK(identical(a.edited, b.edited));
  CHECK(identical(a.reconstruction, b.reconstruction));
  CHECK(identical(a.prompt_after.matrix, b.prompt_after.matrix));
  CHECK(model.checksum() == sum);
  REQUIRE(a.steps.size() == 5);
  CHECK(a.steps.front().t == 5);
  CHECK(a.steps.back().t == 1);
  // Suppression and refinement both moved the prompt.
  CHECK_FALSE(identical(a.prompt_suppressed.matrix, a.prompt_before.matrix));
  CHECK_FALSE(identical(a.prompt_after.matrix, a.prompt_suppressed.matrix));
}

TEST_CASE("downstream toggles do not change the inversion or the nulls") {
  const Denoiser model = tiny_model(4);
  EditRunConfig on = tiny_run();
  EditRunConfig off = on;
  off.eot_sup_enabled = false;
  off.attn_loss_enabled = false;
  const EditResult a = edit(model, input(4), delete_spec(), on);
  const EditResult b = edit(model, input(4), delete_spec(), off);
  for (int t = 0; t <= 5; ++t) CHECK(identical(a.trajectory.at(t), b.trajectory.at(t)));
  for (int t = 1; t <= 5; ++t) CHECK(identical(a.nulls.at(t), b.nulls.at(t)));
  CHECK(identical(a.reconstruction, b.reconstruction));
  CHECK_FALSE(identical(a.edited, b.edited));
  CHECK(identical(b.prompt_after.matrix, b.prompt_before.matrix));
}

TEST_CASE("a shared preparation gives the same result as a full edit") {
  const Denoiser model = tiny_model(5);
  const EditRunConfig cfg = tiny_run();
  const EditPrep prep = prepare_edit(model, input(5), delete_spec(), cfg);
  EditRunConfig no_eot = cfg;
  no_eot.eot_sup_enabled = false;
  CHECK(identical(finish_edit(model, prep, delete_spec(), cfg).edited, edit(model, input(5), delete_spec(), cfg).edited));
  CHECK(identical(finish_edit(model, prep, delete_spec(), no_eot).edited,
                  edit(model, input(5), delete_spec(), no_eot).edited));
}

TEST_CASE("failures carry the stage they happened in") {
  const Denoiser model = tiny_model(6);
  const EditRunConfig cfg = tiny_run();
  EditSpec bad = delete_spec();
  bad.negative_positions = {7};
  try {
    edit(model, input(6), bad, cfg);
    FAIL("expected a PipelineError");
  } catch (const PipelineError& e) {
    CHECK(e.stage() == "setup");
  }
  try {
    edit(model, Tensor(Shape{3, 6}), delete_spec(), cfg);
    FAIL("expected a PipelineError");
  } catch (const PipelineError& e) {
    CHECK(e.stage() == "inversion");
    CHECK(std::string(e.what()).rfind("stage inversion: ", 0) == 0);
  }
  const EditPrep prep = prepare_edit(model, input(6), delete_spec(), cfg);
  EditRunConfig longer = cfg;
  longer.schedule.steps = 10;
  CHECK_THROWS_AS(finish_edit(model, prep, delete_spec(), longer), PipelineError);
}

TEST_CASE("run directories hold every artifact") {
  const Denoiser model = tiny_model(7);
  const EditRunConfig cfg = tiny_run();
  const EditResult r = edit(model, input(7), delete_spec(), cfg);
  const auto dir = std::filesystem::temp_directory_path() / "aedit_run_dir_test";
  std::filesystem::remove_all(dir);
  write_run_dir(dir, r, {{"run", cfg.to_json()}, {"spec", delete_spec().to_json()}});
  for (const char* f : {"config.json", "trajectory.bin", "trajectory.json", "nulls.bin", "prompt_before.bin",
                        "prompt_after.bin", "output.bin", "diagnostics.csv"})
    CHECK_MESSAGE(std::filesystem::exists(dir / f), f);

  const LatentTrajectory traj = load_trajectory(dir / "trajectory.bin");
  for (int t = 0; t <= 5; ++t) CHECK(identical(traj.at(t), r.trajectory.at(t)));
  const auto side = nlohmann::json::parse(io::read_text(dir / "trajectory.json"));
  CHECK(side.at("T") == 5);
  CHECK(side.at("w") == 1.0);
  CHECK(side.at("schedule").at("steps") == 5);
  CHECK(identical(io::load_tensors(dir / "output.bin").at(0), r.edited));
  CHECK(identical(io::load_tensors(dir / "prompt_after.bin").at(0), r.prompt_after.matrix));

  std::istringstream csv(io::read_text(dir / "diagnostics.csv"));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "step,null_loss,attn_loss");
  int rows = 0;
  while (std::getline(csv, line)) {
    int t = 0;
    double nl = 0, al = 0;
    REQUIRE(std::sscanf(line.c_str(), "%d,%lf,%lf", &t, &nl, &al) == 3);
    CHECK(t == 5 - rows);
    // %.17g round-trips exactly.
    CHECK(nl == r.steps[static_cast<std::size_t>(rows)].null_loss);
    CHECK(al == r.steps[static_cast<std::size_t>(rows)].attn_loss);
    ++rows;
  }
  CHECK(rows == 5);
  std::filesystem::remove_all(dir);
}

TEST_CASE("run config JSON is strict and round-trips") {
  EditRunConfig c = tiny_run();
  c.eta = 0.02;
  c.suppression_sign_flipped = true;
  c.inversion_formula = InversionFormula::AsPrinted;
  c.attn_loss_enabled = false;
  const EditRunConfig back = EditRunConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());

  const EditRunConfig defaults = EditRunConfig::from_json(nlohmann::json::object());
  CHECK(defaults.w_denoise == 7.5);
  CHECK(defaults.eta == 0.01);
  CHECK(defaults.inner_iters == 10);
  CHECK(defaults.schedule.steps == 50);

  CHECK_THROWS_WITH_AS(EditRunConfig::from_json({{"etaa", 0.1}}), doctest::Contains("etaa"), ConfigError);
  CHECK_THROWS_WITH_AS(EditRunConfig::from_json({{"eta", "big"}}), doctest::Contains("eta"), ConfigError);
  CHECK_THROWS_WITH_AS(EditRunConfig::from_json({{"eta", -1.0}}), doctest::Contains("eta"), ConfigError);
  CHECK_THROWS_WITH_AS(EditRunConfig::from_json({{"inversion_formula", "approx"}}),
                       doctest::Contains("inversion_formula"), ConfigError);
  CHECK_THROWS_AS(EditRunConfig::from_json({{"schedule", {{"steps", 7}}}}), ConfigError);
}

TEST_CASE("regeneration is seeded") {
  const Denoiser model = tiny_model(8);
  const EditRunConfig cfg = tiny_run();
  CHECK(identical(regenerate(model, {1, 2}, 9, cfg), regenerate(model, {1, 2}, 9, cfg)));
  CHECK_FALSE(identical(regenerate(model, {1, 2}, 9, cfg), regenerate(model, {1, 2}, 10, cfg)));
}
