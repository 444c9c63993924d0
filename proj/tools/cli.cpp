#include "cli.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>

#include "CLI11.hpp"

#include "aedit/config.hpp"
#include "aedit/eval.hpp"
#include "aedit/pipeline.hpp"
#include "aedit/serialize.hpp"
#include "aedit/synthbench.hpp"
#include "aedit/training.hpp"

namespace aedit::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Missing or unreadable inputs; reported like configuration errors.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

json read_json_file(const fs::path& path) {
  if (!fs::exists(path)) throw InputError("no such file: " + path.string());
  try {
    return json::parse(io::read_text(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string absolute(const std::string& p) { return p.empty() ? p : fs::absolute(p).lexically_normal().string(); }

// ---- normalization: complete, validated snapshots ----

json normalize_train(const json& j) {
  config::require_keys(j, {"seed", "model", "data", "train"}, "");
  json out;
  std::uint64_t seed = 0;
  config::read(j, "seed", seed, "");
  out["seed"] = seed;
  out["model"] = DenoiserConfig::from_json(j.value("model", json::object())).to_json();

  const json data = j.value("data", json::object());
  config::require_keys(data, {"samples", "seed"}, "data.");
  std::size_t samples = 2000;
  std::uint64_t data_seed = 1;
  config::read(data, "samples", samples, "data.");
  config::read(data, "seed", data_seed, "data.");
  if (samples < 1) throw ConfigError("config key 'data.samples' must be >= 1");
  out["data"] = {{"samples", samples}, {"seed", data_seed}};

  const json t = j.value("train", json::object());
  config::require_keys(t, {"epochs", "lr", "optimizer", "momentum", "beta2", "adam_eps", "batch", "cond_dropout", "steps"},
                       "train.");
  TrainConfig tc;
  std::string optimizer = "adam";
  int steps = tc.schedule.steps;
  config::read(t, "epochs", tc.epochs, "train.");
  config::read(t, "lr", tc.lr, "train.");
  config::read(t, "optimizer", optimizer, "train.");
  config::read(t, "momentum", tc.momentum, "train.");
  config::read(t, "beta2", tc.beta2, "train.");
  config::read(t, "adam_eps", tc.adam_eps, "train.");
  config::read(t, "batch", tc.batch, "train.");
  config::read(t, "cond_dropout", tc.cond_dropout, "train.");
  config::read(t, "steps", steps, "train.");
  if (optimizer != "adam" && optimizer != "sgd") throw ConfigError("config key 'train.optimizer' must be \"adam\" or \"sgd\"");
  if (tc.epochs < 1) throw ConfigError("config key 'train.epochs' must be >= 1");
  if (!(tc.lr > 0.0)) throw ConfigError("config key 'train.lr' must be positive");
  if (tc.batch < 1) throw ConfigError("config key 'train.batch' must be >= 1");
  if (!(tc.cond_dropout >= 0.0 && tc.cond_dropout <= 1.0)) throw ConfigError("config key 'train.cond_dropout' must be in [0, 1]");
  const int train_steps = out["model"]["train_steps"].get<int>();
  if (steps < 1 || train_steps % steps != 0) throw ConfigError("config key 'train.steps' must divide 'model.train_steps'");
  out["train"] = {{"epochs", tc.epochs},     {"lr", tc.lr},       {"optimizer", optimizer},
                  {"momentum", tc.momentum}, {"beta2", tc.beta2}, {"adam_eps", tc.adam_eps},
                  {"batch", tc.batch},       {"cond_dropout", tc.cond_dropout}, {"steps", steps}};
  return out;
}

json normalize_gen_data(const json& j) {
  config::require_keys(j, {"n", "seed", "mix"}, "");
  std::size_t n = 300;
  std::uint64_t seed = 0;
  config::read(j, "n", n, "");
  config::read(j, "seed", seed, "");
  bench::GroupMix mix = bench::GroupMix::even(n);
  if (j.contains("mix")) {
    const json& m = j.at("mix");
    config::require_keys(m, {"add", "delete", "replace"}, "mix.");
    config::read(m, "add", mix.add, "mix.");
    config::read(m, "delete", mix.del, "mix.");
    config::read(m, "replace", mix.replace, "mix.");
    if (j.contains("n") && mix.total() != n) throw ConfigError("config key 'mix' does not add up to 'n'");
    n = mix.total();
  }
  if (n < 1) throw ConfigError("config key 'n' must be >= 1");
  return {{"n", n}, {"seed", seed}, {"mix", {{"add", mix.add}, {"delete", mix.del}, {"replace", mix.replace}}}};
}

json normalize_edit(const json& j) {
  config::require_keys(j, {"checkpoint", "dataset", "sample", "spec", "run", "dump_pgm"}, "");
  std::string checkpoint, dataset;
  int sample = -1;
  bool dump = false;
  config::read(j, "checkpoint", checkpoint, "");
  config::read(j, "dataset", dataset, "");
  config::read(j, "sample", sample, "");
  config::read(j, "dump_pgm", dump, "");
  if (checkpoint.empty()) throw ConfigError("config key 'checkpoint' is missing");
  if (dataset.empty()) throw ConfigError("config key 'dataset' is missing");
  if (sample < 0) throw ConfigError("config key 'sample' is missing or negative");
  json out{{"checkpoint", checkpoint},
           {"dataset", dataset},
           {"sample", sample},
           {"dump_pgm", dump},
           {"run", EditRunConfig::from_json(j.value("run", json::object())).to_json()}};
  out["spec"] = j.contains("spec") && !j.at("spec").is_null() ? EditSpec::from_json(j.at("spec")).to_json() : json(nullptr);
  return out;
}

json normalize_eval(const json& j) {
  config::require_keys(j, {"checkpoint", "dataset", "subset", "jobs", "run"}, "");
  std::string checkpoint, dataset;
  std::size_t subset = 0;
  int jobs = 1;
  config::read(j, "checkpoint", checkpoint, "");
  config::read(j, "dataset", dataset, "");
  config::read(j, "subset", subset, "");
  config::read(j, "jobs", jobs, "");
  if (checkpoint.empty()) throw ConfigError("config key 'checkpoint' is missing");
  if (dataset.empty()) throw ConfigError("config key 'dataset' is missing");
  if (jobs < 1) throw ConfigError("config key 'jobs' must be >= 1");
  return {{"checkpoint", checkpoint},
          {"dataset", dataset},
          {"subset", subset},
          {"jobs", jobs},
          {"run", EditRunConfig::from_json(j.value("run", json::object())).to_json()}};
}

json normalize(const std::string& command, const json& j) {
  if (command == "train") return normalize_train(j);
  if (command == "gen-data") return normalize_gen_data(j);
  if (command == "edit" || command == "reconstruct") return normalize_edit(j);
  if (command == "eval" || command == "ablate") return normalize_eval(j);
  throw ConfigError("unknown command '" + command + "'");
}

// Seed location inside each command's snapshot.
json::json_pointer seed_pointer(const std::string& command) {
  if (command == "train" || command == "gen-data") return json::json_pointer("/seed");
  return json::json_pointer("/run/seed");
}

std::vector<std::string> artifacts(const std::string& command, const json& cfg) {
  if (command == "train") return {"model.aedn", "loss.csv"};
  if (command == "gen-data") return {"index.json", "latents.bin"};
  if (command == "eval") return {"metrics.csv", "summary.json"};
  if (command == "ablate") return {"ablation.json", "ablation.txt"};
  std::vector<std::string> a{"config.json",     "trajectory.bin", "trajectory.json", "nulls.bin",
                             "prompt_before.bin", "prompt_after.bin", "output.bin",        "diagnostics.csv"};
  if (cfg.value("dump_pgm", false)) a.push_back("output.pgm");
  return a;
}

void write_manifest(const fs::path& dir, const std::string& command, const json& cfg, const std::string& config_path) {
  fs::create_directories(dir);
  const json manifest{{"command", command},
                      {"config_path", config_path},
                      {"config", cfg},
                      {"seed", cfg.at(seed_pointer(command))},
                      {"artifacts", artifacts(command, cfg)},
                      {"version", kVersion}};
  io::write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

// ---- commands ----

Denoiser load_checkpoint(const std::string& path) {
  if (!fs::exists(path)) throw InputError("no such checkpoint: " + path);
  return Denoiser::load(path);
}

std::vector<bench::BenchSample> load_samples(const std::string& dir) {
  if (!fs::exists(fs::path(dir) / "index.json")) throw InputError("no dataset index in " + dir);
  return bench::load_dataset(dir);
}

void write_pgm(const fs::path& path, const Tensor& latent) {
  const Tensor img = bench::from_patch_layout(latent);
  double lo = img[0], hi = img[0];
  for (double v : img.values()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  std::string out = "P5\n" + std::to_string(img.cols()) + " " + std::to_string(img.rows()) + "\n255\n";
  for (double v : img.values()) {
    const double u = hi > lo ? (v - lo) / (hi - lo) : 0.0;
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * u))));
  }
  io::write_text(path, out);
}

int cmd_train(const json& cfg, const fs::path& dir) {
  const DenoiserConfig mc = DenoiserConfig::from_json(cfg.at("model"));
  const json& t = cfg.at("train");
  TrainConfig tc;
  tc.epochs = t.at("epochs");
  tc.lr = t.at("lr");
  tc.optimizer = t.at("optimizer") == "sgd" ? Optimizer::SgdMomentum : Optimizer::Adam;
  tc.momentum = t.at("momentum");
  tc.beta2 = t.at("beta2");
  tc.adam_eps = t.at("adam_eps");
  tc.batch = t.at("batch");
  tc.cond_dropout = t.at("cond_dropout");
  tc.seed = cfg.at("seed");
  tc.schedule = {mc.train_steps, t.at("steps").get<int>(), mc.beta_start, mc.beta_end};

  std::vector<TrainingExample> data;
  for (bench::Composition& c :
       bench::make_training_set(cfg.at("data").at("samples"), cfg.at("data").at("seed").get<std::uint64_t>())) {
    data.push_back({std::move(c.latent), std::move(c.caption)});
  }
  Denoiser model(mc, tc.seed);
  const TrainResult r = train(model, data, tc, [](int epoch, double loss) {
    std::printf("epoch %d loss %.6f\n", epoch + 1, loss);
    std::fflush(stdout);
  });
  std::string csv = "epoch,loss\n";
  char line[64];
  std::snprintf(line, sizeof line, "0,%.17g\n", r.initial_loss);
  csv += line;
  for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) {
    std::snprintf(line, sizeof line, "%zu,%.17g\n", e + 1, r.epoch_loss[e]);
    csv += line;
  }
  io::write_text(dir / "loss.csv", csv);
  model.save(dir / "model.aedn", {{"train", tc.to_json()}, {"data", cfg.at("data")}});
  std::printf("initial loss %.6f, final loss %.6f\n", r.initial_loss, r.epoch_loss.back());
  return kOk;
}

int cmd_gen_data(const json& cfg, const fs::path& dir) {
  const json& m = cfg.at("mix");
  const bench::GroupMix mix{m.at("add"), m.at("delete"), m.at("replace")};
  const auto samples = bench::make_dataset(mix, cfg.at("seed").get<std::uint64_t>());
  bench::save_dataset(dir, samples, cfg);
  std::printf("%zu samples (add %zu, delete %zu, replace %zu)\n", samples.size(), mix.add, mix.del, mix.replace);
  return kOk;
}

int cmd_edit(const std::string& command, const json& cfg, const fs::path& dir) {
  const Denoiser model = load_checkpoint(cfg.at("checkpoint"));
  const auto samples = load_samples(cfg.at("dataset"));
  const int id = cfg.at("sample");
  if (id >= static_cast<int>(samples.size())) {
    throw ConfigError("config key 'sample' is " + std::to_string(id) + " but the dataset has " +
                      std::to_string(samples.size()) + " samples");
  }
  const bench::BenchSample& s = samples[static_cast<std::size_t>(id)];
  EditSpec spec = cfg.at("spec").is_null() ? s.edit : EditSpec::from_json(cfg.at("spec"));
  if (command == "reconstruct") {
    spec = {};
    spec.mode = EditMode::ReconstructOnly;
    spec.target_caption = s.caption;
  }
  const EditRunConfig run = EditRunConfig::from_json(cfg.at("run"));
  const EditResult r = edit(model, s.latent, spec, run);
  write_run_dir(dir, r, cfg);
  if (cfg.at("dump_pgm").get<bool>()) write_pgm(dir / "output.pgm", r.edited);
  if (spec.mode == EditMode::ReconstructOnly) {
    std::printf("fidelity: relative_mse %.6e (sample %d, T=%d, w=%g, null-opt %s)\n", relative_mse(r.edited, s.latent),
                id, run.schedule.steps, run.w_denoise, run.null_opt_enabled ? "on" : "off");
  } else {
    std::printf("edited sample %d (%s): alignment %.4f -> %.4f\n", id, to_string(spec.mode).c_str(),
                bench::alignment_score(s.latent, s.target_events), bench::alignment_score(r.edited, s.target_events));
  }
  return kOk;
}

std::vector<bench::BenchSample> subset(std::vector<bench::BenchSample> all, std::size_t n) {
  if (n == 0 || n >= all.size()) return all;
  // Evenly spaced so every group is represented.
  std::vector<bench::BenchSample> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(std::move(all[i * all.size() / n]));
  return out;
}

int cmd_eval(const std::string& command, const json& cfg, const fs::path& dir) {
  const Denoiser model = load_checkpoint(cfg.at("checkpoint"));
  const auto samples = subset(load_samples(cfg.at("dataset")), cfg.at("subset"));
  const EditRunConfig run = EditRunConfig::from_json(cfg.at("run"));
  const int jobs = cfg.at("jobs");
  try {
    if (command == "eval") {
      const eval::EvalReport report = eval::run_eval(model, samples, run, jobs);
      io::write_text(dir / "metrics.csv", report.metrics_csv());
      io::write_text(dir / "summary.json", report.summary().dump(2) + "\n");
      for (const eval::Row& row : report.rows) {
        std::printf("%-12s clap_like %.4f preservation %.4g fd %s\n", row.name.c_str(), row.clap_like,
                    row.preservation, row.fd ? std::to_string(*row.fd).c_str() : "n/a");
      }
    } else {
      const eval::AblationReport report = eval::run_ablation(model, samples, run, jobs);
      io::write_text(dir / "ablation.json", report.to_json().dump(2) + "\n");
      io::write_text(dir / "ablation.txt", report.table());
      std::fputs(report.table().c_str(), stdout);
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "aedit %s: %s\n", command.c_str(), e.what());
    return kEval;
  }
  return kOk;
}

}  // namespace

int execute(const std::string& command, const json& resolved, const std::string& run_dir,
            const std::string& config_path) {
  try {
    const json cfg = normalize(command, resolved);
    const fs::path dir(run_dir);
    write_manifest(dir, command, cfg, config_path);
    if (command == "train") return cmd_train(cfg, dir);
    if (command == "gen-data") return cmd_gen_data(cfg, dir);
    if (command == "edit" || command == "reconstruct") return cmd_edit(command, cfg, dir);
    return cmd_eval(command, cfg, dir);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "aedit %s: %s\n", command.c_str(), e.what());
    return kConfig;
  } catch (const InputError& e) {
    std::fprintf(stderr, "aedit %s: %s\n", command.c_str(), e.what());
    return kConfig;
  } catch (const io::FormatError& e) {
    std::fprintf(stderr, "aedit %s: %s\n", command.c_str(), e.what());
    return kConfig;
  } catch (const TrainingDivergence& e) {
    std::fprintf(stderr, "aedit %s: %s\n", command.c_str(), e.what());
    return kTraining;
  } catch (const PipelineError& e) {
    std::fprintf(stderr, "aedit %s: %s\n", command.c_str(), e.what());
    return kPipeline;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "aedit %s: %s\n", command.c_str(), e.what());
    return kFailure;
  }
}

namespace {

struct Toggles {
  bool no_null = false, no_eot = false, no_attn = false;
};

void add_toggles(CLI::App* sub, Toggles& t) {
  sub->add_flag("--no-null-opt", t.no_null, "Use a constant null embedding instead of optimizing it");
  sub->add_flag("--no-eot-sup", t.no_eot, "Skip the EOT singular-value suppression");
  sub->add_flag("--no-attn-loss", t.no_attn, "Skip the attention-loss prompt refinement");
}

void apply_toggles(json& cfg, const Toggles& t) {
  if (t.no_null) cfg["run"]["null_opt_enabled"] = false;
  if (t.no_eot) cfg["run"]["eot_sup_enabled"] = false;
  if (t.no_attn) cfg["run"]["attn_loss_enabled"] = false;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Text-guided latent editing on a synthetic event benchmark", "aedit"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  std::string config_path, out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> checkpoint, dataset, spec_path;
  std::optional<int> sample, epochs, jobs;
  std::optional<std::size_t> samples_n, subset_n, n;
  bool dump_pgm = false;
  Toggles toggles;
  std::string manifest_path;

  auto common = [&](CLI::App* sub, bool with_seed) {
    sub->add_option("--config", config_path, "JSON config; flags override it")->check(CLI::ExistingFile);
    sub->add_option("--out", out, "Run directory")->required();
    if (with_seed) sub->add_option("--seed", seed, "Seed (overrides AEDIT_SEED and the config)");
  };

  CLI::App* train = app.add_subcommand("train", "Train the denoiser");
  common(train, true);
  train->add_option("--epochs", epochs);
  train->add_option("--samples", samples_n, "Training compositions");

  CLI::App* gen = app.add_subcommand("gen-data", "Write a benchmark dataset");
  common(gen, true);
  gen->add_option("--n", n, "Sample count (split evenly across groups)");

  std::vector<CLI::App*> editing;
  for (const char* name : {"edit", "reconstruct"}) {
    CLI::App* sub = app.add_subcommand(name, std::string(name) == "edit" ? "Edit one benchmark sample"
                                                                           : "Invert and reconstruct one sample");
    common(sub, true);
    sub->add_option("--checkpoint", checkpoint);
    sub->add_option("--dataset", dataset);
    sub->add_option("--sample", sample, "Sample id");
    if (std::string(name) == "edit") sub->add_option("--spec", spec_path, "Edit spec JSON (default: the sample's)");
    sub->add_flag("--dump-pgm", dump_pgm, "Also write output.pgm");
    add_toggles(sub, toggles);
    editing.push_back(sub);
  }

  std::vector<CLI::App*> evaluating;
  for (const char* name : {"eval", "ablate"}) {
    CLI::App* sub = app.add_subcommand(name, std::string(name) == "eval" ? "Benchmark metrics" : "Ablation table");
    common(sub, true);
    sub->add_option("--checkpoint", checkpoint);
    sub->add_option("--dataset", dataset);
    sub->add_option("--subset", subset_n, "Evaluate N evenly spaced samples");
    sub->add_option("--jobs", jobs, "Worker threads");
    add_toggles(sub, toggles);
    evaluating.push_back(sub);
  }

  CLI::App* replay = app.add_subcommand("replay", "Re-run a command from its manifest");
  replay->add_option("manifest", manifest_path)->required()->check(CLI::ExistingFile);
  replay->add_option("--out", out, "Run directory (default: the manifest's)");

  std::vector<std::string> rev(args.rbegin(), args.rend() - 1);
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();

  if (command == "replay") {
    try {
      const json m = read_json_file(manifest_path);
      config::require_keys(m, {"command", "config_path", "config", "seed", "artifacts", "version"}, "manifest.");
      const std::string dir = out.empty() ? fs::path(manifest_path).parent_path().string() : out;
      return execute(m.at("command").get<std::string>(), m.at("config"), dir.empty() ? "." : dir,
                     m.at("config_path").get<std::string>());
    } catch (const std::exception& e) {
      std::fprintf(stderr, "aedit replay: %s\n", e.what());
      return kConfig;
    }
  }

  json cfg = json::object();
  try {
    if (!config_path.empty()) cfg = read_json_file(config_path);
    if (!cfg.is_object()) throw ConfigError("config file must hold a JSON object");
    const json::json_pointer sp = seed_pointer(command);
    if (const char* env = std::getenv("AEDIT_SEED")) {
      try {
        std::size_t used = 0;
        const std::uint64_t v = std::stoull(env, &used);
        if (used != std::string(env).size()) throw std::invalid_argument(env);
        cfg[sp] = v;
      } catch (const std::logic_error&) {
        throw ConfigError(std::string("AEDIT_SEED is not an unsigned integer: '") + env + "'");
      }
    }
    if (seed) cfg[sp] = *seed;
    if (command == "train") {
      if (epochs) cfg["train"]["epochs"] = *epochs;
      if (samples_n) cfg["data"]["samples"] = *samples_n;
    } else if (command == "gen-data") {
      if (n) cfg["n"] = *n;
    } else {
      if (checkpoint) cfg["checkpoint"] = absolute(*checkpoint);
      if (dataset) cfg["dataset"] = absolute(*dataset);
      if (cfg.contains("checkpoint") && cfg["checkpoint"].is_string()) cfg["checkpoint"] = absolute(cfg["checkpoint"]);
      if (cfg.contains("dataset") && cfg["dataset"].is_string()) cfg["dataset"] = absolute(cfg["dataset"]);
      apply_toggles(cfg, toggles);
      if (command == "edit" || command == "reconstruct") {
        if (sample) cfg["sample"] = *sample;
        if (spec_path) cfg["spec"] = read_json_file(*spec_path);
        if (dump_pgm) cfg["dump_pgm"] = true;
      } else {
        if (subset_n) cfg["subset"] = *subset_n;
        if (jobs) cfg["jobs"] = *jobs;
      }
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "aedit %s: %s\n", command.c_str(), e.what());
    return kConfig;
  }
  return execute(command, cfg, out, config_path.empty() ? "" : absolute(config_path));
}

}  // namespace aedit::cli
