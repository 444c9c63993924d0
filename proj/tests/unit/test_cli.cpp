#include <cstdlib>
#include <filesystem>
#include <random>

#include "doctest.h"

#include "aedit/denoiser.hpp"
#include "aedit/serialize.hpp"
#include "aedit/synthbench.hpp"
#include "cli.hpp"
#include "support.hpp"

using namespace aedit;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// A small benchmark-shaped model and a six-sample dataset, written once.
struct Workspace {
  fs::path root = fs::temp_directory_path() / "aedit_cli_test";
  fs::path checkpoint = root / "model.aedn";
  fs::path dataset = root / "data";

  Workspace() {
    fs::remove_all(root);
    fs::create_directories(root);
    DenoiserConfig c;
    c.latent_tokens = 64;
    c.patch_dim = 16;
    c.hidden = 8;
    c.embed_dim = 5;
    c.heads = 2;
    c.ffn_hidden = 8;
    c.prompt_len = 5;
    c.vocab_size = 16;
    c.train_steps = 20;
    Denoiser m(c, 1);
    std::mt19937_64 rng(2);
    m.mutable_params().out_proj = testing::random_normal(rng, {c.hidden, c.patch_dim}, 0.3);
    m.mutable_params().skip_gain = testing::random_normal(rng, {1, c.patch_dim}, 0.5);
    m.save(checkpoint);
    bench::save_dataset(dataset, bench::make_dataset(bench::GroupMix::even(6), 3), json::object());
  }

  fs::path write_config(const std::string& name, const json& j) const {
    const fs::path p = root / name;
    io::write_text(p, j.dump());
    return p;
  }

  json run_config() const {
    return {{"schedule", {{"train_steps", 20}, {"steps", 5}}}, {"inner_iters", 2}};
  }
};

const Workspace& workspace() {
  static const Workspace w;
  return w;
}

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "aedit");
  return cli::run(args);
}

int run_edit(const fs::path& out, std::vector<std::string> extra = {}) {
  const Workspace& w = workspace();
  const fs::path cfg = w.write_config("edit.json", {{"run", w.run_config()}});
  std::vector<std::string> args{"edit",       "--config",   cfg.string(), "--checkpoint", w.checkpoint.string(),
                                "--dataset", w.dataset.string(), "--sample", "3", "--out", out.string()};
  args.insert(args.end(), extra.begin(), extra.end());
  return run(args);
}

void check_same_dir(const fs::path& a, const fs::path& b) {
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    const fs::path other = b / e.path().filename();
    REQUIRE_MESSAGE(fs::exists(other), other.string());
    CHECK_MESSAGE(io::read_text(e.path()) == io::read_text(other), e.path().filename().string());
    ++files;
  }
  CHECK(files == static_cast<std::size_t>(std::distance(fs::directory_iterator(b), fs::directory_iterator{})));
}

}  // namespace

TEST_CASE("edit writes every listed artifact and a manifest") {
  const fs::path out = workspace().root / "edit1";
  REQUIRE(run_edit(out, {"--dump-pgm"}) == cli::kOk);
  const json m = json::parse(io::read_text(out / "manifest.json"));
  CHECK(m.at("command") == "edit");
  CHECK(m.at("version") == cli::kVersion);
  CHECK(m.at("seed") == m.at("config").at("run").at("seed"));
  for (const auto& f : m.at("artifacts")) CHECK_MESSAGE(fs::exists(out / f.get<std::string>()), f);

  const std::string pgm = io::read_text(out / "output.pgm");
  CHECK(pgm.rfind("P5\n32 32\n255\n", 0) == 0);
  CHECK(pgm.size() == 13 + 32 * 32);
}

TEST_CASE("edit runs are byte-identical and replay reproduces them") {
  const fs::path a = workspace().root / "edit_a", b = workspace().root / "edit_b", c = workspace().root / "edit_c";
  REQUIRE(run_edit(a) == cli::kOk);
  REQUIRE(run_edit(b) == cli::kOk);
  check_same_dir(a, b);
  REQUIRE(run({"replay", (a / "manifest.json").string(), "--out", c.string()}) == cli::kOk);
  check_same_dir(a, c);
}

TEST_CASE("seed precedence: flag over environment over config") {
  const fs::path a = workspace().root / "seed_a", b = workspace().root / "seed_b";
  ::setenv("AEDIT_SEED", "17", 1);
  REQUIRE(run_edit(a) == cli::kOk);
  REQUIRE(run_edit(b, {"--seed", "23"}) == cli::kOk);
  CHECK(json::parse(io::read_text(a / "manifest.json")).at("seed") == 17);
  CHECK(json::parse(io::read_text(b / "manifest.json")).at("seed") == 23);
  ::setenv("AEDIT_SEED", "seventeen", 1);
  CHECK(run_edit(workspace().root / "seed_c") == cli::kConfig);
  ::unsetenv("AEDIT_SEED");
}

TEST_CASE("eval over an evenly spaced subset") {
  const Workspace& w = workspace();
  const fs::path cfg = w.write_config("eval.json", {{"run", w.run_config()}});
  const fs::path out = w.root / "eval";
  REQUIRE(run({"eval", "--config", cfg.string(), "--checkpoint", w.checkpoint.string(), "--dataset", w.dataset.string(),
               "--subset", "3", "--out", out.string()}) == cli::kOk);
  const std::string csv = io::read_text(out / "metrics.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
  const json summary = json::parse(io::read_text(out / "summary.json"));
  CHECK_FALSE(summary.empty());
}

TEST_CASE("exit codes") {
  const Workspace& w = workspace();
  const fs::path out = w.root / "bad";
  CHECK(run({"edit", "--bogus"}) == cli::kConfig);
  CHECK(run({"edit", "--checkpoint", (w.root / "missing.aedn").string(), "--dataset", w.dataset.string(), "--sample",
             "0", "--out", out.string()}) == cli::kConfig);
  CHECK(run({"edit", "--checkpoint", w.checkpoint.string(), "--dataset", w.dataset.string(), "--sample", "99", "--out",
             out.string()}) == cli::kConfig);
  const fs::path typo = w.write_config("typo.json", {{"run", {{"etaa", 0.1}}}});
  CHECK(run({"edit", "--config", typo.string(), "--checkpoint", w.checkpoint.string(), "--dataset", w.dataset.string(),
             "--sample", "0", "--out", out.string()}) == cli::kConfig);
  // Four words do not fit a five-slot prompt (SOT + words + at least one EOT).
  const fs::path spec = w.write_config(
      "spec.json", {{"mode", "delete"}, {"target_caption", {1, 2, 3, 4}}, {"negative_positions", {1}}});
  const fs::path cfg = w.write_config("edit_small.json", {{"run", w.run_config()}});
  CHECK(run({"edit", "--config", cfg.string(), "--checkpoint", w.checkpoint.string(), "--dataset", w.dataset.string(),
             "--sample", "0", "--spec", spec.string(), "--out", out.string()}) == cli::kPipeline);
}
