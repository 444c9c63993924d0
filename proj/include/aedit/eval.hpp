#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "aedit/denoiser.hpp"
#include "aedit/pipeline.hpp"
#include "aedit/synthbench.hpp"

// Benchmark harness: per-sample metrics for original / regenerated / edited
// latents, and the three-row ablation.
namespace aedit::eval {

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caption tokens an edit is meant to keep (non-negative positions).
std::vector<int> preserved_tokens(const bench::BenchSample& s);

// Pooled first-block activations at t = 1 under the null prompt.
Tensor features(const Denoiser& model, const Tensor& latent);

struct LatentMetrics {
  double clap_like = 0.0;     // alignment with the sample's target events
  double preservation = 0.0;  // preservation_error against the original
  double fd_contrib = 0.0;    // |phi(latent) - phi(original)|^2
};

LatentMetrics measure(const Denoiser& model, const bench::BenchSample& s, const Tensor& latent,
                      const Tensor& original_features);

struct Row {
  std::string name;
  double clap_like = 0.0;     // median
  double preservation = 0.0;  // median
  std::optional<double> fd;   // FD to the original set; unset below dim + 1 samples
  nlohmann::json to_json() const;
};

Row summarize(const std::string& name, const std::vector<LatentMetrics>& m, const Tensor& feats,
              const Tensor& original_feats);

double median(std::vector<double> v);

// Runs `body(i)` for i in [0, n) on `jobs` threads. Exceptions are rethrown
// for the lowest failing index.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& body);

struct SampleRecord {
  int id = 0;
  std::string group;
  LatentMetrics original, regenerated, edited;
};

struct EvalReport {
  std::vector<SampleRecord> samples;  // dataset order
  std::vector<Row> rows;              // original, regenerated, edited
  std::string metrics_csv() const;    // edited metrics, one line per sample
  nlohmann::json summary() const;
};

// Regeneration noise is seeded per sample from cfg.seed.
EvalReport run_eval(const Denoiser& model, const std::vector<bench::BenchSample>& samples, const EditRunConfig& cfg,
                    int jobs);

struct Check {
  std::string name;
  bool pass = false;
  double full = 0.0, ablated = 0.0;
  nlohmann::json to_json() const;
};

struct AblationReport {
  std::vector<Row> rows;  // full, w/o null-opt, w/o eot-sup
  std::vector<Check> checks;
  Row sign_flipped;  // full method with the opposite exponent sign in the singular-value reweighting
  nlohmann::json to_json() const;
  std::string table() const;
};

AblationReport run_ablation(const Denoiser& model, const std::vector<bench::BenchSample>& samples,
                            const EditRunConfig& cfg, int jobs);

}  // namespace aedit::eval
