#include "aedit/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <thread>

namespace aedit::eval {

std::vector<int> preserved_tokens(const bench::BenchSample& s) {
  std::vector<int> keep;
  const auto& neg = s.edit.negative_positions;
  for (std::size_t k = 0; k < s.edit.target_caption.size(); ++k)
    if (std::find(neg.begin(), neg.end(), k) == neg.end()) keep.push_back(s.edit.target_caption[k]);
  return keep;
}

Tensor features(const Denoiser& model, const Tensor& latent) {
  return model.forward(latent, 1, model.null_prompt().matrix).features.detach();
}

LatentMetrics measure(const Denoiser& model, const bench::BenchSample& s, const Tensor& latent,
                      const Tensor& original_features) {
  LatentMetrics m;
  m.clap_like = bench::alignment_score(latent, s.target_events);
  m.preservation = bench::preservation_error(latent, s.latent, preserved_tokens(s));
  const Tensor f = features(model, latent);
  for (std::size_t i = 0; i < f.size(); ++i) m.fd_contrib += (f[i] - original_features[i]) * (f[i] - original_features[i]);
  return m;
}

double median(std::vector<double> v) {
  if (v.empty()) throw EvalError("median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

nlohmann::json Row::to_json() const {
  return {{"name", name},
          {"clap_like", clap_like},
          {"preservation", preservation},
          {"fd", fd ? nlohmann::json(*fd) : nlohmann::json(nullptr)}};
}

Row summarize(const std::string& name, const std::vector<LatentMetrics>& m, const Tensor& feats,
              const Tensor& original_feats) {
  Row r;
  r.name = name;
  std::vector<double> a, p;
  for (const LatentMetrics& x : m) {
    a.push_back(x.clap_like);
    p.push_back(x.preservation);
  }
  r.clap_like = median(a);
  r.preservation = median(p);
  if (feats.rows() > feats.cols()) r.fd = bench::frechet_distance(feats, original_feats);
  return r;
}

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& body) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        body(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::min<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), std::max<std::size_t>(n, 1));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  for (const std::exception_ptr& e : errors)
    if (e) std::rethrow_exception(e);
}

namespace {

Tensor stack(const std::vector<Tensor>& rows) {
  if (rows.empty()) return {};
  const std::size_t d = rows.front().size();
  std::vector<double> v;
  v.reserve(rows.size() * d);
  for (const Tensor& r : rows) v.insert(v.end(), r.values().begin(), r.values().end());
  return Tensor::matrix(rows.size(), d, std::move(v));
}

void require_samples(const std::vector<bench::BenchSample>& samples) {
  if (samples.empty()) throw EvalError("no samples to evaluate");
}

}  // namespace

std::string EvalReport::metrics_csv() const {
  std::string csv = "sample_id,group,clap_like,preservation,fd_contrib\n";
  char line[256];
  for (const SampleRecord& s : samples) {
    std::snprintf(line, sizeof line, "%d,%s,%.17g,%.17g,%.17g\n", s.id, s.group.c_str(), s.edited.clap_like,
                  s.edited.preservation, s.edited.fd_contrib);
    csv += line;
  }
  return csv;
}

nlohmann::json EvalReport::summary() const {
  nlohmann::json rows_json = nlohmann::json::array();
  for (const Row& r : rows) rows_json.push_back(r.to_json());
  return {{"samples", samples.size()}, {"rows", rows_json}};
}

EvalReport run_eval(const Denoiser& model, const std::vector<bench::BenchSample>& samples, const EditRunConfig& cfg,
                    int jobs) {
  require_samples(samples);
  const std::size_t n = samples.size();
  EvalReport report;
  report.samples.resize(n);
  std::vector<Tensor> f_orig(n), f_regen(n), f_edit(n);
  parallel_for(n, jobs, [&](std::size_t i) {
    const bench::BenchSample& s = samples[i];
    SampleRecord& rec = report.samples[i];
    rec.id = s.id;
    rec.group = s.group;
    f_orig[i] = features(model, s.latent);
    const Tensor regen =
        regenerate(model, s.target_events, bench::derive_seed(cfg.seed, static_cast<std::uint64_t>(s.id)), cfg);
    const Tensor edited = edit(model, s.latent, s.edit, cfg).edited;
    rec.original = measure(model, s, s.latent, f_orig[i]);
    rec.regenerated = measure(model, s, regen, f_orig[i]);
    rec.edited = measure(model, s, edited, f_orig[i]);
    f_regen[i] = features(model, regen);
    f_edit[i] = features(model, edited);
  });

  std::vector<LatentMetrics> mo, mr, me;
  for (const SampleRecord& r : report.samples) {
    mo.push_back(r.original);
    mr.push_back(r.regenerated);
    me.push_back(r.edited);
  }
  const Tensor fo = stack(f_orig);
  report.rows.push_back(summarize("original", mo, fo, fo));
  report.rows.push_back(summarize("regenerated", mr, stack(f_regen), fo));
  report.rows.push_back(summarize("edited", me, stack(f_edit), fo));
  return report;
}

nlohmann::json Check::to_json() const { return {{"name", name}, {"pass", pass}, {"full", full}, {"ablated", ablated}}; }

nlohmann::json AblationReport::to_json() const {
  nlohmann::json rows_json = nlohmann::json::array(), checks_json = nlohmann::json::array();
  for (const Row& r : rows) rows_json.push_back(r.to_json());
  for (const Check& c : checks) checks_json.push_back(c.to_json());
  return {{"rows", rows_json}, {"checks", checks_json}, {"sign_flipped_variant", sign_flipped.to_json()}};
}

std::string AblationReport::table() const {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-16s %12s %14s %12s\n", "method", "clap_like", "preservation", "fd");
  out += line;
  auto row = [&](const Row& r) {
    const std::string fd = r.fd ? std::to_string(*r.fd) : "n/a";
    std::snprintf(line, sizeof line, "%-16s %12.6f %14.6g %12s\n", r.name.c_str(), r.clap_like, r.preservation,
                  fd.c_str());
    out += line;
  };
  for (const Row& r : rows) row(r);
  out += "variant:\n";
  row(sign_flipped);
  for (const Check& c : checks) {
    std::snprintf(line, sizeof line, "%s  %s (full %.6g, ablated %.6g)\n", c.pass ? "PASS" : "FAIL", c.name.c_str(),
                  c.full, c.ablated);
    out += line;
  }
  return out;
}

AblationReport run_ablation(const Denoiser& model, const std::vector<bench::BenchSample>& samples,
                            const EditRunConfig& cfg, int jobs) {
  require_samples(samples);
  const std::size_t n = samples.size();
  EditRunConfig no_null = cfg, no_eot = cfg, flipped = cfg;
  no_null.null_opt_enabled = false;
  no_eot.eot_sup_enabled = false;
  flipped.suppression_sign_flipped = !cfg.suppression_sign_flipped;

  enum { kFull, kNoNull, kNoEot, kFlipped, kVariants };
  std::vector<std::vector<LatentMetrics>> m(kVariants, std::vector<LatentMetrics>(n));
  std::vector<std::vector<Tensor>> f(kVariants, std::vector<Tensor>(n));
  std::vector<Tensor> f_orig(n);
  parallel_for(n, jobs, [&](std::size_t i) {
    const bench::BenchSample& s = samples[i];
    f_orig[i] = features(model, s.latent);
    auto record = [&](int k, const Tensor& latent) {
      m[k][i] = measure(model, s, latent, f_orig[i]);
      f[k][i] = features(model, latent);
    };
    const EditPrep prep = prepare_edit(model, s.latent, s.edit, cfg);
    record(kFull, finish_edit(model, prep, s.edit, cfg).edited);
    record(kNoEot, finish_edit(model, prep, s.edit, no_eot).edited);
    record(kFlipped, finish_edit(model, prep, s.edit, flipped).edited);
    record(kNoNull, edit(model, s.latent, s.edit, no_null).edited);
  });

  const Tensor fo = stack(f_orig);
  AblationReport report;
  report.rows.push_back(summarize("full", m[kFull], stack(f[kFull]), fo));
  report.rows.push_back(summarize("w/o null-opt", m[kNoNull], stack(f[kNoNull]), fo));
  report.rows.push_back(summarize("w/o eot-sup", m[kNoEot], stack(f[kNoEot]), fo));
  report.sign_flipped = summarize(cfg.suppression_sign_flipped ? "exp(+a*s)" : "exp(-a*s)", m[kFlipped],
                                  stack(f[kFlipped]), fo);

  const Row& full = report.rows[0];
  const Row& nn = report.rows[1];
  const Row& ne = report.rows[2];
  report.checks.push_back({"preservation degrades w/o null-opt", nn.preservation > full.preservation,
                           full.preservation, nn.preservation});
  report.checks.push_back({"alignment degrades w/o eot-sup", ne.clap_like < full.clap_like, full.clap_like, ne.clap_like});
  if (full.fd && nn.fd) report.checks.push_back({"fd to original grows w/o null-opt", *nn.fd > *full.fd, *full.fd, *nn.fd});
  return report;
}

}  // namespace aedit::eval
