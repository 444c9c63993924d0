#include "aedit/synthbench.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>

#include "aedit/linalg.hpp"
#include "aedit/ops.hpp"
#include "aedit/serialize.hpp"

namespace aedit::bench {

namespace {

constexpr std::array<std::array<int, 2>, kVocab> kWavevectors{{{1, 0},
                                                               {0, 1},
                                                               {1, 1},
                                                               {1, -1},
                                                               {2, 0},
                                                               {0, 2},
                                                               {2, 1},
                                                               {1, 2},
                                                               {2, -1},
                                                               {1, -2},
                                                               {3, 0},
                                                               {0, 3},
                                                               {2, 2},
                                                               {2, -2},
                                                               {3, 1},
                                                               {1, 3}}};

void check_id(int id) {
  if (id < 0 || id >= kVocab) throw std::out_of_range("event id " + std::to_string(id) + " outside [0, 16)");
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double amplitude(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.75, 1.25);
  return u(rng) * static_cast<double>(kGrid);
}

// Distinct random event ids.
std::vector<int> draw_events(std::size_t count, std::mt19937_64& rng) {
  std::vector<int> ids(kVocab);
  for (int i = 0; i < kVocab; ++i) ids[static_cast<std::size_t>(i)] = i;
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, ids.size() - 1);
    std::swap(ids[i], ids[pick(rng)]);
  }
  ids.resize(count);
  return ids;
}

int draw_absent(const std::vector<int>& present, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick(0, kVocab - 1);
  for (;;) {
    const int id = pick(rng);
    if (std::find(present.begin(), present.end(), id) == present.end()) return id;
  }
}

std::vector<double> noise(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, kNoiseStd);
  std::vector<double> v(kGrid * kGrid);
  for (double& x : v) x = n(rng);
  return v;
}

void accumulate(std::vector<double>& acc, int id, double amp) {
  const auto p = event_pattern(id).values();
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += amp * p[i];
}

Tensor latent_of(std::vector<double> v) { return Tensor(Shape{kGrid * kGrid / (kPatch * kPatch), kPatch * kPatch}, std::move(v)); }

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t id) { return splitmix(splitmix(base) ^ id); }

Tensor event_image(int id) {
  check_id(id);
  const auto [kx, ky] = kWavevectors[static_cast<std::size_t>(id)];
  std::vector<double> v(kGrid * kGrid);
  const double step = 2.0 * std::numbers::pi / static_cast<double>(kGrid);
  for (std::size_t y = 0; y < kGrid; ++y)
    for (std::size_t x = 0; x < kGrid; ++x)
      v[y * kGrid + x] = std::cos(step * (kx * static_cast<double>(x) + ky * static_cast<double>(y)));
  const double norm = std::sqrt(dot(v, v));
  for (double& x : v) x /= norm;
  return Tensor::matrix(kGrid, kGrid, std::move(v));
}

const Tensor& event_pattern(int id) {
  check_id(id);
  static const std::vector<Tensor> table = [] {
    std::vector<Tensor> t;
    for (int i = 0; i < kVocab; ++i) t.push_back(to_patch_layout(event_image(i)));
    return t;
  }();
  return table[static_cast<std::size_t>(id)];
}

Tensor to_patch_layout(const Tensor& image) {
  if (image.shape() != Shape{kGrid, kGrid}) throw ShapeError("expected a 32x32 image, got " + shape_string(image.shape()));
  const std::size_t per_row = kGrid / kPatch;
  std::vector<double> out(kGrid * kGrid);
  for (std::size_t y = 0; y < kGrid; ++y)
    for (std::size_t x = 0; x < kGrid; ++x) {
      const std::size_t patch = (y / kPatch) * per_row + x / kPatch;
      const std::size_t cell = (y % kPatch) * kPatch + x % kPatch;
      out[patch * kPatch * kPatch + cell] = image.at(y, x);
    }
  return latent_of(std::move(out));
}

Tensor from_patch_layout(const Tensor& latent) {
  const Shape expected{kGrid * kGrid / (kPatch * kPatch), kPatch * kPatch};
  if (latent.shape() != expected) throw ShapeError("expected a 64x16 latent, got " + shape_string(latent.shape()));
  const std::size_t per_row = kGrid / kPatch;
  std::vector<double> out(kGrid * kGrid);
  for (std::size_t y = 0; y < kGrid; ++y)
    for (std::size_t x = 0; x < kGrid; ++x) {
      const std::size_t patch = (y / kPatch) * per_row + x / kPatch;
      const std::size_t cell = (y % kPatch) * kPatch + x % kPatch;
      out[y * kGrid + x] = latent.at(patch, cell);
    }
  return Tensor::matrix(kGrid, kGrid, std::move(out));
}

GroupMix GroupMix::even(std::size_t n) {
  GroupMix m{n / 3, n / 3, n / 3};
  std::size_t rest = n - m.total();
  if (rest > 0) ++m.add, --rest;
  if (rest > 0) ++m.del;
  return m;
}

std::vector<BenchSample> make_dataset(const GroupMix& mix, std::uint64_t seed) {
  std::vector<BenchSample> out;
  out.reserve(mix.total());
  auto next = [&](const char* group) {
    BenchSample s;
    s.id = static_cast<int>(out.size());
    s.group = group;
    return s;
  };
  std::uniform_int_distribution<std::size_t> multi(2, 3);

  for (std::size_t i = 0; i < mix.add; ++i) {
    BenchSample s = next("add");
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(s.id)));
    s.caption = draw_events(1, rng);
    const int added = draw_absent(s.caption, rng);
    std::vector<double> base = noise(rng);
    accumulate(base, s.caption[0], amplitude(rng));
    std::vector<double> target = base;
    accumulate(target, added, amplitude(rng));
    s.latent = latent_of(std::move(base));
    s.target_latent = latent_of(std::move(target));
    s.edit.mode = EditMode::Add;
    s.edit.target_caption = {s.caption[0], added};
    s.edit.negative_positions = {1};
    s.target_events = s.edit.target_caption;
    out.push_back(std::move(s));
  }

  for (std::size_t i = 0; i < mix.del + mix.replace; ++i) {
    const bool del = i < mix.del;
    BenchSample s = next(del ? "delete" : "replace");
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(s.id)));
    s.caption = draw_events(multi(rng), rng);
    std::uniform_int_distribution<std::size_t> pick(0, s.caption.size() - 1);
    const std::size_t j = pick(rng);
    std::vector<double> base = noise(rng);
    std::vector<double> amps;
    for (int id : s.caption) {
      amps.push_back(amplitude(rng));
      accumulate(base, id, amps.back());
    }
    std::vector<double> target = base;
    accumulate(target, s.caption[j], -amps[j]);
    s.edit.target_caption = s.caption;
    s.edit.negative_positions = {j};
    if (del) {
      s.edit.mode = EditMode::Delete;
      for (std::size_t k = 0; k < s.caption.size(); ++k)
        if (k != j) s.target_events.push_back(s.caption[k]);
    } else {
      s.edit.mode = EditMode::Replace;
      const int replacement = draw_absent(s.caption, rng);
      accumulate(target, replacement, amplitude(rng));
      s.edit.target_caption[j] = replacement;
      s.target_events = s.edit.target_caption;
    }
    s.latent = latent_of(std::move(base));
    s.target_latent = latent_of(std::move(target));
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Composition> make_training_set(std::size_t n, std::uint64_t seed) {
  std::vector<Composition> out;
  out.reserve(n);
  std::uniform_int_distribution<std::size_t> count(1, 3);
  for (std::size_t i = 0; i < n; ++i) {
    std::mt19937_64 rng(derive_seed(seed, i));
    Composition c;
    c.caption = draw_events(count(rng), rng);
    std::vector<double> v = noise(rng);
    for (int id : c.caption) accumulate(v, id, amplitude(rng));
    c.latent = latent_of(std::move(v));
    out.push_back(std::move(c));
  }
  return out;
}

double alignment_score(const Tensor& latent, const std::vector<int>& caption) {
  if (caption.empty()) throw std::invalid_argument("alignment needs a nonempty caption");
  if (latent.shape() != event_pattern(0).shape()) throw ShapeError("latent shape " + shape_string(latent.shape()));
  const double norm = std::sqrt(dot(latent.values(), latent.values()));
  if (norm == 0.0) return 0.0;
  double total = 0.0;
  for (int id : caption) total += dot(latent.values(), event_pattern(id).values()) / norm;
  return total / static_cast<double>(caption.size());
}

double preservation_error(const Tensor& edited, const Tensor& original, const std::vector<int>& preserved) {
  if (edited.shape() != original.shape()) {
    throw ShapeError("preservation shapes " + shape_string(edited.shape()) + " vs " + shape_string(original.shape()));
  }
  std::vector<double> diff(edited.size());
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = edited[i] - original[i];
  // Gram-Schmidt over the preserved patterns.
  std::vector<std::vector<double>> basis;
  for (int id : preserved) {
    const auto p = event_pattern(id).values();
    std::vector<double> q(p.begin(), p.end());
    for (const auto& b : basis) {
      const double c = dot(q, b);
      for (std::size_t i = 0; i < q.size(); ++i) q[i] -= c * b[i];
    }
    const double n = std::sqrt(dot(q, q));
    if (n < 1e-12) continue;
    for (double& x : q) x /= n;
    basis.push_back(std::move(q));
  }
  double energy = 0.0;
  for (const auto& b : basis) {
    const double c = dot(diff, b);
    energy += c * c;
  }
  return energy / static_cast<double>(diff.size());
}

namespace {

struct Moments {
  std::vector<double> mean;
  Tensor cov;
};

Moments moments(const Tensor& f) {
  const std::size_t n = f.rows(), d = f.cols();
  Moments m;
  m.mean.assign(d, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) m.mean[c] += f.at(r, c);
  for (double& x : m.mean) x /= static_cast<double>(n);
  std::vector<double> cov(d * d, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t i = 0; i < d; ++i) {
      const double di = f.at(r, i) - m.mean[i];
      for (std::size_t j = 0; j < d; ++j) cov[i * d + j] += di * (f.at(r, j) - m.mean[j]);
    }
  for (double& x : cov) x /= static_cast<double>(n - 1);
  m.cov = Tensor::matrix(d, d, std::move(cov));
  return m;
}

double trace(const Tensor& m) {
  double t = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i) t += m.at(i, i);
  return t;
}

}  // namespace

double frechet_distance(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols()) {
    throw ShapeError("feature sets " + shape_string(a.shape()) + " and " + shape_string(b.shape()) + " do not match");
  }
  const std::size_t d = a.cols();
  if (a.rows() < d + 1 || b.rows() < d + 1) {
    throw std::invalid_argument("Frechet distance needs at least " + std::to_string(d + 1) + " vectors per set");
  }
  const Moments ma = moments(a), mb = moments(b);
  double mean_term = 0.0;
  for (std::size_t i = 0; i < d; ++i) mean_term += (ma.mean[i] - mb.mean[i]) * (ma.mean[i] - mb.mean[i]);
  // tr sqrt(Sa Sb) == tr sqrt(sqrt(Sa) Sb sqrt(Sa)); the latter is symmetric PSD.
  const Tensor ra = psd_sqrt(ma.cov);
  Tensor inner = ops::matmul(ops::matmul(ra, mb.cov), ra);
  {
    auto v = inner.mutable_values();
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i + 1; j < d; ++j) v[i * d + j] = v[j * d + i] = 0.5 * (v[i * d + j] + v[j * d + i]);
  }
  const double fd = mean_term + trace(ma.cov) + trace(mb.cov) - 2.0 * trace(psd_sqrt(inner));
  return std::max(fd, 0.0);
}

void save_dataset(const std::filesystem::path& dir, const std::vector<BenchSample>& samples,
                  const nlohmann::json& meta) {
  std::filesystem::create_directories(dir);
  nlohmann::json index;
  index["meta"] = meta;
  index["samples"] = nlohmann::json::array();
  std::vector<Tensor> tensors;
  for (const BenchSample& s : samples) {
    index["samples"].push_back({{"id", s.id},
                                {"group", s.group},
                                {"caption", s.caption},
                                {"edit", s.edit.to_json()},
                                {"target_events", s.target_events}});
    tensors.push_back(s.latent);
    tensors.push_back(s.target_latent);
  }
  io::write_text(dir / "index.json", index.dump(2) + "\n");
  io::save_tensors(dir / "latents.bin", tensors);
}

std::vector<BenchSample> load_dataset(const std::filesystem::path& dir, nlohmann::json* meta) {
  const nlohmann::json index = nlohmann::json::parse(io::read_text(dir / "index.json"));
  const std::vector<Tensor> tensors = io::load_tensors(dir / "latents.bin");
  const auto& entries = index.at("samples");
  if (tensors.size() != 2 * entries.size()) throw io::FormatError("latents.bin does not match index.json");
  std::vector<BenchSample> out;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    BenchSample s;
    s.id = e.at("id").get<int>();
    s.group = e.at("group").get<std::string>();
    s.caption = e.at("caption").get<std::vector<int>>();
    s.edit = EditSpec::from_json(e.at("edit"));
    s.target_events = e.at("target_events").get<std::vector<int>>();
    s.latent = tensors[2 * i];
    s.target_latent = tensors[2 * i + 1];
    out.push_back(std::move(s));
  }
  if (meta) *meta = index.value("meta", nlohmann::json::object());
  return out;
}

}  // namespace aedit::bench
