#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "aedit/prompt_edit.hpp"
#include "aedit/tensor.hpp"

// Synthetic event-composition benchmark. Events are cosine gratings on a
// 32 x 32 grid; latents are carried in the denoiser's patch-major layout.
namespace aedit::bench {

constexpr std::size_t kGrid = 32;
constexpr std::size_t kPatch = 4;
constexpr int kVocab = 16;
constexpr double kNoiseStd = 0.05;

// Per-sample RNG seed from a base seed and a sample id (splitmix64).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t id);

// Unit-Frobenius grating for `id`, 32 x 32.
Tensor event_image(int id);
// Same pattern in patch layout (64 x 16).
const Tensor& event_pattern(int id);

// 32 x 32 image <-> 64 x 16 (8 x 8 patches of 4 x 4 cells, row-major).
Tensor to_patch_layout(const Tensor& image);
Tensor from_patch_layout(const Tensor& latent);

struct BenchSample {
  int id = 0;
  std::string group;  // "add", "delete", "replace"
  Tensor latent;
  std::vector<int> caption;
  EditSpec edit;
  // Events present after the edit (a deleted token stays in the edit's
  // caption but not here).
  std::vector<int> target_events;
  Tensor target_latent;
};

struct GroupMix {
  std::size_t add = 0, del = 0, replace = 0;

  std::size_t total() const { return add + del + replace; }
  // Thirds, remainder going to add then delete.
  static GroupMix even(std::size_t n);
};

// Samples in group order add, delete, replace with ids 0..n-1.
std::vector<BenchSample> make_dataset(const GroupMix& mix, std::uint64_t seed);

struct Composition {
  Tensor latent;
  std::vector<int> caption;
};
// Random 1-3 event compositions for denoiser training.
std::vector<Composition> make_training_set(std::size_t n, std::uint64_t seed);

// Mean over caption tokens of cosine(latent, pattern(token)).
double alignment_score(const Tensor& latent, const std::vector<int>& caption);

// Mean squared difference restricted to span{pattern(k) : k in preserved}.
double preservation_error(const Tensor& edited, const Tensor& original, const std::vector<int>& preserved);

// Rows of `a` and `b` are feature vectors.
double frechet_distance(const Tensor& a, const Tensor& b);

void save_dataset(const std::filesystem::path& dir, const std::vector<BenchSample>& samples,
                  const nlohmann::json& meta);
std::vector<BenchSample> load_dataset(const std::filesystem::path& dir, nlohmann::json* meta = nullptr);

}  // namespace aedit::bench
