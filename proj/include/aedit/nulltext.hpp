#pragma once

#include <filesystem>
#include <vector>

#include "json.hpp"

#include "aedit/denoiser.hpp"
#include "aedit/diffusion.hpp"

namespace aedit {

/// Per-step unconditional embeddings for t = T..1 (stored in that order).
struct NullTextSet {
  std::vector<Tensor> embeddings;
  double eta = 0.01;
  int inner_iters = 10;
  double w = 7.5;

  int steps() const { return static_cast<int>(embeddings.size()); }
  const Tensor& at(int t) const;
  // Constant set: every step uses `null`.
  static NullTextSet constant(const Tensor& null, int steps, double w);

  void save(const std::filesystem::path& path) const;
  static NullTextSet load(const std::filesystem::path& path);
};

struct NullOptConfig {
  double w = 7.5;
  double eta = 0.01;
  int inner_iters = 10;
  int max_halvings = 3;
};

struct NullOptStep {
  int t = 0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  int accepted = 0;
  int halvings = 0;
  std::vector<double> losses;  // accepted losses, starting with the initial one
};

struct NullOptResult {
  NullTextSet nulls;
  std::vector<NullOptStep> steps;  // t = T..1
};

/// For t = T..1: gradient steps on the null embedding minimizing
/// |z*_{t-1} - ddim_step(z_t, cfg(eps(P), eps(null), w))|^2, then advance z_t
/// with the optimized null and carry it over as the next step's start.
/// A proposal that raises the loss is rejected and halves the rate; after
/// max_halvings rejections the step stops early.
NullOptResult optimize_null_texts(const Denoiser& model, const LatentTrajectory& pivots, const PromptEmbedding& prompt,
                                  const NoiseSchedule& schedule, const NullOptConfig& config = {});

/// Guided DDIM denoising from z_T with the per-step nulls.
Tensor reconstruct(const Denoiser& model, const Tensor& z_T, const PromptEmbedding& prompt, const NullTextSet& nulls,
                   const NoiseSchedule& schedule, double w, std::vector<Tensor>* states = nullptr);

// |a - b|^2 / |b|^2.
double relative_mse(const Tensor& a, const Tensor& b);

}  // namespace aedit
