#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "cevae/data.hpp"
#include "cevae/model.hpp"
#include "cevae/objectives.hpp"

namespace cevae {

// Approximate negative ELBO; higher means more anomalous.
struct SampleScore {
  double value = 0.0;
  double l_kl = 0.0;
  double l_rec_vae = 0.0;
};

enum class AttributionMode { vanilla, guided, smooth_guided };
std::string_view to_string(AttributionMode mode);
AttributionMode parse_attribution_mode(std::string_view text);

enum class Fusion {
  product,              // rec_err * smoothed |dKL/dx|
  reconstruction_only,  // rec_err (used for AE/DAE/CE checkpoints)
};

// Models without a trained KL term (AE, DAE, CE, ceVAE at factor 1) fall back
// to the reconstruction error.
Fusion default_fusion(ModelKind kind, double cevae_factor);

struct AttributionConfig {
  AttributionMode mode = AttributionMode::smooth_guided;
  int smoothgrad_n = 16;
  // SmoothGrad noise std as a fraction of the slice's value range.
  double smoothgrad_sigma_fraction = 0.05;
  double smoothing_sigma_px = 2.0;
  // Backpropagate KL + L_rec instead of KL only.
  bool backprop_full_elbo = false;
  Fusion fusion = Fusion::product;

  void validate() const;
};

struct PixelScoreMap {
  Grid<double> scores;
  Grid<double> rec_err;
  Grid<double> kl_grad;
};

struct SampleScoreOptions {
  // 0: reconstruct from z = mu. k > 0: average L_rec over k sampled z.
  int mc_samples = 0;
};

// Scores every sample of the batch; rng is only consumed in MC mode.
template <typename T>
std::vector<SampleScore> sample_scores(const Model<T>& model, const Tensor<T>& x, Rng& rng,
                                       const SampleScoreOptions& options = {});

enum class InputObjective { kl, elbo };

// d(sum_b loss_b)/dx for a batch. ReluRule::guided applies the guided rule at
// every LeakyReLU on the way back.
template <typename T>
Tensor<T> backprop_to_input(const Model<T>& model, const Tensor<T>& x, InputObjective objective, kernels::ReluRule rule);

// Mean of grad_fn over n noisy copies x + N(0, sigma^2). grad_fn receives an
// n x C x H x W batch and must return per-copy gradients of the same shape.
// sigma == 0 evaluates grad_fn once on x.
template <typename T>
Tensor<T> smoothgrad(const std::function<Tensor<T>(const Tensor<T>&)>& grad_fn, const Tensor<T>& x, int n, double sigma,
                     Rng& rng);

// Separable Gaussian blur, half-sample symmetric boundary, kernel truncated at
// 4 sigma and normalized. sigma == 0 is the identity.
Grid<double> gaussian_smooth(const Grid<double>& map, double sigma_px);

// One slice (1 x 1 x R x R): rec_err = |x - g(f_mu(x))|,
// kl_grad = gaussian_smooth(|attribution of L_KL|), scores = fusion of both.
template <typename T>
PixelScoreMap pixel_score(const Model<T>& model, const Tensor<T>& x, const AttributionConfig& cfg, Rng& rng);

struct ScoredSlice {
  std::string patient_id;
  int slice_index = 0;
  SampleScore sample;
  PixelScoreMap pixels;
};

// Scores a list of preprocessed slices; per-slice randomness is keyed by
// (seed, patient_id, slice_index).
std::vector<ScoredSlice> score_slices(const Model<float>& model, std::span<const SliceSample> samples,
                                      const AttributionConfig& cfg, std::uint64_t seed, bool with_pixel_maps = true);

// <dir>/scores.csv (patient_id,slice_index,sample_score,l_kl,l_rec_vae) plus
// <dir>/maps/<patient>_<slice>.cevs float32 score maps and, optionally,
// <dir>/heatmaps/<patient>_<slice>.png.
void write_scores(const std::filesystem::path& dir, std::span<const ScoredSlice> slices, bool png_heatmaps);
// Reads scores.csv and the matching score maps (rec_err/kl_grad stay empty).
std::vector<ScoredSlice> read_scores(const std::filesystem::path& dir);

}  // namespace cevae
