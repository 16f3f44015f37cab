#pragma once

#include <span>
#include <vector>

#include "cevae/rng.hpp"
#include "cevae/tensor.hpp"

namespace cevae {

// One masked square. When pixel_fill is non-empty it holds height*width
// per-pixel values that replace fill_value.
struct MaskRect {
  int top = 0;
  int left = 0;
  int height = 0;
  int width = 0;
  float fill_value = 0.0f;
  std::vector<float> pixel_fill;
};

// Rects are applied in list order, so later rects win on overlap.
struct MaskSpec {
  std::vector<MaskRect> rects;
};

struct MaskOptions {
  int min_squares = 1;
  int max_squares = 3;
  // Side length range as fractions of the shorter image side.
  double min_side_fraction = 1.0 / 8.0;
  double max_side_fraction = 1.0 / 2.0;
  bool per_pixel_fill = false;
};

// Square count, side, position and fill are drawn uniformly; fills come from
// batch_pixels (the current batch's intensity values).
MaskSpec sample_mask_spec(Rng& rng, int rows, int cols, std::span<const float> batch_pixels,
                          const MaskOptions& options = {});

Image apply_mask(const Image& image, const MaskSpec& spec);

// Additive iid N(0, sigma^2) noise; sigma == 0 returns an exact copy.
Image gaussian_corrupt(const Image& image, double sigma, Rng& rng);

struct AugmentSpec {
  bool mirror = false;
  double rotation_degrees = 0.0;
  double brightness_factor = 1.0;
};

struct AugmentRanges {
  double mirror_probability = 0.5;
  double max_rotation_degrees = 15.0;
  double brightness_min = 0.9;
  double brightness_max = 1.1;
};

AugmentSpec sample_augment_spec(Rng& rng, const AugmentRanges& ranges = {});

// Horizontal mirror, then rotation about the image centre (bilinear, zero
// outside), then multiplicative brightness.
Image augment(const Image& image, const AugmentSpec& spec);

}  // namespace cevae
