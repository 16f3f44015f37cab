#include "cevae/corruption.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace cevae {

MaskSpec sample_mask_spec(Rng& rng, int rows, int cols, std::span<const float> batch_pixels,
                          const MaskOptions& options) {
  if (batch_pixels.empty()) throw std::invalid_argument("sample_mask_spec: batch_pixels is empty");
  if (rows < 1 || cols < 1) throw std::invalid_argument("sample_mask_spec: empty image shape");
  if (options.min_squares < 1 || options.max_squares < options.min_squares)
    throw std::invalid_argument("sample_mask_spec: bad square count range");
  const int side_limit = std::min(rows, cols);
  const int min_side = std::clamp(static_cast<int>(std::lround(side_limit * options.min_side_fraction)), 1, side_limit);
  const int max_side =
      std::clamp(static_cast<int>(std::lround(side_limit * options.max_side_fraction)), min_side, side_limit);

  std::uniform_int_distribution<std::size_t> pick(0, batch_pixels.size() - 1);
  MaskSpec spec;
  const int count = std::uniform_int_distribution<int>(options.min_squares, options.max_squares)(rng);
  for (int i = 0; i < count; ++i) {
    MaskRect r;
    const int side = std::uniform_int_distribution<int>(min_side, max_side)(rng);
    r.height = side;
    r.width = side;
    r.top = std::uniform_int_distribution<int>(0, rows - side)(rng);
    r.left = std::uniform_int_distribution<int>(0, cols - side)(rng);
    r.fill_value = batch_pixels[pick(rng)];
    if (options.per_pixel_fill) {
      r.pixel_fill.resize(static_cast<std::size_t>(side) * side);
      for (auto& v : r.pixel_fill) v = batch_pixels[pick(rng)];
    }
    spec.rects.push_back(std::move(r));
  }
  return spec;
}

Image apply_mask(const Image& image, const MaskSpec& spec) {
  Image out = image;
  for (const auto& r : spec.rects) {
    if (r.top < 0 || r.left < 0 || r.height < 1 || r.width < 1 || r.top + r.height > image.rows ||
        r.left + r.width > image.cols)
      throw std::invalid_argument("apply_mask: rect outside image bounds");
    if (!r.pixel_fill.empty() && r.pixel_fill.size() != static_cast<std::size_t>(r.height) * r.width)
      throw std::invalid_argument("apply_mask: pixel_fill size does not match rect");
    for (int y = 0; y < r.height; ++y)
      for (int x = 0; x < r.width; ++x)
        out(r.top + y, r.left + x) =
            r.pixel_fill.empty() ? r.fill_value : r.pixel_fill[static_cast<std::size_t>(y) * r.width + x];
  }
  return out;
}

Image gaussian_corrupt(const Image& image, double sigma, Rng& rng) {
  if (sigma < 0.0 || !std::isfinite(sigma)) throw std::invalid_argument("gaussian_corrupt: sigma must be >= 0");
  Image out = image;
  if (sigma == 0.0) return out;
  std::normal_distribution<double> noise(0.0, sigma);
  for (auto& v : out.values) v = static_cast<float>(v + noise(rng));
  return out;
}

AugmentSpec sample_augment_spec(Rng& rng, const AugmentRanges& ranges) {
  if (!(ranges.brightness_min > 0.0) || ranges.brightness_max < ranges.brightness_min)
    throw std::invalid_argument("AugmentRanges: need 0 < brightness_min <= brightness_max");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  AugmentSpec spec;
  spec.mirror = unit(rng) < ranges.mirror_probability;
  spec.rotation_degrees = (2.0 * unit(rng) - 1.0) * ranges.max_rotation_degrees;
  spec.brightness_factor = ranges.brightness_min + (ranges.brightness_max - ranges.brightness_min) * unit(rng);
  return spec;
}

Image augment(const Image& image, const AugmentSpec& spec) {
  if (!(spec.brightness_factor > 0.0)) throw std::invalid_argument("augment: brightness_factor must be > 0");
  Image cur = image;
  if (spec.mirror) {
    for (int y = 0; y < cur.rows; ++y) std::reverse(cur.values.begin() + y * cur.cols, cur.values.begin() + (y + 1) * cur.cols);
  }
  if (spec.rotation_degrees != 0.0) {
    const double theta = spec.rotation_degrees * std::numbers::pi / 180.0;
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    const double cy = (cur.rows - 1) / 2.0;
    const double cx = (cur.cols - 1) / 2.0;
    Image rot(cur.rows, cur.cols, 0.0f);
    for (int y = 0; y < cur.rows; ++y)
      for (int x = 0; x < cur.cols; ++x) {
        // Inverse map of a counter-clockwise rotation.
        const double dy = y - cy;
        const double dx = x - cx;
        const double sx = c * dx + s * dy + cx;
        const double sy = -s * dx + c * dy + cy;
        if (sx < 0.0 || sy < 0.0 || sx > cur.cols - 1 || sy > cur.rows - 1) continue;
        const int x0 = std::min(static_cast<int>(sx), cur.cols - 1);
        const int y0 = std::min(static_cast<int>(sy), cur.rows - 1);
        const int x1 = std::min(x0 + 1, cur.cols - 1);
        const int y1 = std::min(y0 + 1, cur.rows - 1);
        const double wx = sx - x0;
        const double wy = sy - y0;
        const double top = cur(y0, x0) + wx * (cur(y0, x1) - cur(y0, x0));
        const double bottom = cur(y1, x0) + wx * (cur(y1, x1) - cur(y1, x0));
        rot(y, x) = static_cast<float>(top + wy * (bottom - top));
      }
    cur = std::move(rot);
  }
  if (spec.brightness_factor != 1.0)
    for (auto& v : cur.values) v = static_cast<float>(v * spec.brightness_factor);
  return cur;
}

}  // namespace cevae
