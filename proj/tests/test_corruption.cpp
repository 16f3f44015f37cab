#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "cevae/corruption.hpp"

using namespace cevae;

namespace {

Image random_image(Rng& rng, int n) {
  Image img(n, n);
  std::uniform_real_distribution<float> d(-2.0f, 2.0f);
  for (auto& v : img.values) v = d(rng);
  return img;
}

bool inside(const MaskRect& r, int y, int x) {
  return y >= r.top && y < r.top + r.height && x >= r.left && x < r.left + r.width;
}

}  // namespace

TEST_CASE("mask spec: invariants over many draws") {
  Rng rng(1);
  const std::vector<float> pixels{-1.5f, 0.25f, 3.0f, 7.0f};
  std::array<int, 4> counts{};
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    const auto spec = sample_mask_spec(rng, 64, 64, pixels);
    REQUIRE(spec.rects.size() >= 1);
    REQUIRE(spec.rects.size() <= 3);
    ++counts[spec.rects.size()];
    for (const auto& r : spec.rects) {
      CHECK(r.height == r.width);
      CHECK(r.height >= 8);
      CHECK(r.height <= 32);
      CHECK(r.top >= 0);
      CHECK(r.left >= 0);
      CHECK(r.top + r.height <= 64);
      CHECK(r.left + r.width <= 64);
      CHECK(std::find(pixels.begin(), pixels.end(), r.fill_value) != pixels.end());
    }
  }
  for (int k = 1; k <= 3; ++k) CHECK(std::abs(counts[k] / double(draws) - 1.0 / 3.0) < 0.03);
}

TEST_CASE("mask spec: deterministic and rejects empty pixels") {
  const std::vector<float> pixels{1.0f, 2.0f};
  Rng a(9), b(9);
  const auto sa = sample_mask_spec(a, 64, 64, pixels), sb = sample_mask_spec(b, 64, 64, pixels);
  REQUIRE(sa.rects.size() == sb.rects.size());
  for (std::size_t i = 0; i < sa.rects.size(); ++i) {
    CHECK(sa.rects[i].top == sb.rects[i].top);
    CHECK(sa.rects[i].left == sb.rects[i].left);
    CHECK(sa.rects[i].height == sb.rects[i].height);
    CHECK(sa.rects[i].fill_value == sb.rects[i].fill_value);
  }
  CHECK_THROWS_AS(sample_mask_spec(a, 64, 64, {}), std::invalid_argument);
}

TEST_CASE("mask spec: per-pixel fill draws every pixel from the batch") {
  Rng rng(4);
  const std::vector<float> pixels{-3.0f, 5.0f};
  MaskOptions opts;
  opts.per_pixel_fill = true;
  const auto spec = sample_mask_spec(rng, 32, 32, pixels, opts);
  const auto out = apply_mask(Image(32, 32, 0.5f), spec);
  for (const auto& r : spec.rects) {
    CHECK(r.pixel_fill.size() == static_cast<std::size_t>(r.height * r.width));
    for (float v : r.pixel_fill) CHECK((v == -3.0f || v == 5.0f));
  }
  for (float v : out.values) CHECK((v == 0.5f || v == -3.0f || v == 5.0f));
}

TEST_CASE("apply_mask: only pixels inside rects change; later rect wins") {
  Rng rng(2);
  const auto img = random_image(rng, 32);
  for (int trial = 0; trial < 50; ++trial) {
    const auto spec = sample_mask_spec(rng, 32, 32, img.values);
    const auto out = apply_mask(img, spec);
    REQUIRE(out.same_shape(img));
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        const MaskRect* last = nullptr;
        for (const auto& r : spec.rects)
          if (inside(r, y, x)) last = &r;
        CHECK(out(y, x) == (last ? last->fill_value : img(y, x)));
      }
  }
  MaskSpec overlap{{{0, 0, 4, 4, 1.0f, {}}, {2, 2, 4, 4, 2.0f, {}}}};
  const auto out = apply_mask(Image(8, 8), overlap);
  CHECK(out(1, 1) == 1.0f);
  CHECK(out(3, 3) == 2.0f);
  CHECK(out(7, 7) == 0.0f);

  MaskSpec full{{{0, 0, 8, 8, 0.0f, {}}}};
  for (float v : apply_mask(Image(8, 8, 4.0f), full).values) CHECK(v == 0.0f);
  MaskSpec oob{{{5, 5, 4, 4, 0.0f, {}}}};
  CHECK_THROWS_AS(apply_mask(Image(8, 8), oob), std::invalid_argument);
}

TEST_CASE("gaussian_corrupt: identity at 0, noise std, reproducible, negative rejected") {
  Rng rng(3);
  const auto img = random_image(rng, 64);
  CHECK(gaussian_corrupt(img, 0.0, rng) == img);
  Rng a(8), b(8);
  const auto na = gaussian_corrupt(img, 0.1, a);
  CHECK(na == gaussian_corrupt(img, 0.1, b));
  double sum = 0, sq = 0;
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double d = na.values[i] - img.values[i];
    sum += d;
    sq += d * d;
  }
  const double n = static_cast<double>(img.size());
  const double sd = std::sqrt(sq / n - (sum / n) * (sum / n));
  CHECK(sd >= 0.09);
  CHECK(sd <= 0.11);
  CHECK_THROWS_AS(gaussian_corrupt(img, -0.1, rng), std::invalid_argument);
}

TEST_CASE("augment: identity, mirror involution, brightness linearity, shape") {
  Rng rng(5);
  const auto img = random_image(rng, 32);
  CHECK(augment(img, {}) == img);
  const AugmentSpec mirror{true, 0.0, 1.0};
  const auto once = augment(img, mirror);
  CHECK(once(3, 0) == img(3, 31));
  CHECK(augment(once, mirror) == img);
  const auto bright = augment(img, {false, 0.0, 2.0});
  const double m0 = std::accumulate(img.values.begin(), img.values.end(), 0.0);
  const double m1 = std::accumulate(bright.values.begin(), bright.values.end(), 0.0);
  CHECK(std::abs(m1 / img.size() - 2.0 * m0 / img.size()) < 1e-6);

  const auto rot = augment(img, {false, 90.0, 1.0});
  CHECK(rot.same_shape(img));
  // A quarter turn of an even-sized image maps pixel centres onto pixel centres.
  CHECK(rot(10, 20) == doctest::Approx(img(31 - 20, 10)).epsilon(1e-4));
  const auto big = augment(Image(16, 16, 1.0f), {false, 45.0, 1.0});
  CHECK(big(0, 0) == 0.0f);
  CHECK(big(8, 8) == doctest::Approx(1.0f));
}

TEST_CASE("augment spec stays in configured ranges") {
  Rng rng(6);
  int mirrored = 0;
  for (int i = 0; i < 2000; ++i) {
    const auto s = sample_augment_spec(rng);
    CHECK(std::abs(s.rotation_degrees) <= 15.0);
    CHECK(s.brightness_factor >= 0.9);
    CHECK(s.brightness_factor <= 1.1);
    mirrored += s.mirror;
  }
  CHECK(std::abs(mirrored / 2000.0 - 0.5) < 0.05);
}
