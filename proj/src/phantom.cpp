#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <random>

#include "cevae/data.hpp"
#include "cevae/errors.hpp"
#include "cevae/rng.hpp"

namespace cevae {

namespace fs = std::filesystem;

void PhantomConfig::validate() const {
  if (train_patients < 0 || val_patients < 0 || test_patients < 0)
    throw std::invalid_argument("PhantomConfig: patient counts must be non-negative");
  if (slices_per_patient < 1) throw std::invalid_argument("PhantomConfig: slices_per_patient must be >= 1");
  if (!(anomaly_fraction >= 0.0 && anomaly_fraction <= 1.0))
    throw std::invalid_argument("PhantomConfig: anomaly_fraction must lie in [0,1]");
  if (resolution < 8) throw std::invalid_argument("PhantomConfig: resolution must be >= 8");
  const auto [rmin, rmax] = anomaly_radius_range;
  if (rmin < 1 || rmax < rmin || 2 * rmax >= resolution)
    throw std::invalid_argument("PhantomConfig: need 1 <= radius_min <= radius_max < resolution/2");
}

namespace {

struct Bump {
  double cy0, cx0, cy1, cx1;  // centre drifts linearly through the volume
  double ay, ax;              // semi-axes (pixels)
  double angle;
  double amplitude;
  double profile_phase;
};

double smooth_profile(double t, double phase) {
  // Bumps grow and shrink across the volume like anatomy in axial slices.
  const double u = 2.0 * t - 1.0;
  return (1.0 - 0.45 * u * u) * (0.85 + 0.15 * std::sin(2.0 * std::numbers::pi * t + phase));
}

Grid<double> smooth_noise(Rng& rng, int res, double amplitude) {
  constexpr int kCoarse = 8;
  std::normal_distribution<double> normal(0.0, amplitude);
  Grid<double> coarse(kCoarse, kCoarse);
  for (auto& v : coarse.values) v = normal(rng);
  Grid<double> out(res, res);
  const double scale = static_cast<double>(kCoarse - 1) / (res - 1);
  for (int y = 0; y < res; ++y)
    for (int x = 0; x < res; ++x) {
      const double fy = y * scale;
      const double fx = x * scale;
      const int y0 = std::min(static_cast<int>(fy), kCoarse - 2);
      const int x0 = std::min(static_cast<int>(fx), kCoarse - 2);
      const double wy = fy - y0;
      const double wx = fx - x0;
      out(y, x) = (1 - wy) * ((1 - wx) * coarse(y0, x0) + wx * coarse(y0, x0 + 1)) +
                  wy * ((1 - wx) * coarse(y0 + 1, x0) + wx * coarse(y0 + 1, x0 + 1));
    }
  return out;
}

int split_tag(Split s) { return static_cast<int>(s); }

}  // namespace

std::vector<PhantomSlice> generate_patient(const PhantomConfig& cfg, Split split, int patient_index) {
  cfg.validate();
  const int res = cfg.resolution;
  Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(split_tag(split)), static_cast<std::uint64_t>(patient_index)));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  std::vector<Bump> bumps;
  // Outer "head" bump plus 2-5 interior structures.
  const int n_bumps = std::uniform_int_distribution<int>(3, 6)(rng);
  for (int i = 0; i < n_bumps; ++i) {
    Bump b{};
    if (i == 0) {
      b.cy0 = uniform(0.47, 0.53) * res;
      b.cx0 = uniform(0.47, 0.53) * res;
      b.ay = uniform(0.30, 0.36) * res;
      b.ax = uniform(0.26, 0.32) * res;
      b.amplitude = uniform(0.9, 1.1);
    } else {
      b.cy0 = uniform(0.32, 0.68) * res;
      b.cx0 = uniform(0.32, 0.68) * res;
      b.ay = uniform(0.06, 0.16) * res;
      b.ax = uniform(0.06, 0.16) * res;
      b.amplitude = uniform(-0.5, 0.6);
    }
    b.cy1 = b.cy0 + uniform(-0.05, 0.05) * res;
    b.cx1 = b.cx0 + uniform(-0.05, 0.05) * res;
    b.angle = uniform(0.0, std::numbers::pi);
    b.profile_phase = uniform(0.0, 2.0 * std::numbers::pi);
    bumps.push_back(b);
  }
  const double gain = uniform(0.8, 1.2);
  const double offset = uniform(-0.1, 0.1);

  const int n = cfg.slices_per_patient;
  std::vector<Grid<double>> healthy;
  healthy.reserve(n);
  for (int s = 0; s < n; ++s) {
    const double t = n > 1 ? static_cast<double>(s) / (n - 1) : 0.5;
    Grid<double> img = smooth_noise(rng, res, 0.03);
    for (const auto& b : bumps) {
      const double scale = smooth_profile(t, b.profile_phase);
      const double cy = b.cy0 + t * (b.cy1 - b.cy0);
      const double cx = b.cx0 + t * (b.cx1 - b.cx0);
      const double ca = std::cos(b.angle);
      const double sa = std::sin(b.angle);
      const double ay = std::max(1.0, b.ay * scale);
      const double ax = std::max(1.0, b.ax * scale);
      for (int y = 0; y < res; ++y)
        for (int x = 0; x < res; ++x) {
          const double dy = y - cy;
          const double dx = x - cx;
          const double u = (ca * dx + sa * dy) / ax;
          const double v = (-sa * dx + ca * dy) / ay;
          // Flat-topped bump: ~1 inside the ellipse, smooth falloff at its rim.
          const double r = std::sqrt(u * u + v * v);
          img(y, x) += b.amplitude * 0.5 * (1.0 - std::tanh(4.0 * (r - 1.0)));
        }
    }
    for (auto& v : img.values) v = gain * v + offset;
    healthy.push_back(std::move(img));
  }

  // Healthy pooled std sets the anomaly offset scale.
  double mean = 0.0;
  for (const auto& g : healthy) mean += std::accumulate(g.values.begin(), g.values.end(), 0.0);
  mean /= static_cast<double>(n) * res * res;
  double var = 0.0;
  for (const auto& g : healthy)
    for (double v : g.values) var += (v - mean) * (v - mean);
  const double std_dev = std::sqrt(var / (static_cast<double>(n) * res * res));

  std::vector<int> anomalous(n, 0);
  if (split == Split::test && cfg.anomaly_fraction > 0.0) {
    const int count = static_cast<int>(std::lround(cfg.anomaly_fraction * n));
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (int i = 0; i < count; ++i) anomalous[order[i]] = 1;
  }

  std::vector<PhantomSlice> out;
  out.reserve(n);
  for (int s = 0; s < n; ++s) {
    PhantomSlice slice;
    Grid<double>& img = healthy[s];
    if (anomalous[s]) {
      const auto [rmin, rmax] = cfg.anomaly_radius_range;
      const int radius = std::uniform_int_distribution<int>(rmin, rmax)(rng);
      // Centre inside the head region and fully inside the image.
      const double lo = std::max<double>(radius, 0.3 * res);
      const double hi = std::min<double>(res - 1 - radius, 0.7 * res);
      const double cy = uniform(lo, hi);
      const double cx = uniform(lo, hi);
      Mask mask(res, res);
      for (int y = 0; y < res; ++y)
        for (int x = 0; x < res; ++x) {
          const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
          if (d2 <= static_cast<double>(radius) * radius) {
            mask(y, x) = 1;
            img(y, x) += cfg.anomaly_intensity_shift * std_dev;
          }
        }
      slice.mask = std::move(mask);
    }
    slice.image = Image(res, res);
    for (std::size_t i = 0; i < img.size(); ++i) slice.image.values[i] = static_cast<float>(img.values[i]);
    out.push_back(std::move(slice));
  }
  return out;
}

DatasetManifest generate_phantoms(const PhantomConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(out_dir / "slices", ec);
  if (!ec) fs::create_directories(out_dir / "masks", ec);
  if (ec) throw IoError("cannot create output directory " + out_dir.string() + ": " + ec.message());

  struct Job {
    Split split;
    int index;
    std::string pid;
  };
  std::vector<Job> jobs;
  for (auto [split, count] : {std::pair{Split::train, cfg.train_patients}, std::pair{Split::val, cfg.val_patients},
                              std::pair{Split::test, cfg.test_patients}}) {
    for (int p = 0; p < count; ++p) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%s%03d", std::string(to_string(split)).c_str(), p);
      jobs.push_back({split, p, buf});
    }
  }

  std::vector<std::vector<PhantomSlice>> generated(jobs.size());
#pragma omp parallel for schedule(dynamic)
  for (int j = 0; j < static_cast<int>(jobs.size()); ++j) generated[j] = generate_patient(cfg, jobs[j].split, jobs[j].index);

  DatasetManifest manifest;
  manifest.root = out_dir;
  manifest.resolution = cfg.resolution;
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    for (std::size_t s = 0; s < generated[j].size(); ++s) {
      char name[64];
      std::snprintf(name, sizeof(name), "%s_%03zu.cevs", jobs[j].pid.c_str(), s);
      ManifestEntry e;
      e.patient_id = jobs[j].pid;
      e.split = jobs[j].split;
      e.slice_path = std::string("slices/") + name;
      write_slice(out_dir / e.slice_path, generated[j][s].image);
      if (generated[j][s].mask) {
        e.mask_path = std::string("masks/") + name;
        write_mask(out_dir / e.mask_path, *generated[j][s].mask);
      }
      manifest.entries.push_back(std::move(e));
    }
  }
  save_manifest(manifest, out_dir / "manifest.csv");
  return manifest;
}

}  // namespace cevae
