#include "cevae/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "cevae/errors.hpp"
#include "cevae/objectives.hpp"
#include "cevae/render.hpp"

namespace cevae {

std::string_view to_string(AttributionMode mode) {
  switch (mode) {
    case AttributionMode::vanilla:
      return "vanilla";
    case AttributionMode::guided:
      return "guided";
    case AttributionMode::smooth_guided:
      return "smooth_guided";
  }
  return "?";
}

AttributionMode parse_attribution_mode(std::string_view text) {
  if (text == "vanilla") return AttributionMode::vanilla;
  if (text == "guided") return AttributionMode::guided;
  if (text == "smooth_guided") return AttributionMode::smooth_guided;
  throw std::invalid_argument("unknown attribution mode '" + std::string(text) + "'");
}

Fusion default_fusion(ModelKind kind, double cevae_factor) {
  const bool has_kl = kind == ModelKind::VAE || (kind == ModelKind::ceVAE && cevae_factor < 1.0);
  return has_kl ? Fusion::product : Fusion::reconstruction_only;
}

void AttributionConfig::validate() const {
  if (smoothgrad_n < 1) throw std::invalid_argument("AttributionConfig: smoothgrad_n must be >= 1");
  if (!(smoothgrad_sigma_fraction >= 0.0) || !(smoothing_sigma_px >= 0.0))
    throw std::invalid_argument("AttributionConfig: sigmas must be >= 0");
}

template <typename T>
std::vector<SampleScore> sample_scores(const Model<T>& model, const Tensor<T>& x, Rng& rng,
                                       const SampleScoreOptions& options) {
  const auto post = model.encode(x);
  const auto kl = kl_per_sample(post);
  std::vector<double> rec;
  if (options.mc_samples <= 0) {
    rec = l1_per_sample(x, model.decode(latent_tensor<T>(post.mu, post.batch, post.dim)));
  } else {
    rec.assign(static_cast<std::size_t>(x.n), 0.0);
    for (int k = 0; k < options.mc_samples; ++k) {
      const auto eps = standard_normal<T>(rng, post.mu.size());
      const auto r = l1_per_sample(x, model.decode(reparameterize<T>(post, eps)));
      for (std::size_t b = 0; b < rec.size(); ++b) rec[b] += r[b] / options.mc_samples;
    }
  }
  std::vector<SampleScore> out(static_cast<std::size_t>(x.n));
  for (std::size_t b = 0; b < out.size(); ++b) out[b] = {kl[b] + rec[b], kl[b], rec[b]};
  return out;
}

template <typename T>
Tensor<T> backprop_to_input(const Model<T>& model, const Tensor<T>& x, InputObjective objective, kernels::ReluRule rule) {
  ForwardTape<T> enc_tape;
  const auto post = model.encode(x, &enc_tape);
  std::vector<T> d_mu(post.mu.size(), T{0}), d_log_sigma(post.log_sigma.size(), T{0});
  kl_gradient<T>(post, T{1}, d_mu, d_log_sigma);
  Tensor<T> direct;
  if (objective == InputObjective::elbo) {
    ForwardTape<T> dec_tape;
    const auto x_hat = model.decode(latent_tensor<T>(post.mu, post.batch, post.dim), &dec_tape);
    Tensor<T> d_hat(x.n, x.c, x.h, x.w);
    direct = Tensor<T>(x.n, x.c, x.h, x.w);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const T d = x_hat.data[i] - x.data[i];
      const T s = d > T{0} ? T{1} : (d < T{0} ? T{-1} : T{0});
      d_hat.data[i] = s;
      direct.data[i] = -s;
    }
    // Decoder gradients w.r.t. z flow back through mu.
    const auto dz = model.decode_backward(dec_tape, d_hat, nullptr);
    for (std::size_t i = 0; i < d_mu.size(); ++i) d_mu[i] += dz.data[i];
  }
  auto dx = model.encode_backward(enc_tape, d_mu, d_log_sigma, rule, nullptr, true);
  if (objective == InputObjective::elbo)
    for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] += direct.data[i];
  for (T v : dx.data)
    if (!std::isfinite(static_cast<double>(v))) throw NumericError("backprop_to_input: non-finite gradient");
  return dx;
}

template <typename T>
Tensor<T> smoothgrad(const std::function<Tensor<T>(const Tensor<T>&)>& grad_fn, const Tensor<T>& x, int n, double sigma,
                     Rng& rng) {
  if (n < 1) throw std::invalid_argument("smoothgrad: n must be >= 1");
  if (!(sigma >= 0.0)) throw std::invalid_argument("smoothgrad: sigma must be >= 0");
  if (x.n != 1) throw std::invalid_argument("smoothgrad: expects a single sample");
  if (sigma == 0.0) return grad_fn(x);
  Tensor<T> noisy(n, x.c, x.h, x.w);
  std::normal_distribution<double> noise(0.0, sigma);
  for (int k = 0; k < n; ++k) {
    auto dst = noisy.sample(k);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(x.data[i] + noise(rng));
  }
  const auto grads = grad_fn(noisy);
  if (!grads.same_shape(noisy)) throw std::invalid_argument("smoothgrad: grad_fn returned wrong shape");
  Tensor<T> mean(1, x.c, x.h, x.w);
  for (std::size_t i = 0; i < mean.size(); ++i) {
    double acc = 0.0;
    for (int k = 0; k < n; ++k) acc += static_cast<double>(grads.sample(k)[i]);
    mean.data[i] = static_cast<T>(acc / n);
  }
  return mean;
}

namespace {

// Half-sample symmetric extension: ... c b a | a b c ... | c b a ...
int reflect_index(int i, int n) {
  const int period = 2 * n;
  int m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - 1 - m;
}

}  // namespace

Grid<double> gaussian_smooth(const Grid<double>& map, double sigma_px) {
  if (!(sigma_px >= 0.0)) throw std::invalid_argument("gaussian_smooth: sigma must be >= 0");
  if (sigma_px == 0.0 || map.size() == 0) return map;
  const int radius = std::max(1, static_cast<int>(std::ceil(4.0 * sigma_px)));
  std::vector<double> kernel(2 * radius + 1);
  double norm = 0.0;
  for (int i = -radius; i <= radius; ++i) norm += kernel[i + radius] = std::exp(-0.5 * i * i / (sigma_px * sigma_px));
  for (auto& v : kernel) v /= norm;

  Grid<double> tmp(map.rows, map.cols);
#pragma omp parallel for schedule(static)
  for (int y = 0; y < map.rows; ++y)
    for (int x = 0; x < map.cols; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * map(y, reflect_index(x + k, map.cols));
      tmp(y, x) = acc;
    }
  Grid<double> out(map.rows, map.cols);
#pragma omp parallel for schedule(static)
  for (int y = 0; y < map.rows; ++y)
    for (int x = 0; x < map.cols; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * tmp(reflect_index(y + k, map.rows), x);
      out(y, x) = acc;
    }
  return out;
}

template <typename T>
PixelScoreMap pixel_score(const Model<T>& model, const Tensor<T>& x, const AttributionConfig& cfg, Rng& rng) {
  cfg.validate();
  if (x.n != 1 || x.c != 1) throw std::invalid_argument("pixel_score: expects a 1 x 1 x H x W slice");
  PixelScoreMap out;
  out.rec_err = Grid<double>(x.h, x.w);
  const auto post = model.encode(x);
  const auto x_hat = model.decode(latent_tensor<T>(post.mu, post.batch, post.dim));
  for (std::size_t i = 0; i < x.size(); ++i)
    out.rec_err.values[i] = std::abs(static_cast<double>(x.data[i]) - static_cast<double>(x_hat.data[i]));

  const auto objective = cfg.backprop_full_elbo ? InputObjective::elbo : InputObjective::kl;
  const auto rule = cfg.mode == AttributionMode::vanilla ? kernels::ReluRule::exact : kernels::ReluRule::guided;
  const std::function<Tensor<T>(const Tensor<T>&)> grad_fn = [&](const Tensor<T>& batch) {
    return backprop_to_input(model, batch, objective, rule);
  };
  Tensor<T> grad;
  if (cfg.mode == AttributionMode::smooth_guided) {
    const auto [lo, hi] = std::minmax_element(x.data.begin(), x.data.end());
    const double sigma = cfg.smoothgrad_sigma_fraction * static_cast<double>(*hi - *lo);
    grad = smoothgrad<T>(grad_fn, x, cfg.smoothgrad_n, sigma, rng);
  } else {
    grad = grad_fn(x);
  }
  Grid<double> magnitude(x.h, x.w);
  for (std::size_t i = 0; i < grad.size(); ++i) magnitude.values[i] = std::abs(static_cast<double>(grad.data[i]));
  out.kl_grad = gaussian_smooth(magnitude, cfg.smoothing_sigma_px);

  out.scores = Grid<double>(x.h, x.w);
  for (std::size_t i = 0; i < out.scores.size(); ++i)
    out.scores.values[i] =
        cfg.fusion == Fusion::product ? out.rec_err.values[i] * out.kl_grad.values[i] : out.rec_err.values[i];
  for (double v : out.scores.values)
    if (!std::isfinite(v)) throw NumericError("pixel_score: non-finite score");
  return out;
}

std::vector<ScoredSlice> score_slices(const Model<float>& model, std::span<const SliceSample> samples,
                                      const AttributionConfig& cfg, std::uint64_t seed, bool with_pixel_maps) {
  std::vector<ScoredSlice> out(samples.size());
  // One slice per forward pass: GEMM blocking depends on the batch width, so
  // batching would make a slice's score depend on its neighbours.
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto x = stack_images<float>(std::span<const Image>(&samples[i].image, 1));
    Rng unused(seed);
    out[i].patient_id = samples[i].patient_id;
    out[i].slice_index = samples[i].slice_index;
    out[i].sample = sample_scores(model, x, unused).front();
  }
  if (with_pixel_maps) {
    for (std::size_t i = 0; i < samples.size(); ++i) {
      Rng rng = slice_rng(seed, samples[i].patient_id, samples[i].slice_index);
      const auto x = stack_images<float>(std::span<const Image>(&samples[i].image, 1));
      out[i].pixels = pixel_score(model, x, cfg, rng);
    }
  }
  return out;
}

namespace {

std::string slice_stem(const std::string& patient_id, int slice_index) {
  char idx[16];
  std::snprintf(idx, sizeof idx, "%03d", slice_index);
  return patient_id + "_" + idx;
}

}  // namespace

void write_scores(const std::filesystem::path& dir, std::span<const ScoredSlice> slices, bool png_heatmaps) {
  std::filesystem::create_directories(dir / "maps");
  if (png_heatmaps) std::filesystem::create_directories(dir / "heatmaps");
  std::ofstream csv(dir / "scores.csv");
  if (!csv) throw IoError("cannot write " + (dir / "scores.csv").string());
  csv << "patient_id,slice_index,sample_score,l_kl,l_rec_vae\n";
  char line[256];
  for (const auto& s : slices) {
    std::snprintf(line, sizeof line, ",%d,%.17g,%.17g,%.17g\n", s.slice_index, s.sample.value, s.sample.l_kl,
                  s.sample.l_rec_vae);
    csv << s.patient_id << line;
    const auto stem = slice_stem(s.patient_id, s.slice_index);
    if (s.pixels.scores.size() == 0) continue;
    Image map(s.pixels.scores.rows, s.pixels.scores.cols);
    for (std::size_t i = 0; i < map.size(); ++i) map.values[i] = static_cast<float>(s.pixels.scores.values[i]);
    write_slice(dir / "maps" / (stem + ".cevs"), map);
    if (png_heatmaps) write_png_heatmap(s.pixels.scores, dir / "heatmaps" / (stem + ".png"));
  }
}

std::vector<ScoredSlice> read_scores(const std::filesystem::path& dir) {
  const auto path = dir / "scores.csv";
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "patient_id,slice_index,sample_score,l_kl,l_rec_vae")
    throw FormatError(path.string() + ": unexpected header");
  std::vector<ScoredSlice> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::vector<std::string> parts;
    std::string field;
    while (std::getline(ss, field, ',')) parts.push_back(field);
    if (parts.size() != 5) throw FormatError(path.string() + ": malformed row '" + line + "'");
    ScoredSlice s;
    s.patient_id = parts[0];
    try {
      s.slice_index = std::stoi(parts[1]);
      s.sample = {std::stod(parts[2]), std::stod(parts[3]), std::stod(parts[4])};
    } catch (const std::logic_error&) {
      throw FormatError(path.string() + ": malformed row '" + line + "'");
    }
    const auto map_path = dir / "maps" / (slice_stem(s.patient_id, s.slice_index) + ".cevs");
    if (std::filesystem::exists(map_path)) {
      const auto map = read_slice(map_path);
      s.pixels.scores = Grid<double>(map.rows, map.cols);
      for (std::size_t i = 0; i < map.size(); ++i) s.pixels.scores.values[i] = map.values[i];
    }
    out.push_back(std::move(s));
  }
  return out;
}

#define CEVAE_INSTANTIATE(T)                                                                                        \
  template std::vector<SampleScore> sample_scores<T>(const Model<T>&, const Tensor<T>&, Rng&,                       \
                                                     const SampleScoreOptions&);                                    \
  template Tensor<T> backprop_to_input<T>(const Model<T>&, const Tensor<T>&, InputObjective, kernels::ReluRule);    \
  template Tensor<T> smoothgrad<T>(const std::function<Tensor<T>(const Tensor<T>&)>&, const Tensor<T>&, int, double, \
                                   Rng&);                                                                           \
  template PixelScoreMap pixel_score<T>(const Model<T>&, const Tensor<T>&, const AttributionConfig&, Rng&);

CEVAE_INSTANTIATE(float)
CEVAE_INSTANTIATE(double)

#undef CEVAE_INSTANTIATE

}  // namespace cevae
