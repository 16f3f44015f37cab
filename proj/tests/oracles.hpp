#pragma once

// Independent reference computations used by the unit tests and the
// acceptance binary. Nothing here calls into the code under test except to
// build inputs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "cevae/model.hpp"
#include "cevae/objectives.hpp"
#include "cevae/scoring.hpp"
#include "cevae/rng.hpp"
#include "cevae/tensor.hpp"

namespace oracle {

// Downsized model used for the float64 gradient checks: 16 = 4 * 2^2.
inline cevae::ModelConfig tiny_config() {
  cevae::ModelConfig cfg;
  cfg.resolution = 16;
  cfg.channels = {4, 8};
  cfg.latent_dim = 32;
  return cfg;
}

template <typename T>
cevae::Tensor<T> random_batch(cevae::Rng& rng, int n, int res, double mean = 0.0, double std = 1.0) {
  cevae::Tensor<T> x(n, 1, res, res);
  std::normal_distribution<double> d(mean, std);
  for (auto& v : x.data) v = static_cast<T>(d(rng));
  return x;
}

inline double central_difference(const std::function<double(double)>& f, double h) {
  return (f(h) - f(-h)) / (2.0 * h);
}

// |a - n| / max(|a|, |n|, floor): relative for normal magnitudes, absolute
// near zero where relative error is meaningless.
inline double rel_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// P(score_pos > score_neg) + 0.5 P(tie) by enumerating every pair. Counted in
// half-units so the result is an exact ratio of integers.
inline double pairwise_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  std::int64_t half_units = 0, pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!labels[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j]) continue;
      ++pairs;
      if (scores[i] > scores[j]) half_units += 2;
      else if (scores[i] == scores[j]) half_units += 1;
    }
  }
  return static_cast<double>(half_units) / (2.0 * static_cast<double>(pairs));
}

inline double set_dice(const cevae::Mask& p, const cevae::Mask& g) {
  std::vector<std::size_t> ps, gs, both;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p.values[i]) ps.push_back(i);
    if (g.values[i]) gs.push_back(i);
  }
  std::set_intersection(ps.begin(), ps.end(), gs.begin(), gs.end(), std::back_inserter(both));
  if (ps.empty() && gs.empty()) return 1.0;
  return 2.0 * static_cast<double>(both.size()) / static_cast<double>(ps.size() + gs.size());
}

struct McEstimate {
  double mean = 0.0;
  double standard_error = 0.0;
};

// E_q[log q(z) - log p(z)] for a diagonal Gaussian q and standard-normal p,
// from n samples z ~ q.
inline McEstimate monte_carlo_kl(std::span<const double> mu, std::span<const double> log_sigma, int n, cevae::Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  double sum = 0.0, sum_sq = 0.0;
  for (int s = 0; s < n; ++s) {
    double v = 0.0;
    for (std::size_t d = 0; d < mu.size(); ++d) {
      const double e = normal(rng);
      const double z = mu[d] + std::exp(log_sigma[d]) * e;
      // log q - log p; the 0.5 log(2 pi) terms cancel.
      v += -log_sigma[d] - 0.5 * e * e + 0.5 * z * z;
    }
    sum += v;
    sum_sq += v * v;
  }
  const double mean = sum / n;
  const double var = std::max(0.0, sum_sq / n - mean * mean);
  return {mean, std::sqrt(var / n)};
}

// Guided gradient of y = sum_j w2_j * lrelu(sum_i w1_ji x_i + b1_j) by
// enumerating input -> hidden -> output paths and keeping only those whose
// hidden unit had a positive pre-activation and a positive upstream weight.
inline std::vector<double> guided_paths_dense(std::span<const double> x, const std::vector<std::vector<double>>& w1,
                                              std::span<const double> b1, std::span<const double> w2) {
  std::vector<double> grad(x.size(), 0.0);
  for (std::size_t j = 0; j < w1.size(); ++j) {
    double pre = b1[j];
    for (std::size_t i = 0; i < x.size(); ++i) pre += w1[j][i] * x[i];
    if (pre <= 0.0 || w2[j] <= 0.0) continue;
    for (std::size_t i = 0; i < x.size(); ++i) grad[i] += w1[j][i] * w2[j];
  }
  return grad;
}

struct GradCheck {
  double max_rel_error = 0.0;
  int checked = 0;
  int skipped = 0;  // draws whose +-h interval crossed a kink
};

// Signs of every LeakyReLU pre-activation and every |x - x_hat| argument
// visited by the loss. Two points with equal patterns lie on the same smooth
// piece.
inline std::vector<bool> kink_pattern(const cevae::Model<double>& model, const cevae::Tensor<double>& x,
                                      const cevae::Tensor<double>& x_masked, std::span<const double> eps) {
  const auto enc = cevae::encoder_layers(model.config());
  const auto dec = cevae::decoder_layers(model.config());
  std::vector<bool> signs;
  auto record = [&](const cevae::ForwardTape<double>& tape, const std::vector<cevae::LayerSpec>& specs) {
    for (std::size_t l = 0; l < specs.size(); ++l)
      if (specs[l].activation)
        for (double v : tape.layers[l].pre.data) signs.push_back(v > 0.0);
  };
  auto residual = [&](const cevae::Tensor<double>& out) {
    for (std::size_t i = 0; i < x.size(); ++i) signs.push_back(x.data[i] > out.data[i]);
  };
  cevae::ForwardTape<double> e1, d1;
  const auto post = model.encode(x, &e1);
  const auto out = model.decode(cevae::reparameterize<double>(post, eps), &d1);
  record(e1, enc);
  record(d1, dec);
  residual(out);
  if (x_masked.n > 0) {
    cevae::ForwardTape<double> e2, d2;
    const auto pm = model.encode(x_masked, &e2);
    const auto ce = model.decode(cevae::latent_tensor<double>(pm.mu, pm.batch, pm.dim), &d2);
    record(e2, enc);
    record(d2, dec);
    residual(ce);
  }
  return signs;
}

// Central differences of the total loss against the accumulated analytic
// gradient, over `count` parameter entries drawn uniformly from all tensors.
// Entries whose +-h perturbation moves any pre-activation or residual across
// zero are redrawn: the loss is not differentiable across that interval.
inline GradCheck check_param_gradients(cevae::Model<double>& model, const cevae::Tensor<double>& x,
                                       const cevae::Tensor<double>& x_masked, std::span<const double> eps,
                                       double factor, int count, cevae::Rng& rng, double h = 1e-3) {
  auto grads = cevae::zeros_like(model.params());
  cevae::cevae_loss<double>(model, x, x_masked, eps, factor, &grads);
  const auto base = kink_pattern(model, x, x_masked, eps);
  std::vector<std::pair<std::size_t, std::size_t>> flat;
  for (std::size_t t = 0; t < model.params().size(); ++t)
    for (std::size_t i = 0; i < model.params()[t].value.size(); ++i) flat.emplace_back(t, i);
  std::uniform_int_distribution<std::size_t> pick(0, flat.size() - 1);
  GradCheck out;
  while (out.checked < count) {
    const auto [t, i] = flat[pick(rng)];
    double& theta = model.params()[t].value[i];
    const double saved = theta;
    bool smooth = true;
    for (double d : {h, -h}) {
      theta = saved + d;
      smooth = smooth && kink_pattern(model, x, x_masked, eps) == base;
    }
    theta = saved;
    if (!smooth) {
      ++out.skipped;
      if (out.skipped > 20 * count) throw std::runtime_error("check_param_gradients: every draw crosses a kink");
      continue;
    }
    const double numeric = central_difference(
        [&](double d) {
          theta = saved + d;
          return cevae::cevae_loss<double>(model, x, x_masked, eps, factor).total;
        },
        h);
    theta = saved;
    out.max_rel_error = std::max(out.max_rel_error, rel_error(grads[t].value[i], numeric));
    ++out.checked;
  }
  return out;
}

// Same for d(KL)/dx on a single slice, vanilla backprop.
inline GradCheck check_input_kl_gradient(const cevae::Model<double>& model, cevae::Tensor<double> x, int count,
                                         cevae::Rng& rng, double h = 1e-3) {
  const auto grad = cevae::backprop_to_input(model, x, cevae::InputObjective::kl, cevae::kernels::ReluRule::exact);
  std::uniform_int_distribution<std::size_t> pick(0, x.size() - 1);
  GradCheck out;
  for (int k = 0; k < count; ++k) {
    const std::size_t i = pick(rng);
    const double saved = x.data[i];
    const double numeric = central_difference(
        [&](double d) {
          x.data[i] = saved + d;
          return cevae::kl_std_normal(model.encode(x));
        },
        h);
    x.data[i] = saved;
    out.max_rel_error = std::max(out.max_rel_error, rel_error(grad.data[i], numeric));
    ++out.checked;
  }
  return out;
}

// Guided dKL/dx for a model with exactly one strided conv (plus the input
// coordinate channels) followed by the linear head, rebuilt as a dense
// two-layer net from the raw weights and handed to guided_paths_dense.
inline std::vector<double> guided_kl_one_hidden(const cevae::Model<double>& model, std::span<const double> x) {
  const auto& cfg = model.config();
  const int r = cfg.resolution, k = cfg.kernel, s = cfg.stride, pad = cfg.padding();
  const int c = cfg.channels.at(0), hid = (r + 2 * pad - k) / s + 1, latent = cfg.latent_dim;
  const auto& w0 = model.params()[0].value;
  const auto& b0 = model.params()[1].value;
  const auto& wh = model.params()[2].value;
  const auto& bh = model.params()[3].value;
  const int in_c = 3;  // image, x coordinate, y coordinate
  auto coord = [&](int i) { return -1.0 + 2.0 * i / (r - 1); };
  const int n_hidden = c * hid * hid;
  std::vector<std::vector<double>> w1(static_cast<std::size_t>(n_hidden), std::vector<double>(x.size(), 0.0));
  std::vector<double> b1(static_cast<std::size_t>(n_hidden)), act(static_cast<std::size_t>(n_hidden));
  for (int oc = 0; oc < c; ++oc)
    for (int oy = 0; oy < hid; ++oy)
      for (int ox = 0; ox < hid; ++ox) {
        const std::size_t j = (static_cast<std::size_t>(oc) * hid + oy) * hid + ox;
        double bias = b0[static_cast<std::size_t>(oc)], pre = 0.0;
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) {
            const int iy = oy * s - pad + ky, ix = ox * s - pad + kx;
            if (iy < 0 || iy >= r || ix < 0 || ix >= r) continue;
            auto w = [&](int ic) { return w0[((static_cast<std::size_t>(oc) * in_c + ic) * k + ky) * k + kx]; };
            w1[j][static_cast<std::size_t>(iy) * r + ix] = w(0);
            pre += w(0) * x[static_cast<std::size_t>(iy) * r + ix];
            bias += w(1) * coord(ix) + w(2) * coord(iy);
          }
        b1[j] = bias;
        pre += bias;
        act[j] = pre > 0.0 ? pre : cfg.leaky_slope * pre;
      }
  // Head outputs, then dKL/d(head) = (mu, sigma^2 - 1) folded into one weight
  // per hidden unit.
  std::vector<double> w2(static_cast<std::size_t>(n_hidden), 0.0);
  for (int o = 0; o < 2 * latent; ++o) {
    double out = bh[static_cast<std::size_t>(o)];
    for (int j = 0; j < n_hidden; ++j) out += wh[static_cast<std::size_t>(o) * n_hidden + j] * act[static_cast<std::size_t>(j)];
    const double up = o < latent ? out : std::exp(2.0 * out) - 1.0;
    for (int j = 0; j < n_hidden; ++j) w2[static_cast<std::size_t>(j)] += up * wh[static_cast<std::size_t>(o) * n_hidden + j];
  }
  return guided_paths_dense(x, w1, b1, w2);
}

// Shifts the decoder output well away from standardized inputs so that no
// |x - x_hat| term sits near its kink during finite differencing.
inline void offset_decoder_output(cevae::Model<double>& model, double offset) {
  auto& bias = model.params().back();
  for (auto& b : bias.value) b = offset;
}

// Batch x with a block of pixels replaced, standing in for a masked copy.
inline cevae::Tensor<double> block_masked(const cevae::Tensor<double>& x, int y0, int x0, int side, double fill) {
  auto m = x;
  for (int b = 0; b < x.n; ++b)
    for (int y = y0; y < y0 + side; ++y)
      for (int xx = x0; xx < x0 + side; ++xx) m.at(b, 0, y, xx) = fill;
  return m;
}

}  // namespace oracle
