#include "cevae/objectives.hpp"

#include <cmath>
#include <stdexcept>

#include "cevae/errors.hpp"

namespace cevae {

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::AE:
      return "AE";
    case ModelKind::DAE:
      return "DAE";
    case ModelKind::CE:
      return "CE";
    case ModelKind::VAE:
      return "VAE";
    case ModelKind::ceVAE:
      return "ceVAE";
  }
  return "?";
}

ModelKind parse_model_kind(std::string_view text) {
  if (text == "AE") return ModelKind::AE;
  if (text == "DAE") return ModelKind::DAE;
  if (text == "CE") return ModelKind::CE;
  if (text == "VAE") return ModelKind::VAE;
  if (text == "ceVAE") return ModelKind::ceVAE;
  throw std::invalid_argument("unknown model kind '" + std::string(text) + "' (expected AE, DAE, CE, VAE or ceVAE)");
}

double combine_losses(double l_kl, double l_rec_vae, double l_rec_ce, double factor) {
  return (1.0 - factor) * (l_kl + l_rec_vae) + factor * l_rec_ce;
}

LossBreakdown make_breakdown(double l_kl, double l_rec_vae, double l_rec_ce, double factor) {
  if (!(factor >= 0.0 && factor <= 1.0)) throw std::invalid_argument("cevae_factor must lie in [0,1]");
  LossBreakdown b{l_kl, l_rec_vae, l_rec_ce, combine_losses(l_kl, l_rec_vae, l_rec_ce, factor), factor};
  if (!std::isfinite(b.l_kl) || !std::isfinite(b.l_rec_vae) || !std::isfinite(b.l_rec_ce) || !std::isfinite(b.total))
    throw NumericError("non-finite loss term");
  return b;
}

namespace {

template <typename T>
void check_finite(const LatentPosterior<T>& post) {
  for (std::size_t i = 0; i < post.mu.size(); ++i)
    if (!std::isfinite(static_cast<double>(post.mu[i])) || !std::isfinite(static_cast<double>(post.log_sigma[i])))
      throw NumericError("non-finite posterior parameters");
}

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("shape mismatch: " + a.shape_string() + " vs " + b.shape_string());
}

}  // namespace

template <typename T>
std::vector<double> kl_per_sample(const LatentPosterior<T>& post) {
  check_finite(post);
  std::vector<double> out(static_cast<std::size_t>(post.batch), 0.0);
  for (int b = 0; b < post.batch; ++b) {
    double acc = 0.0;
    for (int i = 0; i < post.dim; ++i) {
      const double mu = post.mu[static_cast<std::size_t>(b) * post.dim + i];
      const double ls = post.log_sigma[static_cast<std::size_t>(b) * post.dim + i];
      // expm1 keeps the sigma ~ 1 regime accurate.
      acc += mu * mu + std::expm1(2.0 * ls) - 2.0 * ls;
    }
    out[b] = 0.5 * acc;
  }
  return out;
}

template <typename T>
double kl_std_normal(const LatentPosterior<T>& post) {
  if (post.batch < 1) throw std::invalid_argument("kl_std_normal: empty posterior");
  const auto per = kl_per_sample(post);
  double sum = 0.0;
  for (double v : per) sum += v;
  return sum / post.batch;
}

template <typename T>
void kl_gradient(const LatentPosterior<T>& post, T scale, std::span<T> d_mu, std::span<T> d_log_sigma) {
  if (d_mu.size() != post.mu.size() || d_log_sigma.size() != post.log_sigma.size())
    throw std::invalid_argument("kl_gradient: size mismatch");
  for (std::size_t i = 0; i < post.mu.size(); ++i) {
    d_mu[i] += scale * post.mu[i];
    d_log_sigma[i] += scale * static_cast<T>(std::expm1(2.0 * static_cast<double>(post.log_sigma[i])));
  }
}

template <typename T>
std::vector<double> l1_per_sample(const Tensor<T>& x, const Tensor<T>& x_hat) {
  check_same_shape(x, x_hat);
  std::vector<double> out(static_cast<std::size_t>(x.n), 0.0);
  for (int b = 0; b < x.n; ++b) {
    const auto a = x.sample(b);
    const auto r = x_hat.sample(b);
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(static_cast<double>(a[i]) - static_cast<double>(r[i]));
    out[b] = acc;
  }
  return out;
}

template <typename T>
double l1_reconstruction(const Tensor<T>& x, const Tensor<T>& x_hat) {
  const auto per = l1_per_sample(x, x_hat);
  if (per.empty()) throw std::invalid_argument("l1_reconstruction: empty batch");
  double sum = 0.0;
  for (double v : per) sum += v;
  return sum / static_cast<double>(per.size());
}

template <typename T>
double mse_reconstruction(const Tensor<T>& x, const Tensor<T>& x_hat) {
  check_same_shape(x, x_hat);
  if (x.n < 1) throw std::invalid_argument("mse_reconstruction: empty batch");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x.data[i]) - static_cast<double>(x_hat.data[i]);
    acc += d * d;
  }
  return acc / x.n;
}

namespace {

// d/dx_hat of scale * mean_b sum |x_hat - x|
template <typename T>
Tensor<T> l1_gradient(const Tensor<T>& x, const Tensor<T>& x_hat, double scale) {
  Tensor<T> g(x.n, x.c, x.h, x.w);
  const T s = static_cast<T>(scale / x.n);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const T d = x_hat.data[i] - x.data[i];
    g.data[i] = d > T{0} ? s : (d < T{0} ? -s : T{0});
  }
  return g;
}

// Mean-encoder reconstruction g(f_mu(input)) against target; optionally backprops weight * L1.
template <typename T>
double mean_path_l1(const Model<T>& model, const Tensor<T>& input, const Tensor<T>& target, double weight,
                    ParamSet<T>* grads) {
  ForwardTape<T> enc_tape, dec_tape;
  const bool backprop = grads != nullptr && weight != 0.0;
  const auto post = model.encode(input, backprop ? &enc_tape : nullptr);
  const auto z = latent_tensor<T>(post.mu, post.batch, post.dim);
  const auto x_hat = model.decode(z, backprop ? &dec_tape : nullptr);
  const double rec = l1_reconstruction(target, x_hat);
  if (backprop) {
    const auto dz = model.decode_backward(dec_tape, l1_gradient(target, x_hat, weight), grads);
    std::vector<T> d_log_sigma(post.log_sigma.size(), T{0});
    model.encode_backward(enc_tape, dz.data, d_log_sigma, kernels::ReluRule::exact, grads, false);
  }
  return rec;
}

}  // namespace

template <typename T>
LossBreakdown cevae_loss(const Model<T>& model, const Tensor<T>& x, const Tensor<T>& x_masked, std::span<const T> eps,
                         double factor, ParamSet<T>* grads) {
  if (!(factor >= 0.0 && factor <= 1.0)) throw std::invalid_argument("cevae_loss: factor must lie in [0,1]");
  const double vae_weight = 1.0 - factor;
  const bool vae_backprop = grads != nullptr && vae_weight != 0.0;

  // VAE branch.
  ForwardTape<T> enc_tape, dec_tape;
  const auto post = model.encode(x, vae_backprop ? &enc_tape : nullptr);
  const double l_kl = kl_std_normal(post);
  const auto z = reparameterize<T>(post, eps);
  const auto x_hat = model.decode(z, vae_backprop ? &dec_tape : nullptr);
  const double l_rec_vae = l1_reconstruction(x, x_hat);
  if (vae_backprop) {
    const auto dz = model.decode_backward(dec_tape, l1_gradient(x, x_hat, vae_weight), grads);
    std::vector<T> d_mu(post.mu.size()), d_log_sigma(post.log_sigma.size());
    for (std::size_t i = 0; i < d_mu.size(); ++i) {
      d_mu[i] = dz.data[i];
      d_log_sigma[i] = dz.data[i] * eps[i] * std::exp(post.log_sigma[i]);
    }
    kl_gradient<T>(post, static_cast<T>(vae_weight / post.batch), d_mu, d_log_sigma);
    model.encode_backward(enc_tape, d_mu, d_log_sigma, kernels::ReluRule::exact, grads, false);
  }

  double l_rec_ce = 0.0;
  if (x_masked.n > 0) {
    check_same_shape(x, x_masked);
    l_rec_ce = mean_path_l1(model, x_masked, x, factor, grads);
  } else if (factor != 0.0) {
    throw std::invalid_argument("cevae_loss: factor > 0 requires a masked input");
  }
  return make_breakdown(l_kl, l_rec_vae, l_rec_ce, factor);
}

template <typename T>
LossBreakdown cevae_loss(const Model<T>& model, const Tensor<T>& x, const Tensor<T>& x_masked, Rng& rng, double factor,
                         ParamSet<T>* grads) {
  const auto eps = standard_normal<T>(rng, static_cast<std::size_t>(x.n) * model.config().latent_dim);
  return cevae_loss<T>(model, x, x_masked, eps, factor, grads);
}

template <typename T>
LossBreakdown model_loss(ModelKind kind, const Model<T>& model, const Tensor<T>& x, const Tensor<T>& x_corrupted,
                         std::span<const T> eps, double factor, ParamSet<T>* grads) {
  switch (kind) {
    case ModelKind::AE:
      return make_breakdown(0.0, mean_path_l1(model, x, x, 1.0, grads), 0.0, 0.0);
    case ModelKind::DAE: {
      check_same_shape(x, x_corrupted);
      return make_breakdown(0.0, 0.0, mean_path_l1(model, x_corrupted, x, 1.0, grads), 1.0);
    }
    case ModelKind::CE:
      return cevae_loss<T>(model, x, x_corrupted, eps, 1.0, grads);
    case ModelKind::VAE:
      return cevae_loss<T>(model, x, Tensor<T>{}, eps, 0.0, grads);
    case ModelKind::ceVAE:
      return cevae_loss<T>(model, x, x_corrupted, eps, factor, grads);
  }
  throw std::invalid_argument("model_loss: unknown model kind");
}

template <typename T>
LossBreakdown baseline_loss(ModelKind kind, const Model<T>& model, const Tensor<T>& x, const Tensor<T>& x_corrupted,
                            std::span<const T> eps, ParamSet<T>* grads) {
  if (kind == ModelKind::ceVAE) throw std::invalid_argument("baseline_loss: ceVAE is not a baseline kind");
  return model_loss<T>(kind, model, x, x_corrupted, eps, 0.0, grads);
}

#define CEVAE_INSTANTIATE(T)                                                                                        \
  template double kl_std_normal<T>(const LatentPosterior<T>&);                                                      \
  template std::vector<double> kl_per_sample<T>(const LatentPosterior<T>&);                                         \
  template void kl_gradient<T>(const LatentPosterior<T>&, T, std::span<T>, std::span<T>);                           \
  template double l1_reconstruction<T>(const Tensor<T>&, const Tensor<T>&);                                         \
  template double mse_reconstruction<T>(const Tensor<T>&, const Tensor<T>&);                                        \
  template std::vector<double> l1_per_sample<T>(const Tensor<T>&, const Tensor<T>&);                                \
  template LossBreakdown cevae_loss<T>(const Model<T>&, const Tensor<T>&, const Tensor<T>&, std::span<const T>,     \
                                       double, ParamSet<T>*);                                                       \
  template LossBreakdown cevae_loss<T>(const Model<T>&, const Tensor<T>&, const Tensor<T>&, Rng&, double,           \
                                       ParamSet<T>*);                                                               \
  template LossBreakdown model_loss<T>(ModelKind, const Model<T>&, const Tensor<T>&, const Tensor<T>&,              \
                                       std::span<const T>, double, ParamSet<T>*);                                   \
  template LossBreakdown baseline_loss<T>(ModelKind, const Model<T>&, const Tensor<T>&, const Tensor<T>&,           \
                                          std::span<const T>, ParamSet<T>*);

CEVAE_INSTANTIATE(float)
CEVAE_INSTANTIATE(double)

#undef CEVAE_INSTANTIATE

}  // namespace cevae
