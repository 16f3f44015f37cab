#pragma once

#include <span>
#include <string>
#include <string_view>

#include "cevae/model.hpp"

namespace cevae {

enum class ModelKind { AE, DAE, CE, VAE, ceVAE };

std::string_view to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view text);

// Reduction: sum over pixels / latent dims, mean over the batch.
struct LossBreakdown {
  double l_kl = 0.0;
  double l_rec_vae = 0.0;
  double l_rec_ce = 0.0;
  double total = 0.0;
  double cevae_factor = 0.0;
};

// total = (1 - factor) * (l_kl + l_rec_vae) + factor * l_rec_ce
double combine_losses(double l_kl, double l_rec_vae, double l_rec_ce, double factor);
LossBreakdown make_breakdown(double l_kl, double l_rec_vae, double l_rec_ce, double factor);

// 0.5 * sum(mu^2 + sigma^2 - 2 log sigma - 1), averaged over the batch.
template <typename T>
double kl_std_normal(const LatentPosterior<T>& post);

// Per-sample KL values (no batch averaging).
template <typename T>
std::vector<double> kl_per_sample(const LatentPosterior<T>& post);

// Adds scale * dKL/d(mu, log_sigma) for the per-sample (unaveraged) KL.
template <typename T>
void kl_gradient(const LatentPosterior<T>& post, T scale, std::span<T> d_mu, std::span<T> d_log_sigma);

template <typename T>
double l1_reconstruction(const Tensor<T>& x, const Tensor<T>& x_hat);
template <typename T>
double mse_reconstruction(const Tensor<T>& x, const Tensor<T>& x_hat);
template <typename T>
std::vector<double> l1_per_sample(const Tensor<T>& x, const Tensor<T>& x_hat);

// Combined objective. The VAE branch encodes clean x and samples
// z = mu + sigma * eps; the CE branch reconstructs x from g(f_mu(x_masked))
// and contributes no KL term. An empty x_masked skips the CE branch.
// Branches with zero weight are evaluated but not backpropagated. When grads
// is non-null, d(total)/d(params) is accumulated into it.
template <typename T>
LossBreakdown cevae_loss(const Model<T>& model, const Tensor<T>& x, const Tensor<T>& x_masked, std::span<const T> eps,
                         double factor, ParamSet<T>* grads = nullptr);

template <typename T>
LossBreakdown cevae_loss(const Model<T>& model, const Tensor<T>& x, const Tensor<T>& x_masked, Rng& rng, double factor,
                         ParamSet<T>* grads = nullptr);

// AE:  L1(x, g(f_mu(x))), reported as l_rec_vae with factor 0.
// DAE: L1(x, g(f_mu(x_corrupted))) with Gaussian-corrupted input, reported as l_rec_ce with factor 1.
// CE:  cevae_loss with factor 1.  VAE: cevae_loss with factor 0 and no CE branch.
// ceVAE: cevae_loss with the given factor.
template <typename T>
LossBreakdown model_loss(ModelKind kind, const Model<T>& model, const Tensor<T>& x, const Tensor<T>& x_corrupted,
                         std::span<const T> eps, double factor, ParamSet<T>* grads = nullptr);

// Baselines only; ModelKind::ceVAE is rejected with std::invalid_argument.
template <typename T>
LossBreakdown baseline_loss(ModelKind kind, const Model<T>& model, const Tensor<T>& x, const Tensor<T>& x_corrupted,
                            std::span<const T> eps, ParamSet<T>* grads = nullptr);

}  // namespace cevae
