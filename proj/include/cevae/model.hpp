#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cevae/kernels.hpp"
#include "cevae/rng.hpp"
#include "cevae/tensor.hpp"

namespace cevae {

struct ModelConfig {
  int resolution = 64;
  std::vector<int> channels{16, 64, 256, 1024};
  int latent_dim = 1024;
  int kernel = 4;
  int stride = 2;
  double leaky_slope = 0.01;
  bool coordconv = true;
  // Append coordinate channels to every layer input instead of the image only.
  bool coordconv_all_layers = false;

  // Requires resolution == kernel * stride^len(channels), so that the last
  // strided conv leaves a kernel x kernel map that the head reduces to 1x1.
  void validate() const;
  int padding() const { return (kernel - stride) / 2; }

  bool operator==(const ModelConfig&) const = default;
};

// mu / log_sigma stored as batch x latent_dim, row-major.
template <typename T>
struct LatentPosterior {
  int batch = 0;
  int dim = 0;
  std::vector<T> mu;
  std::vector<T> log_sigma;

  std::span<const T> mu_of(int b) const { return {mu.data() + static_cast<std::size_t>(b) * dim, static_cast<std::size_t>(dim)}; }
  std::span<const T> log_sigma_of(int b) const {
    return {log_sigma.data() + static_cast<std::size_t>(b) * dim, static_cast<std::size_t>(dim)};
  }
};

template <typename T>
struct ParamTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<T> value;
};

template <typename T>
using ParamSet = std::vector<ParamTensor<T>>;

template <typename T>
ParamSet<T> zeros_like(const ParamSet<T>& params) {
  ParamSet<T> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back({p.name, p.shape, std::vector<T>(p.value.size(), T{0})});
  return out;
}

struct LayerSpec {
  std::string name;
  bool transposed = false;
  int in_channels = 0;  // excluding coordinate channels
  int out_channels = 0;
  int in_size = 0;
  int out_size = 0;
  int kernel = 0;
  int stride = 0;
  int pad = 0;
  bool coords = false;
  bool activation = true;

  int effective_in_channels() const { return in_channels + (coords ? 2 : 0); }
};

// Encoder: len(channels) strided convs + the two-headed conv; decoder mirrors
// with len(channels)+1 transposed convs.
std::vector<LayerSpec> encoder_layers(const ModelConfig& cfg);
std::vector<LayerSpec> decoder_layers(const ModelConfig& cfg);

// B x C x H x W -> B x (C+2) x H x W; x coordinate then y coordinate, each
// linearly spaced over [-1, 1] (0 for a size-1 axis).
template <typename T>
Tensor<T> add_coord_channels(const Tensor<T>& batch);

template <typename T>
struct LayerTape {
  Tensor<T> input;  // after coordinate concatenation
  Tensor<T> pre;    // conv output before activation
};

template <typename T>
struct ForwardTape {
  std::vector<LayerTape<T>> layers;
};

enum class KernelBackend { parallel, reference };

template <typename T>
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed);
  Model(const ModelConfig& cfg, ParamSet<T> params);

  const ModelConfig& config() const { return cfg_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }
  std::size_t parameter_count() const;

  void set_backend(KernelBackend backend) { backend_ = backend; }
  KernelBackend backend() const { return backend_; }

  // x: B x 1 x R x R.
  LatentPosterior<T> encode(const Tensor<T>& x, ForwardTape<T>* tape = nullptr) const;
  // z: B x latent_dim x 1 x 1.
  Tensor<T> decode(const Tensor<T>& z, ForwardTape<T>* tape = nullptr) const;

  // Returns dL/dx when want_input_grad, else an empty tensor. Parameter
  // gradients are accumulated into grads when non-null.
  Tensor<T> encode_backward(const ForwardTape<T>& tape, std::span<const T> d_mu, std::span<const T> d_log_sigma,
                            kernels::ReluRule rule, ParamSet<T>* grads, bool want_input_grad) const;
  // Returns dL/dz (B x latent_dim x 1 x 1).
  Tensor<T> decode_backward(const ForwardTape<T>& tape, const Tensor<T>& d_out, ParamSet<T>* grads) const;

  template <typename U>
  Model<U> cast() const;

 private:
  Tensor<T> run_layer(const LayerSpec& spec, std::size_t param_index, const Tensor<T>& x, LayerTape<T>* tape) const;
  Tensor<T> backprop_layer(const LayerSpec& spec, std::size_t param_index, const LayerTape<T>& tape, Tensor<T> grad,
                           kernels::ReluRule rule, ParamSet<T>* grads, bool want_input_grad) const;
  void check_input(const Tensor<T>& x) const;

  ModelConfig cfg_;
  std::vector<LayerSpec> enc_;
  std::vector<LayerSpec> dec_;
  ParamSet<T> params_;
  KernelBackend backend_ = KernelBackend::parallel;
};

// z = mu + exp(log_sigma) * eps, eps laid out like mu.
template <typename T>
Tensor<T> reparameterize(const LatentPosterior<T>& post, std::span<const T> eps);

template <typename T>
Tensor<T> latent_tensor(std::span<const T> values, int batch, int dim);

template <typename T>
std::vector<T> standard_normal(Rng& rng, std::size_t count);

template <typename T>
struct VaeForward {
  Tensor<T> x_hat;
  LatentPosterior<T> posterior;
  Tensor<T> z;
};

template <typename T>
VaeForward<T> forward_vae(const Model<T>& model, const Tensor<T>& x, Rng& rng);

// Deterministic mean-encoder path g(f_mu(x)).
template <typename T>
Tensor<T> forward_ce(const Model<T>& model, const Tensor<T>& x_masked);

}  // namespace cevae
