#include "cevae/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "cevae/errors.hpp"

namespace cevae {

namespace k = kernels;

void ModelConfig::validate() const {
  for (int c : channels)
    if (c < 1) throw std::invalid_argument("ModelConfig: channel counts must be >= 1");
  if (latent_dim < 1) throw std::invalid_argument("ModelConfig: latent_dim must be >= 1");
  if (stride < 1 || kernel < stride) throw std::invalid_argument("ModelConfig: need 1 <= stride <= kernel");
  if ((kernel - stride) % 2 != 0) throw std::invalid_argument("ModelConfig: kernel - stride must be even");
  if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw std::invalid_argument("ModelConfig: leaky_slope outside [0,1)");
  long long expect = kernel;
  for (std::size_t i = 0; i < channels.size(); ++i) expect *= stride;
  if (expect != resolution)
    throw std::invalid_argument("ModelConfig: resolution must equal kernel * stride^len(channels) (got " +
                                std::to_string(resolution) + ", expected " + std::to_string(expect) + ")");
}

std::vector<LayerSpec> encoder_layers(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<LayerSpec> layers;
  int size = cfg.resolution;
  int in_c = 1;
  for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
    LayerSpec l;
    l.name = "encoder.conv" + std::to_string(i);
    l.in_channels = in_c;
    l.out_channels = cfg.channels[i];
    l.in_size = size;
    l.kernel = cfg.kernel;
    l.stride = cfg.stride;
    l.pad = cfg.padding();
    l.out_size = (size + 2 * l.pad - l.kernel) / l.stride + 1;
    l.coords = cfg.coordconv && (i == 0 || cfg.coordconv_all_layers);
    layers.push_back(l);
    size = l.out_size;
    in_c = cfg.channels[i];
  }
  LayerSpec head;
  head.name = "encoder.head";
  head.in_channels = in_c;
  head.out_channels = 2 * cfg.latent_dim;
  head.in_size = size;
  head.kernel = cfg.kernel;
  head.stride = cfg.stride;
  head.pad = 0;
  head.out_size = 1;
  head.coords = cfg.coordconv && (cfg.channels.empty() || cfg.coordconv_all_layers);
  head.activation = false;
  layers.push_back(head);
  return layers;
}

std::vector<LayerSpec> decoder_layers(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<LayerSpec> layers;
  const int depth = static_cast<int>(cfg.channels.size());
  LayerSpec first;
  first.name = "decoder.deconv0";
  first.transposed = true;
  first.in_channels = cfg.latent_dim;
  // With no strided layers the whole model is linear: one head conv, one deconv.
  first.out_channels = cfg.channels.empty() ? 1 : cfg.channels.back();
  first.in_size = 1;
  first.out_size = cfg.kernel;
  first.kernel = cfg.kernel;
  first.stride = cfg.stride;
  first.pad = 0;
  first.coords = cfg.coordconv && cfg.coordconv_all_layers;
  first.activation = depth > 0;
  layers.push_back(first);
  int size = cfg.kernel;
  for (int i = depth - 1; i >= 0; --i) {
    LayerSpec l;
    l.name = "decoder.deconv" + std::to_string(depth - i);
    l.transposed = true;
    l.in_channels = cfg.channels[i];
    l.out_channels = i > 0 ? cfg.channels[i - 1] : 1;
    l.in_size = size;
    l.kernel = cfg.kernel;
    l.stride = cfg.stride;
    l.pad = cfg.padding();
    l.out_size = (size - 1) * l.stride - 2 * l.pad + l.kernel;
    l.coords = cfg.coordconv && cfg.coordconv_all_layers;
    l.activation = i > 0;
    layers.push_back(l);
    size = l.out_size;
  }
  return layers;
}

template <typename T>
Tensor<T> add_coord_channels(const Tensor<T>& batch) {
  Tensor<T> out(batch.n, batch.c + 2, batch.h, batch.w);
  const std::size_t plane = batch.plane_size();
  for (int b = 0; b < batch.n; ++b) {
    std::copy_n(batch.data.begin() + b * batch.sample_size(), batch.sample_size(), out.data.begin() + b * out.sample_size());
    T* xs = out.data.data() + b * out.sample_size() + static_cast<std::size_t>(batch.c) * plane;
    T* ys = xs + plane;
    for (int y = 0; y < batch.h; ++y)
      for (int x = 0; x < batch.w; ++x) {
        xs[y * batch.w + x] = batch.w > 1 ? T(-1) + T(2) * x / T(batch.w - 1) : T(0);
        ys[y * batch.w + x] = batch.h > 1 ? T(-1) + T(2) * y / T(batch.h - 1) : T(0);
      }
  }
  return out;
}

namespace {

template <typename T>
Tensor<T> drop_trailing_channels(const Tensor<T>& t, int keep) {
  Tensor<T> out(t.n, keep, t.h, t.w);
  for (int b = 0; b < t.n; ++b)
    std::copy_n(t.data.begin() + b * t.sample_size(), out.sample_size(), out.data.begin() + b * out.sample_size());
  return out;
}

k::ConvShape shape_for(const LayerSpec& l, int batch) {
  const int in_c = l.effective_in_channels();
  return l.transposed ? k::ConvShape::transposed(batch, in_c, l.in_size, l.in_size, l.out_channels, l.kernel, l.stride, l.pad)
                      : k::ConvShape::conv(batch, in_c, l.in_size, l.in_size, l.out_channels, l.kernel, l.stride, l.pad);
}

template <typename T>
void init_layer(const LayerSpec& l, double slope, Rng& rng, ParamSet<T>& params) {
  const int in_c = l.effective_in_channels();
  ParamTensor<T> w;
  w.name = l.name + ".weight";
  w.shape = l.transposed ? std::vector<int>{in_c, l.out_channels, l.kernel, l.kernel}
                         : std::vector<int>{l.out_channels, in_c, l.kernel, l.kernel};
  w.value.resize(static_cast<std::size_t>(in_c) * l.out_channels * l.kernel * l.kernel);
  // Fan-in: number of inputs feeding one output pixel.
  double fan_in = static_cast<double>(in_c) * l.kernel * l.kernel;
  if (l.transposed) {
    const double per_axis = l.in_size == 1 ? 1.0 : static_cast<double>(l.kernel) / l.stride;
    fan_in = in_c * per_axis * per_axis;
  }
  // He-uniform ahead of a LeakyReLU, LeCun-uniform for linear outputs.
  const double bound = l.activation ? std::sqrt(6.0 / ((1.0 + slope * slope) * fan_in)) : std::sqrt(3.0 / fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : w.value) v = static_cast<T>(dist(rng));
  ParamTensor<T> b;
  b.name = l.name + ".bias";
  b.shape = {l.out_channels};
  b.value.assign(static_cast<std::size_t>(l.out_channels), T{0});
  params.push_back(std::move(w));
  params.push_back(std::move(b));
}

}  // namespace

template <typename T>
Model<T>::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg), enc_(encoder_layers(cfg)), dec_(decoder_layers(cfg)) {
  Rng rng(derive_seed(seed, 0x1417));
  for (const auto& l : enc_) init_layer<T>(l, cfg.leaky_slope, rng, params_);
  for (const auto& l : dec_) init_layer<T>(l, cfg.leaky_slope, rng, params_);
}

template <typename T>
Model<T>::Model(const ModelConfig& cfg, ParamSet<T> params)
    : cfg_(cfg), enc_(encoder_layers(cfg)), dec_(decoder_layers(cfg)), params_(std::move(params)) {
  std::vector<std::pair<std::string, std::vector<int>>> layout;
  for (const auto* group : {&enc_, &dec_})
    for (const auto& l : *group) {
      const int in_c = l.effective_in_channels();
      layout.emplace_back(l.name + ".weight", l.transposed ? std::vector<int>{in_c, l.out_channels, l.kernel, l.kernel}
                                                           : std::vector<int>{l.out_channels, in_c, l.kernel, l.kernel});
      layout.emplace_back(l.name + ".bias", std::vector<int>{l.out_channels});
    }
  if (layout.size() != params_.size()) throw std::invalid_argument("Model: parameter count does not match config");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    std::size_t expected = 1;
    for (int d : layout[i].second) expected *= static_cast<std::size_t>(d);
    if (params_[i].name != layout[i].first || params_[i].shape != layout[i].second || params_[i].value.size() != expected)
      throw std::invalid_argument("Model: parameter '" + params_[i].name + "' does not match config");
    for (T v : params_[i].value)
      if (!std::isfinite(static_cast<double>(v))) throw NumericError("Model: non-finite value in '" + params_[i].name + "'");
  }
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename T>
void Model<T>::check_input(const Tensor<T>& x) const {
  if (x.n < 1 || x.c != 1 || x.h != cfg_.resolution || x.w != cfg_.resolution)
    throw std::invalid_argument("Model: expected B x 1 x " + std::to_string(cfg_.resolution) + " x " +
                                std::to_string(cfg_.resolution) + " input, got " + x.shape_string());
}

template <typename T>
Tensor<T> Model<T>::run_layer(const LayerSpec& spec, std::size_t param_index, const Tensor<T>& x, LayerTape<T>* tape) const {
  Tensor<T> input = spec.coords ? add_coord_channels(x) : x;
  const auto s = shape_for(spec, x.n);
  Tensor<T> pre(x.n, spec.out_channels, spec.out_size, spec.out_size);
  const auto& w = params_[param_index].value;
  const auto& b = params_[param_index + 1].value;
  std::span<const T> in_span(input.data), w_span(w), b_span(b);
  if (backend_ == KernelBackend::parallel) {
    if (spec.transposed)
      k::conv_transpose2d_forward<T>(s, in_span, w_span, b_span, pre.data);
    else
      k::conv2d_forward<T>(s, in_span, w_span, b_span, pre.data);
  } else {
    if (spec.transposed)
      k::reference::conv_transpose2d_forward<T>(s, in_span, w_span, b_span, pre.data);
    else
      k::reference::conv2d_forward<T>(s, in_span, w_span, b_span, pre.data);
  }
  Tensor<T> out = pre;
  if (spec.activation) {
    if (backend_ == KernelBackend::parallel)
      k::leaky_relu_forward<T>(pre.data, out.data, static_cast<T>(cfg_.leaky_slope));
    else
      k::reference::leaky_relu_forward<T>(pre.data, out.data, static_cast<T>(cfg_.leaky_slope));
  }
  if (tape) {
    tape->input = std::move(input);
    tape->pre = std::move(pre);
  }
  return out;
}

template <typename T>
Tensor<T> Model<T>::backprop_layer(const LayerSpec& spec, std::size_t param_index, const LayerTape<T>& tape, Tensor<T> grad,
                                   kernels::ReluRule rule, ParamSet<T>* grads, bool want_input_grad) const {
  const bool ref = backend_ == KernelBackend::reference;
  if (spec.activation) {
    if (ref)
      k::reference::leaky_relu_backward<T>(tape.pre.data, grad.data, static_cast<T>(cfg_.leaky_slope), rule);
    else
      k::leaky_relu_backward<T>(tape.pre.data, grad.data, static_cast<T>(cfg_.leaky_slope), rule);
  }
  const auto s = shape_for(spec, grad.n);
  std::span<const T> g_span(grad.data), in_span(tape.input.data), w_span(params_[param_index].value);
  if (grads) {
    auto& gw = (*grads)[param_index].value;
    auto& gb = (*grads)[param_index + 1].value;
    if (spec.transposed) {
      if (ref)
        k::reference::conv_transpose2d_backward_params<T>(s, in_span, g_span, gw, gb);
      else
        k::conv_transpose2d_backward_params<T>(s, in_span, g_span, gw, gb);
    } else {
      if (ref)
        k::reference::conv2d_backward_params<T>(s, in_span, g_span, gw, gb);
      else
        k::conv2d_backward_params<T>(s, in_span, g_span, gw, gb);
    }
  }
  if (!want_input_grad) return {};
  Tensor<T> d_in(grad.n, spec.effective_in_channels(), spec.in_size, spec.in_size);
  if (spec.transposed) {
    if (ref)
      k::reference::conv_transpose2d_backward_input<T>(s, g_span, w_span, d_in.data);
    else
      k::conv_transpose2d_backward_input<T>(s, g_span, w_span, d_in.data);
  } else {
    if (ref)
      k::reference::conv2d_backward_input<T>(s, g_span, w_span, d_in.data);
    else
      k::conv2d_backward_input<T>(s, g_span, w_span, d_in.data);
  }
  return spec.coords ? drop_trailing_channels(d_in, spec.in_channels) : d_in;
}

template <typename T>
LatentPosterior<T> Model<T>::encode(const Tensor<T>& x, ForwardTape<T>* tape) const {
  check_input(x);
  if (tape) tape->layers.assign(enc_.size(), {});
  Tensor<T> cur = x;
  for (std::size_t i = 0; i < enc_.size(); ++i) cur = run_layer(enc_[i], 2 * i, cur, tape ? &tape->layers[i] : nullptr);
  LatentPosterior<T> post;
  post.batch = x.n;
  post.dim = cfg_.latent_dim;
  post.mu.resize(static_cast<std::size_t>(x.n) * post.dim);
  post.log_sigma.resize(post.mu.size());
  for (int b = 0; b < x.n; ++b) {
    const T* row = cur.data.data() + b * cur.sample_size();
    std::copy_n(row, post.dim, post.mu.begin() + static_cast<std::size_t>(b) * post.dim);
    std::copy_n(row + post.dim, post.dim, post.log_sigma.begin() + static_cast<std::size_t>(b) * post.dim);
  }
  return post;
}

template <typename T>
Tensor<T> Model<T>::decode(const Tensor<T>& z, ForwardTape<T>* tape) const {
  if (z.n < 1 || z.c != cfg_.latent_dim || z.h != 1 || z.w != 1)
    throw std::invalid_argument("Model::decode: expected B x " + std::to_string(cfg_.latent_dim) + " x 1 x 1, got " +
                                z.shape_string());
  if (tape) tape->layers.assign(dec_.size(), {});
  const std::size_t offset = 2 * enc_.size();
  Tensor<T> cur = z;
  for (std::size_t i = 0; i < dec_.size(); ++i)
    cur = run_layer(dec_[i], offset + 2 * i, cur, tape ? &tape->layers[i] : nullptr);
  return cur;
}

template <typename T>
Tensor<T> Model<T>::encode_backward(const ForwardTape<T>& tape, std::span<const T> d_mu, std::span<const T> d_log_sigma,
                                    kernels::ReluRule rule, ParamSet<T>* grads, bool want_input_grad) const {
  if (tape.layers.size() != enc_.size()) throw std::invalid_argument("encode_backward: tape is not an encoder tape");
  const int batch = tape.layers.front().input.n;
  const std::size_t dim = static_cast<std::size_t>(cfg_.latent_dim);
  if (d_mu.size() != batch * dim || d_log_sigma.size() != batch * dim)
    throw std::invalid_argument("encode_backward: gradient size mismatch");
  Tensor<T> grad(batch, 2 * cfg_.latent_dim, 1, 1);
  for (int b = 0; b < batch; ++b) {
    std::copy_n(d_mu.begin() + b * dim, dim, grad.data.begin() + b * 2 * dim);
    std::copy_n(d_log_sigma.begin() + b * dim, dim, grad.data.begin() + b * 2 * dim + dim);
  }
  for (std::size_t i = enc_.size(); i-- > 0;) {
    const bool need = i > 0 || want_input_grad;
    grad = backprop_layer(enc_[i], 2 * i, tape.layers[i], std::move(grad), rule, grads, need);
  }
  return grad;
}

template <typename T>
Tensor<T> Model<T>::decode_backward(const ForwardTape<T>& tape, const Tensor<T>& d_out, ParamSet<T>* grads) const {
  if (tape.layers.size() != dec_.size()) throw std::invalid_argument("decode_backward: tape is not a decoder tape");
  const std::size_t offset = 2 * enc_.size();
  Tensor<T> grad = d_out;
  for (std::size_t i = dec_.size(); i-- > 0;)
    grad = backprop_layer(dec_[i], offset + 2 * i, tape.layers[i], std::move(grad), kernels::ReluRule::exact, grads, true);
  return grad;
}

template <typename T>
template <typename U>
Model<U> Model<T>::cast() const {
  ParamSet<U> converted;
  for (const auto& p : params_) {
    ParamTensor<U> q{p.name, p.shape, std::vector<U>(p.value.size())};
    for (std::size_t i = 0; i < p.value.size(); ++i) q.value[i] = static_cast<U>(p.value[i]);
    converted.push_back(std::move(q));
  }
  return Model<U>(cfg_, std::move(converted));
}

template <typename T>
Tensor<T> reparameterize(const LatentPosterior<T>& post, std::span<const T> eps) {
  if (eps.size() != post.mu.size()) throw std::invalid_argument("reparameterize: eps size mismatch");
  Tensor<T> z(post.batch, post.dim, 1, 1);
  for (std::size_t i = 0; i < z.size(); ++i) z.data[i] = post.mu[i] + std::exp(post.log_sigma[i]) * eps[i];
  return z;
}

template <typename T>
Tensor<T> latent_tensor(std::span<const T> values, int batch, int dim) {
  if (values.size() != static_cast<std::size_t>(batch) * dim) throw std::invalid_argument("latent_tensor: size mismatch");
  Tensor<T> z(batch, dim, 1, 1);
  std::copy(values.begin(), values.end(), z.data.begin());
  return z;
}

template <typename T>
std::vector<T> standard_normal(Rng& rng, std::size_t count) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<T> out(count);
  for (auto& v : out) v = static_cast<T>(normal(rng));
  return out;
}

template <typename T>
VaeForward<T> forward_vae(const Model<T>& model, const Tensor<T>& x, Rng& rng) {
  VaeForward<T> f;
  f.posterior = model.encode(x);
  const auto eps = standard_normal<T>(rng, f.posterior.mu.size());
  f.z = reparameterize<T>(f.posterior, eps);
  f.x_hat = model.decode(f.z);
  return f;
}

template <typename T>
Tensor<T> forward_ce(const Model<T>& model, const Tensor<T>& x_masked) {
  const auto post = model.encode(x_masked);
  return model.decode(latent_tensor<T>(post.mu, post.batch, post.dim));
}

template class Model<float>;
template class Model<double>;
template Model<double> Model<float>::cast<double>() const;
template Model<float> Model<double>::cast<float>() const;
template Model<float> Model<float>::cast<float>() const;
template Model<double> Model<double>::cast<double>() const;

#define CEVAE_INSTANTIATE(T)                                                      \
  template Tensor<T> add_coord_channels<T>(const Tensor<T>&);                    \
  template Tensor<T> reparameterize<T>(const LatentPosterior<T>&, std::span<const T>); \
  template Tensor<T> latent_tensor<T>(std::span<const T>, int, int);             \
  template std::vector<T> standard_normal<T>(Rng&, std::size_t);                 \
  template VaeForward<T> forward_vae<T>(const Model<T>&, const Tensor<T>&, Rng&); \
  template Tensor<T> forward_ce<T>(const Model<T>&, const Tensor<T>&);

CEVAE_INSTANTIATE(float)
CEVAE_INSTANTIATE(double)

#undef CEVAE_INSTANTIATE

}  // namespace cevae
