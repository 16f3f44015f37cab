#include <algorithm>
#include <stdexcept>

#include "cevae/kernels.hpp"

namespace cevae::kernels {

ConvShape ConvShape::conv(int batch, int in_c, int in_h, int in_w, int out_c, int kernel, int stride, int pad) {
  if (kernel < 1 || stride < 1 || pad < 0) throw std::invalid_argument("ConvShape: bad kernel/stride/pad");
  ConvShape s;
  s.batch = batch;
  s.in_channels = in_c;
  s.in_h = in_h;
  s.in_w = in_w;
  s.out_channels = out_c;
  s.kernel = kernel;
  s.stride = stride;
  s.pad = pad;
  s.out_h = (in_h + 2 * pad - kernel) / stride + 1;
  s.out_w = (in_w + 2 * pad - kernel) / stride + 1;
  if (s.out_h < 1 || s.out_w < 1) throw std::invalid_argument("ConvShape: kernel larger than padded input");
  return s;
}

ConvShape ConvShape::transposed(int batch, int in_c, int in_h, int in_w, int out_c, int kernel, int stride,
                                int pad) {
  if (kernel < 1 || stride < 1 || pad < 0) throw std::invalid_argument("ConvShape: bad kernel/stride/pad");
  ConvShape s;
  s.batch = batch;
  s.in_channels = in_c;
  s.in_h = in_h;
  s.in_w = in_w;
  s.out_channels = out_c;
  s.kernel = kernel;
  s.stride = stride;
  s.pad = pad;
  s.out_h = (in_h - 1) * stride - 2 * pad + kernel;
  s.out_w = (in_w - 1) * stride - 2 * pad + kernel;
  if (s.out_h < 1 || s.out_w < 1) throw std::invalid_argument("ConvShape: empty transposed output");
  return s;
}

namespace reference {

namespace {

template <typename T>
std::size_t idx4(int c_count, int h_count, int w_count, int b, int c, int y, int x) {
  return ((static_cast<std::size_t>(b) * c_count + c) * h_count + y) * w_count + x;
}

}  // namespace

template <typename T>
void conv2d_forward(const ConvShape& s, std::span<const T> in, std::span<const T> weight, std::span<const T> bias,
                    std::span<T> out) {
  const int k = s.kernel;
  for (int b = 0; b < s.batch; ++b)
    for (int oc = 0; oc < s.out_channels; ++oc)
      for (int oy = 0; oy < s.out_h; ++oy)
        for (int ox = 0; ox < s.out_w; ++ox) {
          T acc = bias.empty() ? T{0} : bias[oc];
          for (int ic = 0; ic < s.in_channels; ++ic)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * s.stride - s.pad + ky;
                const int ix = ox * s.stride - s.pad + kx;
                if (iy < 0 || iy >= s.in_h || ix < 0 || ix >= s.in_w) continue;
                acc += weight[((static_cast<std::size_t>(oc) * s.in_channels + ic) * k + ky) * k + kx] *
                       in[idx4<T>(s.in_channels, s.in_h, s.in_w, b, ic, iy, ix)];
              }
          out[idx4<T>(s.out_channels, s.out_h, s.out_w, b, oc, oy, ox)] = acc;
        }
}

template <typename T>
void conv2d_backward_input(const ConvShape& s, std::span<const T> grad_out, std::span<const T> weight,
                           std::span<T> grad_in) {
  const int k = s.kernel;
  std::fill(grad_in.begin(), grad_in.end(), T{0});
  for (int b = 0; b < s.batch; ++b)
    for (int oc = 0; oc < s.out_channels; ++oc)
      for (int oy = 0; oy < s.out_h; ++oy)
        for (int ox = 0; ox < s.out_w; ++ox) {
          const T g = grad_out[idx4<T>(s.out_channels, s.out_h, s.out_w, b, oc, oy, ox)];
          for (int ic = 0; ic < s.in_channels; ++ic)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * s.stride - s.pad + ky;
                const int ix = ox * s.stride - s.pad + kx;
                if (iy < 0 || iy >= s.in_h || ix < 0 || ix >= s.in_w) continue;
                grad_in[idx4<T>(s.in_channels, s.in_h, s.in_w, b, ic, iy, ix)] +=
                    g * weight[((static_cast<std::size_t>(oc) * s.in_channels + ic) * k + ky) * k + kx];
              }
        }
}

template <typename T>
void conv2d_backward_params(const ConvShape& s, std::span<const T> in, std::span<const T> grad_out,
                            std::span<T> grad_weight, std::span<T> grad_bias) {
  const int k = s.kernel;
  for (int b = 0; b < s.batch; ++b)
    for (int oc = 0; oc < s.out_channels; ++oc)
      for (int oy = 0; oy < s.out_h; ++oy)
        for (int ox = 0; ox < s.out_w; ++ox) {
          const T g = grad_out[idx4<T>(s.out_channels, s.out_h, s.out_w, b, oc, oy, ox)];
          if (!grad_bias.empty()) grad_bias[oc] += g;
          for (int ic = 0; ic < s.in_channels; ++ic)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * s.stride - s.pad + ky;
                const int ix = ox * s.stride - s.pad + kx;
                if (iy < 0 || iy >= s.in_h || ix < 0 || ix >= s.in_w) continue;
                grad_weight[((static_cast<std::size_t>(oc) * s.in_channels + ic) * k + ky) * k + kx] +=
                    g * in[idx4<T>(s.in_channels, s.in_h, s.in_w, b, ic, iy, ix)];
              }
        }
}

template <typename T>
void conv_transpose2d_forward(const ConvShape& s, std::span<const T> in, std::span<const T> weight,
                              std::span<const T> bias, std::span<T> out) {
  const int k = s.kernel;
  for (int b = 0; b < s.batch; ++b)
    for (int oc = 0; oc < s.out_channels; ++oc)
      for (int y = 0; y < s.out_h; ++y)
        for (int x = 0; x < s.out_w; ++x) out[idx4<T>(s.out_channels, s.out_h, s.out_w, b, oc, y, x)] =
            bias.empty() ? T{0} : bias[oc];
  for (int b = 0; b < s.batch; ++b)
    for (int ic = 0; ic < s.in_channels; ++ic)
      for (int iy = 0; iy < s.in_h; ++iy)
        for (int ix = 0; ix < s.in_w; ++ix) {
          const T v = in[idx4<T>(s.in_channels, s.in_h, s.in_w, b, ic, iy, ix)];
          for (int oc = 0; oc < s.out_channels; ++oc)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int oy = iy * s.stride - s.pad + ky;
                const int ox = ix * s.stride - s.pad + kx;
                if (oy < 0 || oy >= s.out_h || ox < 0 || ox >= s.out_w) continue;
                out[idx4<T>(s.out_channels, s.out_h, s.out_w, b, oc, oy, ox)] +=
                    v * weight[((static_cast<std::size_t>(ic) * s.out_channels + oc) * k + ky) * k + kx];
              }
        }
}

template <typename T>
void conv_transpose2d_backward_input(const ConvShape& s, std::span<const T> grad_out, std::span<const T> weight,
                                     std::span<T> grad_in) {
  const int k = s.kernel;
  for (int b = 0; b < s.batch; ++b)
    for (int ic = 0; ic < s.in_channels; ++ic)
      for (int iy = 0; iy < s.in_h; ++iy)
        for (int ix = 0; ix < s.in_w; ++ix) {
          T acc{0};
          for (int oc = 0; oc < s.out_channels; ++oc)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int oy = iy * s.stride - s.pad + ky;
                const int ox = ix * s.stride - s.pad + kx;
                if (oy < 0 || oy >= s.out_h || ox < 0 || ox >= s.out_w) continue;
                acc += grad_out[idx4<T>(s.out_channels, s.out_h, s.out_w, b, oc, oy, ox)] *
                       weight[((static_cast<std::size_t>(ic) * s.out_channels + oc) * k + ky) * k + kx];
              }
          grad_in[idx4<T>(s.in_channels, s.in_h, s.in_w, b, ic, iy, ix)] = acc;
        }
}

template <typename T>
void conv_transpose2d_backward_params(const ConvShape& s, std::span<const T> in, std::span<const T> grad_out,
                                      std::span<T> grad_weight, std::span<T> grad_bias) {
  const int k = s.kernel;
  if (!grad_bias.empty())
    for (int b = 0; b < s.batch; ++b)
      for (int oc = 0; oc < s.out_channels; ++oc)
        for (int y = 0; y < s.out_h; ++y)
          for (int x = 0; x < s.out_w; ++x)
            grad_bias[oc] += grad_out[idx4<T>(s.out_channels, s.out_h, s.out_w, b, oc, y, x)];
  for (int b = 0; b < s.batch; ++b)
    for (int ic = 0; ic < s.in_channels; ++ic)
      for (int iy = 0; iy < s.in_h; ++iy)
        for (int ix = 0; ix < s.in_w; ++ix) {
          const T v = in[idx4<T>(s.in_channels, s.in_h, s.in_w, b, ic, iy, ix)];
          for (int oc = 0; oc < s.out_channels; ++oc)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int oy = iy * s.stride - s.pad + ky;
                const int ox = ix * s.stride - s.pad + kx;
                if (oy < 0 || oy >= s.out_h || ox < 0 || ox >= s.out_w) continue;
                grad_weight[((static_cast<std::size_t>(ic) * s.out_channels + oc) * k + ky) * k + kx] +=
                    v * grad_out[idx4<T>(s.out_channels, s.out_h, s.out_w, b, oc, oy, ox)];
              }
        }
}

template <typename T>
void leaky_relu_forward(std::span<const T> pre, std::span<T> out, T slope) {
  for (std::size_t i = 0; i < pre.size(); ++i) out[i] = pre[i] > T{0} ? pre[i] : slope * pre[i];
}

template <typename T>
void leaky_relu_backward(std::span<const T> pre, std::span<T> grad, T slope, ReluRule rule) {
  for (std::size_t i = 0; i < pre.size(); ++i) {
    if (rule == ReluRule::guided)
      grad[i] = (pre[i] > T{0} && grad[i] > T{0}) ? grad[i] : T{0};
    else
      grad[i] = pre[i] > T{0} ? grad[i] : slope * grad[i];
  }
}

#define CEVAE_INSTANTIATE(T)                                                                                    \
  template void conv2d_forward<T>(const ConvShape&, std::span<const T>, std::span<const T>, std::span<const T>, \
                                  std::span<T>);                                                                \
  template void conv2d_backward_input<T>(const ConvShape&, std::span<const T>, std::span<const T>, std::span<T>); \
  template void conv2d_backward_params<T>(const ConvShape&, std::span<const T>, std::span<const T>, std::span<T>, \
                                          std::span<T>);                                                        \
  template void conv_transpose2d_forward<T>(const ConvShape&, std::span<const T>, std::span<const T>,           \
                                            std::span<const T>, std::span<T>);                                  \
  template void conv_transpose2d_backward_input<T>(const ConvShape&, std::span<const T>, std::span<const T>,    \
                                                   std::span<T>);                                               \
  template void conv_transpose2d_backward_params<T>(const ConvShape&, std::span<const T>, std::span<const T>,   \
                                                    std::span<T>, std::span<T>);                                \
  template void leaky_relu_forward<T>(std::span<const T>, std::span<T>, T);                                     \
  template void leaky_relu_backward<T>(std::span<const T>, std::span<T>, T, ReluRule);

CEVAE_INSTANTIATE(float)
CEVAE_INSTANTIATE(double)

#undef CEVAE_INSTANTIATE

}  // namespace reference
}  // namespace cevae::kernels
