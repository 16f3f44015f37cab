#include <Eigen/Core>
#include <algorithm>
#include <vector>

#include "cevae/kernels.hpp"

namespace cevae::kernels {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

// Unfolds the large spatial side (channels x big_h x big_w) into a
// [channels*k*k] x [batch * small_h * small_w] matrix.
template <typename T>
void im2col(const T* src, int batch, int channels, int big_h, int big_w, int small_h, int small_w, int k, int stride,
            int pad, T* col) {
  const long long small = 1LL * small_h * small_w;
  const long long cols = batch * small;
  const int rows = channels * k * k;
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    const int c = r / (k * k);
    const int ky = (r / k) % k;
    const int kx = r % k;
    T* dst = col + r * cols;
    for (int b = 0; b < batch; ++b) {
      const T* plane = src + (static_cast<long long>(b) * channels + c) * big_h * big_w;
      T* out = dst + b * small;
      for (int sy = 0; sy < small_h; ++sy) {
        const int y = sy * stride - pad + ky;
        T* row = out + sy * small_w;
        if (y < 0 || y >= big_h) {
          std::fill(row, row + small_w, T{0});
          continue;
        }
        const T* line = plane + y * big_w;
        for (int sx = 0; sx < small_w; ++sx) {
          const int x = sx * stride - pad + kx;
          row[sx] = (x >= 0 && x < big_w) ? line[x] : T{0};
        }
      }
    }
  }
}

// Inverse scatter of im2col; dst is overwritten. Parallel over channels so
// every thread owns a disjoint set of output planes.
template <typename T>
void col2im(const T* col, int batch, int channels, int big_h, int big_w, int small_h, int small_w, int k, int stride,
            int pad, T* dst) {
  const long long small = 1LL * small_h * small_w;
  const long long cols = batch * small;
#pragma omp parallel for schedule(static)
  for (int c = 0; c < channels; ++c) {
    for (int b = 0; b < batch; ++b) {
      T* plane = dst + (static_cast<long long>(b) * channels + c) * big_h * big_w;
      std::fill(plane, plane + big_h * big_w, T{0});
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const T* src = col + ((c * k + ky) * k + kx) * cols + b * small;
          for (int sy = 0; sy < small_h; ++sy) {
            const int y = sy * stride - pad + ky;
            if (y < 0 || y >= big_h) continue;
            T* line = plane + y * big_w;
            const T* row = src + sy * small_w;
            for (int sx = 0; sx < small_w; ++sx) {
              const int x = sx * stride - pad + kx;
              if (x >= 0 && x < big_w) line[x] += row[sx];
            }
          }
        }
    }
  }
}

// [batch][channels][plane] <-> [channels][batch * plane]
template <typename T>
void batch_to_channel_major(const T* src, int batch, int channels, long long plane, T* dst) {
#pragma omp parallel for schedule(static)
  for (int c = 0; c < channels; ++c)
    for (int b = 0; b < batch; ++b)
      std::copy_n(src + (static_cast<long long>(b) * channels + c) * plane, plane,
                  dst + (static_cast<long long>(c) * batch + b) * plane);
}

template <typename T>
void channel_to_batch_major(const T* src, int batch, int channels, long long plane, T* dst) {
#pragma omp parallel for schedule(static)
  for (int c = 0; c < channels; ++c)
    for (int b = 0; b < batch; ++b)
      std::copy_n(src + (static_cast<long long>(c) * batch + b) * plane, plane,
                  dst + (static_cast<long long>(b) * channels + c) * plane);
}

template <typename T>
void add_channel_bias(std::span<T> out, std::span<const T> bias, int batch, int channels, long long plane) {
  if (bias.empty()) return;
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < batch; ++b)
    for (int c = 0; c < channels; ++c) {
      T* p = out.data() + (static_cast<long long>(b) * channels + c) * plane;
      const T v = bias[c];
      for (long long i = 0; i < plane; ++i) p[i] += v;
    }
}

}  // namespace

template <typename T>
void conv2d_forward(const ConvShape& s, std::span<const T> in, std::span<const T> weight, std::span<const T> bias,
                    std::span<T> out) {
  const int kdim = s.in_channels * s.kernel * s.kernel;
  const long long plane = 1LL * s.out_h * s.out_w;
  const long long ncols = s.batch * plane;
  std::vector<T> col(static_cast<std::size_t>(kdim) * ncols);
  im2col(in.data(), s.batch, s.in_channels, s.in_h, s.in_w, s.out_h, s.out_w, s.kernel, s.stride, s.pad, col.data());
  std::vector<T> tmp(static_cast<std::size_t>(s.out_channels) * ncols);
  MapMat<T>(tmp.data(), s.out_channels, ncols).noalias() =
      ConstMapMat<T>(weight.data(), s.out_channels, kdim) * ConstMapMat<T>(col.data(), kdim, ncols);
  channel_to_batch_major(tmp.data(), s.batch, s.out_channels, plane, out.data());
  add_channel_bias(out, bias, s.batch, s.out_channels, plane);
}

template <typename T>
void conv2d_backward_input(const ConvShape& s, std::span<const T> grad_out, std::span<const T> weight,
                           std::span<T> grad_in) {
  const int kdim = s.in_channels * s.kernel * s.kernel;
  const long long plane = 1LL * s.out_h * s.out_w;
  const long long ncols = s.batch * plane;
  std::vector<T> g(static_cast<std::size_t>(s.out_channels) * ncols);
  batch_to_channel_major(grad_out.data(), s.batch, s.out_channels, plane, g.data());
  std::vector<T> col(static_cast<std::size_t>(kdim) * ncols);
  MapMat<T>(col.data(), kdim, ncols).noalias() =
      ConstMapMat<T>(weight.data(), s.out_channels, kdim).transpose() *
      ConstMapMat<T>(g.data(), s.out_channels, ncols);
  col2im(col.data(), s.batch, s.in_channels, s.in_h, s.in_w, s.out_h, s.out_w, s.kernel, s.stride, s.pad,
         grad_in.data());
}

template <typename T>
void conv2d_backward_params(const ConvShape& s, std::span<const T> in, std::span<const T> grad_out,
                            std::span<T> grad_weight, std::span<T> grad_bias) {
  const int kdim = s.in_channels * s.kernel * s.kernel;
  const long long plane = 1LL * s.out_h * s.out_w;
  const long long ncols = s.batch * plane;
  std::vector<T> g(static_cast<std::size_t>(s.out_channels) * ncols);
  batch_to_channel_major(grad_out.data(), s.batch, s.out_channels, plane, g.data());
  std::vector<T> col(static_cast<std::size_t>(kdim) * ncols);
  im2col(in.data(), s.batch, s.in_channels, s.in_h, s.in_w, s.out_h, s.out_w, s.kernel, s.stride, s.pad, col.data());
  ConstMapMat<T> gm(g.data(), s.out_channels, ncols);
  MapMat<T>(grad_weight.data(), s.out_channels, kdim).noalias() +=
      gm * ConstMapMat<T>(col.data(), kdim, ncols).transpose();
  // Plain loop: Eigen's vectorized row sums peel by address, so the rounding
  // would depend on where the heap put g.
  if (!grad_bias.empty()) {
#pragma omp parallel for schedule(static)
    for (int c = 0; c < s.out_channels; ++c) {
      const T* row = g.data() + c * ncols;
      T acc{0};
      for (long long i = 0; i < ncols; ++i) acc += row[i];
      grad_bias[c] += acc;
    }
  }
}

template <typename T>
void conv_transpose2d_forward(const ConvShape& s, std::span<const T> in, std::span<const T> weight,
                              std::span<const T> bias, std::span<T> out) {
  const int kdim = s.out_channels * s.kernel * s.kernel;
  const long long plane = 1LL * s.in_h * s.in_w;
  const long long ncols = s.batch * plane;
  std::vector<T> x(static_cast<std::size_t>(s.in_channels) * ncols);
  batch_to_channel_major(in.data(), s.batch, s.in_channels, plane, x.data());
  std::vector<T> col(static_cast<std::size_t>(kdim) * ncols);
  MapMat<T>(col.data(), kdim, ncols).noalias() =
      ConstMapMat<T>(weight.data(), s.in_channels, kdim).transpose() * ConstMapMat<T>(x.data(), s.in_channels, ncols);
  col2im(col.data(), s.batch, s.out_channels, s.out_h, s.out_w, s.in_h, s.in_w, s.kernel, s.stride, s.pad,
         out.data());
  add_channel_bias(out, bias, s.batch, s.out_channels, 1LL * s.out_h * s.out_w);
}

template <typename T>
void conv_transpose2d_backward_input(const ConvShape& s, std::span<const T> grad_out, std::span<const T> weight,
                                     std::span<T> grad_in) {
  const int kdim = s.out_channels * s.kernel * s.kernel;
  const long long plane = 1LL * s.in_h * s.in_w;
  const long long ncols = s.batch * plane;
  std::vector<T> col(static_cast<std::size_t>(kdim) * ncols);
  im2col(grad_out.data(), s.batch, s.out_channels, s.out_h, s.out_w, s.in_h, s.in_w, s.kernel, s.stride, s.pad,
         col.data());
  std::vector<T> g(static_cast<std::size_t>(s.in_channels) * ncols);
  MapMat<T>(g.data(), s.in_channels, ncols).noalias() =
      ConstMapMat<T>(weight.data(), s.in_channels, kdim) * ConstMapMat<T>(col.data(), kdim, ncols);
  channel_to_batch_major(g.data(), s.batch, s.in_channels, plane, grad_in.data());
}

template <typename T>
void conv_transpose2d_backward_params(const ConvShape& s, std::span<const T> in, std::span<const T> grad_out,
                                      std::span<T> grad_weight, std::span<T> grad_bias) {
  const int kdim = s.out_channels * s.kernel * s.kernel;
  const long long plane = 1LL * s.in_h * s.in_w;
  const long long ncols = s.batch * plane;
  std::vector<T> x(static_cast<std::size_t>(s.in_channels) * ncols);
  batch_to_channel_major(in.data(), s.batch, s.in_channels, plane, x.data());
  std::vector<T> col(static_cast<std::size_t>(kdim) * ncols);
  im2col(grad_out.data(), s.batch, s.out_channels, s.out_h, s.out_w, s.in_h, s.in_w, s.kernel, s.stride, s.pad,
         col.data());
  MapMat<T>(grad_weight.data(), s.in_channels, kdim).noalias() +=
      ConstMapMat<T>(x.data(), s.in_channels, ncols) * ConstMapMat<T>(col.data(), kdim, ncols).transpose();
  if (!grad_bias.empty()) {
    const long long out_plane = 1LL * s.out_h * s.out_w;
#pragma omp parallel for schedule(static)
    for (int c = 0; c < s.out_channels; ++c) {
      T acc{0};
      for (int b = 0; b < s.batch; ++b) {
        const T* p = grad_out.data() + (static_cast<long long>(b) * s.out_channels + c) * out_plane;
        for (long long i = 0; i < out_plane; ++i) acc += p[i];
      }
      grad_bias[c] += acc;
    }
  }
}

template <typename T>
void leaky_relu_forward(std::span<const T> pre, std::span<T> out, T slope) {
  const long long n = static_cast<long long>(pre.size());
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < n; ++i) out[i] = pre[i] > T{0} ? pre[i] : slope * pre[i];
}

template <typename T>
void leaky_relu_backward(std::span<const T> pre, std::span<T> grad, T slope, ReluRule rule) {
  const long long n = static_cast<long long>(pre.size());
  if (rule == ReluRule::guided) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < n; ++i) grad[i] = (pre[i] > T{0} && grad[i] > T{0}) ? grad[i] : T{0};
  } else {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < n; ++i) grad[i] = pre[i] > T{0} ? grad[i] : slope * grad[i];
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

}  // namespace cevae::kernels
