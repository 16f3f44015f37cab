#pragma once

// Convolution kernels used by the encoder/decoder.
//
// Two implementations with identical signatures:
//   cevae::kernels            im2col + GEMM (Eigen), OpenMP over channels/batch
//   cevae::kernels::reference direct serial loops, kept as the test oracle
//
// Layouts: activations NCHW, conv weights [out_c][in_c][k][k], transposed-conv
// weights [in_c][out_c][k][k]. backward_input overwrites grad_in; the
// backward_params functions accumulate into grad_weight / grad_bias.

#include <span>

namespace cevae::kernels {

struct ConvShape {
  int batch = 0;
  int in_channels = 0;
  int in_h = 0;
  int in_w = 0;
  int out_channels = 0;
  int out_h = 0;
  int out_w = 0;
  int kernel = 0;
  int stride = 1;
  int pad = 0;

  static ConvShape conv(int batch, int in_c, int in_h, int in_w, int out_c, int kernel, int stride, int pad);
  static ConvShape transposed(int batch, int in_c, int in_h, int in_w, int out_c, int kernel, int stride, int pad);

  long long input_size() const { return 1LL * batch * in_channels * in_h * in_w; }
  long long output_size() const { return 1LL * batch * out_channels * out_h * out_w; }
  long long weight_size() const { return 1LL * in_channels * out_channels * kernel * kernel; }
};

enum class ReluRule {
  exact,   // d/dx LeakyReLU
  guided,  // pass only where pre-activation > 0 and upstream gradient > 0
};

template <typename T>
void conv2d_forward(const ConvShape& s, std::span<const T> in, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> out);
template <typename T>
void conv2d_backward_input(const ConvShape& s, std::span<const T> grad_out, std::span<const T> weight,
                           std::span<T> grad_in);
template <typename T>
void conv2d_backward_params(const ConvShape& s, std::span<const T> in, std::span<const T> grad_out,
                            std::span<T> grad_weight, std::span<T> grad_bias);

template <typename T>
void conv_transpose2d_forward(const ConvShape& s, std::span<const T> in, std::span<const T> weight,
                              std::span<const T> bias, std::span<T> out);
template <typename T>
void conv_transpose2d_backward_input(const ConvShape& s, std::span<const T> grad_out, std::span<const T> weight,
                                     std::span<T> grad_in);
template <typename T>
void conv_transpose2d_backward_params(const ConvShape& s, std::span<const T> in, std::span<const T> grad_out,
                                      std::span<T> grad_weight, std::span<T> grad_bias);

template <typename T>
void leaky_relu_forward(std::span<const T> pre, std::span<T> out, T slope);
// grad is rewritten in place from d(out) to d(pre).
template <typename T>
void leaky_relu_backward(std::span<const T> pre, std::span<T> grad, T slope, ReluRule rule);

namespace reference {

template <typename T>
void conv2d_forward(const ConvShape& s, std::span<const T> in, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> out);
template <typename T>
void conv2d_backward_input(const ConvShape& s, std::span<const T> grad_out, std::span<const T> weight,
                           std::span<T> grad_in);
template <typename T>
void conv2d_backward_params(const ConvShape& s, std::span<const T> in, std::span<const T> grad_out,
                            std::span<T> grad_weight, std::span<T> grad_bias);

template <typename T>
void conv_transpose2d_forward(const ConvShape& s, std::span<const T> in, std::span<const T> weight,
                              std::span<const T> bias, std::span<T> out);
template <typename T>
void conv_transpose2d_backward_input(const ConvShape& s, std::span<const T> grad_out, std::span<const T> weight,
                                     std::span<T> grad_in);
template <typename T>
void conv_transpose2d_backward_params(const ConvShape& s, std::span<const T> in, std::span<const T> grad_out,
                                      std::span<T> grad_weight, std::span<T> grad_bias);

template <typename T>
void leaky_relu_forward(std::span<const T> pre, std::span<T> out, T slope);
template <typename T>
void leaky_relu_backward(std::span<const T> pre, std::span<T> grad, T slope, ReluRule rule);

}  // namespace reference

}  // namespace cevae::kernels
