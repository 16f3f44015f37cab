// Parallel (im2col + GEMM, OpenMP) vs serial reference kernels on the layer
// shapes of the default 64x64 model, plus a full encode/decode pass.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "cevae/kernels.hpp"
#include "cevae/model.hpp"
#include "cevae/parallel.hpp"

using namespace cevae;
using namespace cevae::kernels;

namespace {

struct Layer {
  int in_c, size, out_c, stride, pad;
};

// Encoder convs of the default model (with coordinate channels on the input).
constexpr Layer kLayers[] = {{3, 64, 16, 2, 1}, {16, 32, 64, 2, 1}, {64, 16, 256, 2, 1}, {256, 8, 1024, 2, 1}};

std::vector<float> noise(long long n, unsigned seed) {
  std::mt19937 g(seed);
  std::normal_distribution<float> d(0.0f, 1.0f);
  std::vector<float> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = d(g);
  return v;
}

template <bool Reference>
void BM_conv_forward(benchmark::State& state) {
  const auto& l = kLayers[state.range(0)];
  const int batch = static_cast<int>(state.range(1));
  const auto s = ConvShape::conv(batch, l.in_c, l.size, l.size, l.out_c, 4, l.stride, l.pad);
  const auto in = noise(s.input_size(), 1), w = noise(s.weight_size(), 2), b = noise(s.out_channels, 3);
  std::vector<float> out(static_cast<std::size_t>(s.output_size()));
  for (auto _ : state) {
    if constexpr (Reference)
      reference::conv2d_forward<float>(s, in, w, b, out);
    else
      conv2d_forward<float>(s, in, w, b, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}

template <bool Reference>
void BM_conv_backward(benchmark::State& state) {
  const auto& l = kLayers[state.range(0)];
  const int batch = static_cast<int>(state.range(1));
  const auto s = ConvShape::conv(batch, l.in_c, l.size, l.size, l.out_c, 4, l.stride, l.pad);
  const auto in = noise(s.input_size(), 1), w = noise(s.weight_size(), 2), g = noise(s.output_size(), 3);
  std::vector<float> gi(static_cast<std::size_t>(s.input_size())), gw(static_cast<std::size_t>(s.weight_size())),
      gb(static_cast<std::size_t>(s.out_channels));
  for (auto _ : state) {
    if constexpr (Reference) {
      reference::conv2d_backward_input<float>(s, g, w, gi);
      reference::conv2d_backward_params<float>(s, in, g, gw, gb);
    } else {
      conv2d_backward_input<float>(s, g, w, gi);
      conv2d_backward_params<float>(s, in, g, gw, gb);
    }
    benchmark::DoNotOptimize(gw.data());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}

// Decoder transposed convs mirror the encoder layers.
template <bool Reference>
void BM_deconv_forward(benchmark::State& state) {
  const auto& l = kLayers[state.range(0)];
  const int batch = static_cast<int>(state.range(1));
  const int in_size = l.size / 2;
  const auto s = ConvShape::transposed(batch, l.out_c, in_size, in_size, l.in_c == 3 ? 1 : l.in_c, 4, l.stride, l.pad);
  const auto in = noise(s.input_size(), 1), w = noise(s.weight_size(), 2), b = noise(s.out_channels, 3);
  std::vector<float> out(static_cast<std::size_t>(s.output_size()));
  for (auto _ : state) {
    if constexpr (Reference)
      reference::conv_transpose2d_forward<float>(s, in, w, b, out);
    else
      conv_transpose2d_forward<float>(s, in, w, b, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}

template <KernelBackend Backend>
void BM_model_roundtrip(benchmark::State& state) {
  ModelConfig cfg;
  cfg.channels = {16, 32, 64, 128};
  cfg.latent_dim = 128;
  Model<float> model(cfg, 1);
  model.set_backend(Backend);
  const int batch = static_cast<int>(state.range(0));
  Tensor<float> x(batch, 1, 64, 64);
  x.data = noise(static_cast<long long>(x.size()), 4);
  for (auto _ : state) {
    const auto post = model.encode(x);
    auto out = model.decode(latent_tensor<float>(post.mu, batch, cfg.latent_dim));
    benchmark::DoNotOptimize(out.data.data());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}

void layer_args(benchmark::internal::Benchmark* b) {
  for (int layer = 0; layer < 4; ++layer) b->Args({layer, 8});
}

}  // namespace

BENCHMARK(BM_conv_forward<true>)->Name("conv_forward/reference")->Apply(layer_args)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv_forward<false>)->Name("conv_forward/parallel")->Apply(layer_args)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv_backward<true>)->Name("conv_backward/reference")->Apply(layer_args)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv_backward<false>)->Name("conv_backward/parallel")->Apply(layer_args)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_deconv_forward<true>)->Name("deconv_forward/reference")->Apply(layer_args)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_deconv_forward<false>)->Name("deconv_forward/parallel")->Apply(layer_args)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_model_roundtrip<KernelBackend::reference>)->Name("encode_decode/reference")->Arg(8)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_model_roundtrip<KernelBackend::parallel>)->Name("encode_decode/parallel")->Arg(8)->Unit(benchmark::kMillisecond);

int main(int argc, char** argv) {
  configure_threads_from_env();
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
