#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cevae {

// Dense row-major 2D array. Used for slices, masks and pixel maps.
template <typename T>
struct Grid {
  int rows = 0;
  int cols = 0;
  std::vector<T> values;

  Grid() = default;
  Grid(int r, int c, T fill = T{}) : rows(r), cols(c), values(static_cast<std::size_t>(r) * c, fill) {
    if (r < 0 || c < 0) throw std::invalid_argument("Grid: negative shape");
  }

  T& operator()(int y, int x) { return values[static_cast<std::size_t>(y) * cols + x]; }
  const T& operator()(int y, int x) const { return values[static_cast<std::size_t>(y) * cols + x]; }

  std::size_t size() const { return values.size(); }
  bool same_shape(const auto& other) const { return rows == other.rows && cols == other.cols; }

  bool operator==(const Grid&) const = default;
};

using Image = Grid<float>;
using Mask = Grid<std::uint8_t>;

// NCHW batch tensor.
template <typename T>
struct Tensor {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_, T fill = T{})
      : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {
    if (n_ < 0 || c_ < 0 || h_ < 0 || w_ < 0) throw std::invalid_argument("Tensor: negative shape");
  }

  std::size_t size() const { return data.size(); }
  std::size_t sample_size() const { return static_cast<std::size_t>(c) * h * w; }
  std::size_t plane_size() const { return static_cast<std::size_t>(h) * w; }

  T& at(int b, int ch, int y, int x) {
    return data[((static_cast<std::size_t>(b) * c + ch) * h + y) * w + x];
  }
  const T& at(int b, int ch, int y, int x) const {
    return data[((static_cast<std::size_t>(b) * c + ch) * h + y) * w + x];
  }

  std::span<T> sample(int b) { return {data.data() + b * sample_size(), sample_size()}; }
  std::span<const T> sample(int b) const { return {data.data() + b * sample_size(), sample_size()}; }

  bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
  std::string shape_string() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w);
  }
};

// Stacks single-channel images into a B x 1 x H x W batch.
template <typename T>
Tensor<T> stack_images(std::span<const Image> images) {
  if (images.empty()) return {};
  const int h = images.front().rows;
  const int w = images.front().cols;
  Tensor<T> out(static_cast<int>(images.size()), 1, h, w);
  for (std::size_t b = 0; b < images.size(); ++b) {
    if (images[b].rows != h || images[b].cols != w) throw std::invalid_argument("stack_images: ragged batch");
    auto dst = out.sample(static_cast<int>(b));
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(images[b].values[i]);
  }
  return out;
}

template <typename T>
Image image_of(const Tensor<T>& t, int b, int ch = 0) {
  Image img(t.h, t.w);
  const std::size_t off = (static_cast<std::size_t>(b) * t.c + ch) * t.plane_size();
  for (std::size_t i = 0; i < img.size(); ++i) img.values[i] = static_cast<float>(t.data[off + i]);
  return img;
}

}  // namespace cevae
