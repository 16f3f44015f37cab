#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cevae/tensor.hpp"

namespace cevae {

// 8-bit PNG. Grayscale maps min..max to 0..255; heatmaps use a black-red-yellow-white ramp.
void write_png_gray(const Grid<double>& map, const std::filesystem::path& path);
void write_png_heatmap(const Grid<double>& map, const std::filesystem::path& path);

struct PlotSeries {
  std::string label;
  std::string color;  // any SVG color
  std::vector<double> x;
  std::vector<double> median;
  std::vector<double> min;
  std::vector<double> max;
};

// Line plot with shaded min..max bands, y axis fixed to [0, 1].
std::string svg_band_plot(const std::vector<PlotSeries>& series, const std::string& title, const std::string& x_label);
void write_text(const std::string& text, const std::filesystem::path& path);

}  // namespace cevae
