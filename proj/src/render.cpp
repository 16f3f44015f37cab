#include "cevae/render.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include "cevae/errors.hpp"

namespace cevae {

namespace {

void write_png(const std::filesystem::path& path, int width, int height, int color_type,
               const std::vector<unsigned char>& pixels) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw IoError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const int channels = color_type == PNG_COLOR_TYPE_RGB ? 3 : 1;
  for (int y = 0; y < height; ++y)
    png_write_row(png, pixels.data() + static_cast<std::size_t>(y) * width * channels);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::vector<double> unit_range(const Grid<double>& map) {
  std::vector<double> out(map.size(), 0.0);
  if (map.size() == 0) return out;
  const auto [lo, hi] = std::minmax_element(map.values.begin(), map.values.end());
  const double span = *hi - *lo;
  if (span > 0)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (map.values[i] - *lo) / span;
  return out;
}

unsigned char byte(double v) { return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

void write_png_gray(const Grid<double>& map, const std::filesystem::path& path) {
  const auto u = unit_range(map);
  std::vector<unsigned char> px(u.size());
  std::transform(u.begin(), u.end(), px.begin(), byte);
  write_png(path, map.cols, map.rows, PNG_COLOR_TYPE_GRAY, px);
}

void write_png_heatmap(const Grid<double>& map, const std::filesystem::path& path) {
  const auto u = unit_range(map);
  std::vector<unsigned char> px;
  px.reserve(u.size() * 3);
  for (double v : u) {
    px.push_back(byte(3.0 * v));
    px.push_back(byte(3.0 * v - 1.0));
    px.push_back(byte(3.0 * v - 2.0));
  }
  write_png(path, map.cols, map.rows, PNG_COLOR_TYPE_RGB, px);
}

std::string svg_band_plot(const std::vector<PlotSeries>& series, const std::string& title, const std::string& x_label) {
  constexpr double W = 640, H = 420, L = 60, R = 150, T = 40, B = 50;
  double x_lo = 0, x_hi = 1;
  bool first = true;
  for (const auto& s : series)
    for (double x : s.x) {
      x_lo = first ? x : std::min(x_lo, x);
      x_hi = first ? x : std::max(x_hi, x);
      first = false;
    }
  if (x_hi <= x_lo) x_hi = x_lo + 1;
  auto px = [&](double x) { return L + (x - x_lo) / (x_hi - x_lo) * (W - L - R); };
  auto py = [&](double y) { return T + (1.0 - std::clamp(y, 0.0, 1.0)) * (H - T - B); };

  std::ostringstream svg;
  svg.precision(4);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">" << title
      << "</text>\n";
  for (int i = 0; i <= 5; ++i) {
    const double y = i / 5.0;
    svg << "<line x1=\"" << L << "\" x2=\"" << W - R << "\" y1=\"" << py(y) << "\" y2=\"" << py(y)
        << "\" stroke=\"#ddd\"/>\n<text x=\"" << L - 8 << "\" y=\"" << py(y) + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << y << "</text>\n";
  }
  if (!series.empty())
    for (double x : series.front().x)
      svg << "<text x=\"" << px(x) << "\" y=\"" << H - B + 18
          << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << x << "</text>\n";
  svg << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << x_label << "</text>\n"
      << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << W - L - R << "\" height=\"" << H - T - B
      << "\" fill=\"none\" stroke=\"black\"/>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    svg << "<polygon fill=\"" << s.color << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) svg << px(s.x[i]) << ',' << py(s.max[i]) << ' ';
    for (std::size_t i = s.x.size(); i-- > 0;) svg << px(s.x[i]) << ',' << py(s.min[i]) << ' ';
    svg << "\"/>\n<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) svg << px(s.x[i]) << ',' << py(s.median[i]) << ' ';
    svg << "\"/>\n";
    for (std::size_t i = 0; i < s.x.size(); ++i)
      svg << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.median[i]) << "\" r=\"3\" fill=\"" << s.color << "\"/>\n";
    const double ly = T + 20 + 20.0 * static_cast<double>(k);
    svg << "<line x1=\"" << W - R + 12 << "\" x2=\"" << W - R + 32 << "\" y1=\"" << ly << "\" y2=\"" << ly
        << "\" stroke=\"" << s.color << "\" stroke-width=\"2\"/>\n<text x=\"" << W - R + 38 << "\" y=\"" << ly + 4
        << "\" font-family=\"sans-serif\" font-size=\"12\">" << s.label << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

void write_text(const std::string& text, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

}  // namespace cevae
