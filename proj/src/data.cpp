#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "cevae/data.hpp"
#include "cevae/errors.hpp"

namespace cevae {

namespace fs = std::filesystem;

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
  }
  return "?";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "val") return Split::val;
  if (text == "test") return Split::test;
  throw FormatError("unknown split '" + std::string(text) + "'");
}

bool SliceSample::has_anomaly() const {
  return mask && std::any_of(mask->values.begin(), mask->values.end(), [](auto v) { return v != 0; });
}

std::vector<std::string> DatasetManifest::patients(Split split) const {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& e : entries)
    if (e.split == split && seen.insert(e.patient_id).second) out.push_back(e.patient_id);
  return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

}  // namespace

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path.string());
  DatasetManifest manifest;
  manifest.root = path.parent_path();
  std::string line;
  if (!std::getline(in, line) || strip_cr(line) != "patient_id,slice_path,mask_path,split")
    throw FormatError("manifest header must be 'patient_id,slice_path,mask_path,split': " + path.string());

  std::map<std::string, Split> patient_split;
  std::vector<std::string> missing;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 4)
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected 4 fields");
    ManifestEntry e{fields[0], fields[1], fields[2], parse_split(fields[3])};
    if (e.patient_id.empty() || e.slice_path.empty())
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": empty patient_id or slice_path");
    auto [it, inserted] = patient_split.emplace(e.patient_id, e.split);
    if (!inserted && it->second != e.split)
      throw FormatError("patient '" + e.patient_id + "' appears in more than one split");
    if (!fs::exists(manifest.resolve(e.slice_path))) missing.push_back(manifest.resolve(e.slice_path).string());
    if (!e.mask_path.empty() && !fs::exists(manifest.resolve(e.mask_path)))
      missing.push_back(manifest.resolve(e.mask_path).string());
    manifest.entries.push_back(std::move(e));
  }
  if (!missing.empty()) {
    std::string msg = "manifest references missing files:";
    for (const auto& m : missing) msg += "\n  " + m;
    throw IoError(msg);
  }
  return manifest;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest: " + path.string());
  out << "patient_id,slice_path,mask_path,split\n";
  for (const auto& e : manifest.entries) {
    for (const auto* f : {&e.patient_id, &e.slice_path, &e.mask_path})
      if (f->find(',') != std::string::npos) throw std::invalid_argument("manifest fields may not contain ','");
    out << e.patient_id << ',' << e.slice_path << ',' << e.mask_path << ',' << to_string(e.split) << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<Image> zscore_normalize(std::span<const Image> slices, std::string_view patient_id) {
  if (slices.empty()) throw std::invalid_argument("zscore_normalize: no slices for patient '" + std::string(patient_id) + "'");
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& s : slices) {
    for (float v : s.values) sum += v;
    count += s.size();
  }
  if (count == 0) throw std::invalid_argument("zscore_normalize: empty slices");
  const double mean = sum / static_cast<double>(count);
  double sq = 0.0;
  for (const auto& s : slices)
    for (float v : s.values) sq += (v - mean) * (v - mean);
  const double std_dev = std::sqrt(sq / static_cast<double>(count));
  if (!(std_dev > 0.0) || !std::isfinite(std_dev))
    throw DegenerateInputError("zero intensity variance for patient '" + std::string(patient_id) + "'");
  std::vector<Image> out;
  out.reserve(slices.size());
  for (const auto& s : slices) {
    Image n(s.rows, s.cols);
    for (std::size_t i = 0; i < s.size(); ++i) n.values[i] = static_cast<float>((s.values[i] - mean) / std_dev);
    out.push_back(std::move(n));
  }
  return out;
}

namespace {

Grid<double> resample_bilinear(const Grid<double>& src, int target) {
  Grid<double> out(target, target);
  const double sy = static_cast<double>(src.rows) / target;
  const double sx = static_cast<double>(src.cols) / target;
  for (int y = 0; y < target; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.rows - 1));
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, src.rows - 1);
    const double wy = fy - y0;
    for (int x = 0; x < target; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.cols - 1));
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, src.cols - 1);
      const double wx = fx - x0;
      const double top = src(y0, x0) + wx * (src(y0, x1) - src(y0, x0));
      const double bottom = src(y1, x0) + wx * (src(y1, x1) - src(y1, x0));
      out(y, x) = top + wy * (bottom - top);
    }
  }
  return out;
}

}  // namespace

Image resample(const Image& image, int target) {
  if (target <= 0) throw std::invalid_argument("resample: target must be positive");
  if (image.rows == 0 || image.cols == 0) throw std::invalid_argument("resample: empty image");
  if (image.rows == target && image.cols == target) return image;
  Grid<double> src(image.rows, image.cols);
  std::copy(image.values.begin(), image.values.end(), src.values.begin());
  const auto r = resample_bilinear(src, target);
  Image out(target, target);
  for (std::size_t i = 0; i < out.size(); ++i) out.values[i] = static_cast<float>(r.values[i]);
  return out;
}

Mask resample_mask(const Mask& mask, int target) {
  if (target <= 0) throw std::invalid_argument("resample_mask: target must be positive");
  if (mask.rows == target && mask.cols == target) return mask;
  Grid<double> src(mask.rows, mask.cols);
  std::copy(mask.values.begin(), mask.values.end(), src.values.begin());
  const auto r = resample_bilinear(src, target);
  Mask out(target, target);
  for (std::size_t i = 0; i < out.size(); ++i) out.values[i] = r.values[i] >= 0.5 ? 1 : 0;
  return out;
}

std::vector<SliceSample> load_split(const DatasetManifest& manifest, Split split, const PreprocessOptions& options) {
  std::vector<SliceSample> out;
  for (const auto& pid : manifest.patients(split)) {
    std::vector<const ManifestEntry*> rows;
    for (const auto& e : manifest.entries)
      if (e.patient_id == pid) rows.push_back(&e);
    std::vector<Image> raw;
    raw.reserve(rows.size());
    for (const auto* e : rows) raw.push_back(read_slice(manifest.resolve(e->slice_path)));
    std::vector<std::pair<int, int>> shapes;
    for (const auto& img : raw) shapes.emplace_back(img.rows, img.cols);

    std::vector<Image> images;
    if (options.normalize_before_resample) {
      images = zscore_normalize(raw, pid);
      for (auto& img : images) img = resample(img, options.resolution);
    } else {
      for (auto& img : raw) img = resample(img, options.resolution);
      images = zscore_normalize(raw, pid);
    }

    for (std::size_t i = 0; i < rows.size(); ++i) {
      SliceSample s;
      s.patient_id = pid;
      s.slice_index = static_cast<int>(i);
      s.split = split;
      s.image = std::move(images[i]);
      if (!rows[i]->mask_path.empty()) {
        const auto mpath = manifest.resolve(rows[i]->mask_path);
        Mask m = read_mask(mpath);
        if (m.rows != shapes[i].first || m.cols != shapes[i].second)
          throw FormatError("mask shape does not match slice: " + mpath.string());
        s.mask = resample_mask(m, options.resolution);
      }
      if (split == Split::train && s.has_anomaly())
        throw FormatError("training slice carries a nonzero mask: " + manifest.resolve(rows[i]->slice_path).string());
      out.push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace cevae
