#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cevae/tensor.hpp"

namespace cevae {

enum class Split { train, val, test };

std::string_view to_string(Split s);
Split parse_split(std::string_view text);

struct SliceSample {
  std::string patient_id;
  int slice_index = 0;
  Image image;
  std::optional<Mask> mask;  // absent = no annotation
  Split split = Split::train;

  bool has_anomaly() const;
};

struct ManifestEntry {
  std::string patient_id;
  std::string slice_path;  // relative to the manifest directory
  std::string mask_path;   // empty = no annotation
  Split split = Split::train;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  int resolution = 64;
  std::string normalization = "patient_zscore";
  std::filesystem::path root;  // directory the relative paths resolve against

  std::filesystem::path resolve(const std::string& relative) const { return root / relative; }
  std::vector<std::string> patients(Split split) const;
};

// ---- slice files --------------------------------------------------------
//
// 16-byte little-endian header: "CEVS", u8 version, u8 dtype, u16 reserved,
// u32 height, u32 width; followed by row-major pixels.

inline constexpr std::uint8_t kSliceVersion = 1;
inline constexpr std::uint8_t kDtypeFloat32 = 1;
inline constexpr std::uint8_t kDtypeUint8 = 2;

void write_slice(const std::filesystem::path& path, const Image& image);
void write_mask(const std::filesystem::path& path, const Mask& mask);
Image read_slice(const std::filesystem::path& path);
Mask read_mask(const std::filesystem::path& path);

// ---- manifest -----------------------------------------------------------

// CSV with header `patient_id,slice_path,mask_path,split`. Validates that every
// referenced file exists and that no patient appears in more than one split.
DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

// ---- preprocessing ------------------------------------------------------

// Joint z-score over all slices of one patient. Throws DegenerateInputError
// naming the patient when the pooled variance is zero.
std::vector<Image> zscore_normalize(std::span<const Image> slices, std::string_view patient_id = "");

// Bilinear resampling on pixel centres with edge clamping.
Image resample(const Image& image, int target);
// Masks are resampled bilinearly and re-binarized at 0.5.
Mask resample_mask(const Mask& mask, int target);

struct PreprocessOptions {
  int resolution = 64;
  bool normalize_before_resample = true;
};

// Reads one split, grouping by patient in manifest order. slice_index is the
// position of the slice within its patient.
std::vector<SliceSample> load_split(const DatasetManifest& manifest, Split split, const PreprocessOptions& options);

// ---- synthetic phantoms ---------------------------------------------------

struct PhantomConfig {
  int train_patients = 40;
  int val_patients = 4;
  int test_patients = 10;
  int slices_per_patient = 32;
  double anomaly_fraction = 0.5;
  double anomaly_intensity_shift = 3.0;  // in units of the patient's healthy intensity std
  std::pair<int, int> anomaly_radius_range{4, 10};
  int resolution = 64;
  std::uint64_t seed = 0;

  void validate() const;
};

struct PhantomSlice {
  Image image;
  std::optional<Mask> mask;
};

// All slices of one synthetic patient; pure function of (cfg, split, index).
std::vector<PhantomSlice> generate_patient(const PhantomConfig& cfg, Split split, int patient_index);

// Writes slices/, masks/ and manifest.csv under out_dir; returns the manifest.
DatasetManifest generate_phantoms(const PhantomConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace cevae
