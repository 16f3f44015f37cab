#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cevae/data.hpp"
#include "cevae/rng.hpp"

namespace cevae {

// 1 iff the slice has a mask with at least one nonzero pixel.
std::vector<std::uint8_t> slice_labels(std::span<const SliceSample> samples);

// Mann-Whitney statistic with midranks for ties. Throws UndefinedMetricError
// when either class is absent.
double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

// 2|P & G| / (|P| + |G|); 1 when both are empty.
double dice(const Mask& pred, const Mask& gt);

struct DiceCvOptions {
  int folds = 5;
  int quantiles = 201;
};

// Patients are split into folds; each fold picks the threshold (prediction is
// score > t) maximizing its own mean patient-wise Dice, which is then scored
// on the remaining folds. Returns the mean over folds.
double dice_cv(std::span<const Grid<double>> score_maps, std::span<const Mask> gt_masks,
               std::span<const std::string> patient_ids, Rng& rng, const DiceCvOptions& options = {});

struct Metrics {
  double slice_roc_auc = 0.0;
  double pixel_roc_auc = 0.0;
  double dice_mean = 0.0;

  bool operator==(const Metrics&) const = default;
};

struct MetricSummary {
  double median = 0.0;
  double min = 0.0;
  double max = 0.0;

  bool operator==(const MetricSummary&) const = default;
};

struct EvalReport {
  Metrics metrics;  // median of per_run
  std::vector<Metrics> per_run;
  MetricSummary slice_roc_auc;
  MetricSummary pixel_roc_auc;
  MetricSummary dice_mean;

  bool operator==(const EvalReport&) const = default;
};

struct EvalOptions {
  DiceCvOptions dice;
  // Average of per-slice pixel ROC-AUCs (slices with both classes) instead of pooling all pixels.
  bool pixel_auc_per_slice = false;
  std::uint64_t seed = 0;
};

// samples carry the ground-truth masks; scores and maps are aligned with them.
Metrics evaluate_run(std::span<const SliceSample> samples, std::span<const double> sample_scores,
                     std::span<const Grid<double>> score_maps, const EvalOptions& options = {});

EvalReport single_run_report(const Metrics& metrics);

// Median uses the lower-median convention for even counts.
EvalReport aggregate_runs(std::span<const EvalReport> reports);

nlohmann::json to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);
void save_report(const EvalReport& report, const std::filesystem::path& path);
EvalReport load_report(const std::filesystem::path& path);
std::string format_table(const EvalReport& report);

}  // namespace cevae
