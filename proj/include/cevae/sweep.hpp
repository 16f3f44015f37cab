#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cevae/evaluation.hpp"
#include "cevae/run_config.hpp"

namespace cevae {

struct SweepRow {
  double factor = 0.0;
  std::uint64_t seed = 0;
  Metrics metrics;
  int selection_epoch = 0;
};

struct FactorSummary {
  double factor = 0.0;
  EvalReport report;
};

struct SweepResult {
  std::vector<SweepRow> rows;  // factor-major, |factors| x |seeds|
  std::vector<FactorSummary> per_factor;
};

struct SweepData {
  std::vector<SliceSample> train;
  std::vector<SliceSample> val;
  std::vector<SliceSample> test;
};

SweepData load_sweep_data(const DatasetManifest& manifest, const PreprocessOptions& options);

struct SweepOptions {
  std::vector<double> factors{0.0, 0.25, 0.5, 0.75, 1.0};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  EvalOptions eval;
  // Non-empty: each run writes <out_dir>/factor_<f>_seed_<s>/.
  std::filesystem::path out_dir;
  std::function<void(const SweepRow&)> on_run;
};

// Trains a ceVAE per (factor, seed) with base's settings, scores the test
// split and evaluates. Fusion follows default_fusion for each factor.
SweepResult factor_sweep(const SweepData& data, const RunConfig& base, const SweepOptions& options);

// One evaluated run on the test split for an already trained model.
Metrics score_and_evaluate(const Model<float>& model, std::span<const SliceSample> test, const AttributionConfig& attribution,
                           std::uint64_t seed, const EvalOptions& eval);

std::string sweep_table(const SweepResult& result);
std::string sweep_csv(const SweepResult& result);
std::string sweep_svg(const SweepResult& result);

}  // namespace cevae
