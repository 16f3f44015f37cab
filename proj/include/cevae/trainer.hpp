#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cevae/corruption.hpp"
#include "cevae/data.hpp"
#include "cevae/model.hpp"
#include "cevae/objectives.hpp"

namespace cevae {

struct TrainConfig {
  double lr = 2e-4;
  int batch_size = 64;
  int epochs = 60;
  double cevae_factor = 0.5;
  ModelKind model_kind = ModelKind::ceVAE;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  bool augment = true;
  AugmentRanges augment_ranges;
  MaskOptions masks;
  // Input noise std for the DAE baseline, in z-score units.
  double dae_sigma = 0.25;
  // Masks and eps on the validation split come from this fixed stream.
  std::uint64_t validation_seed = 0x5eed;

  void validate() const;
};

struct AdamOptions {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::int64_t step = 0;
};

// Standard bias-corrected Adam. Throws NumericError naming the parameter on a
// non-finite gradient; params are untouched in that case.
template <typename T>
void adam_step(ParamSet<T>& params, const ParamSet<T>& grads, AdamState<T>& state, const AdamOptions& options);

struct EpochRecord {
  int epoch = 0;  // 1-based
  LossBreakdown train;
  LossBreakdown val;
};

struct RunRecord {
  std::vector<EpochRecord> epochs;
  int selection_epoch = 0;
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
  ModelConfig model;
  TrainConfig train;
};

struct TrainOptions {
  // Empty: train in memory without writing a run directory.
  std::filesystem::path out_dir;
  // Called after every epoch.
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  RunRecord record;
  Model<float> best;
};

// Training on preprocessed slices. Train slices must come from the train
// split and carry no anomaly; validation slices from the val split.
TrainResult train(std::span<const SliceSample> train_set, std::span<const SliceSample> val_set, const ModelConfig& model_cfg,
                  const TrainConfig& cfg, const TrainOptions& options = {});

TrainResult train(const DatasetManifest& manifest, const ModelConfig& model_cfg, const TrainConfig& cfg,
                  const TrainOptions& options = {});

// Mean loss over a split without updates; masks/eps use cfg.validation_seed.
LossBreakdown evaluate_loss(const Model<float>& model, std::span<const SliceSample> samples, const TrainConfig& cfg);

void write_losses_csv(const RunRecord& record, const std::filesystem::path& path);
std::vector<EpochRecord> read_losses_csv(const std::filesystem::path& path);

}  // namespace cevae
