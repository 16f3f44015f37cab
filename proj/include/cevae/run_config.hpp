#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cevae/data.hpp"
#include "cevae/model.hpp"
#include "cevae/scoring.hpp"
#include "cevae/trainer.hpp"

namespace cevae {

// Everything a run needs, persisted as one flat JSON object.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  AttributionConfig attribution;
  bool normalize_before_resample = true;

  PreprocessOptions preprocess() const { return {model.resolution, normalize_before_resample}; }
  void validate() const;
};

nlohmann::json to_json(const RunConfig& cfg);
// Starts from defaults; unknown keys raise std::invalid_argument naming the key.
RunConfig run_config_from_json(const nlohmann::json& j);

// "key=value"; value is read as JSON when it parses, otherwise as a string.
// channels also accepts a comma list ("16,32,64").
void apply_override(RunConfig& cfg, std::string_view assignment);

std::vector<std::string> run_config_keys();

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const RunConfig& cfg, const std::filesystem::path& path);

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

std::string_view to_string(Fusion fusion);
Fusion parse_fusion(std::string_view text);

}  // namespace cevae
