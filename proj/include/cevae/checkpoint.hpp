#pragma once

#include <cstdint>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "cevae/model.hpp"
#include "cevae/objectives.hpp"

namespace cevae {

struct Checkpoint {
  ModelConfig model;
  ModelKind kind = ModelKind::ceVAE;
  double cevae_factor = 0.0;
  int epoch = 0;
  std::uint64_t seed = 0;
  ParamSet<float> params;
};

// Layout: "CEVC", u32 version, u64 header length, JSON header (config,
// metadata, tensor names and shapes), then float32 tensors in header order.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Model<float> model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace cevae
