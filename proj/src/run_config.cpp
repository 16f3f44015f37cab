#include "cevae/run_config.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "cevae/errors.hpp"

namespace cevae {

std::string_view to_string(Fusion fusion) {
  return fusion == Fusion::product ? "product" : "reconstruction_only";
}

Fusion parse_fusion(std::string_view text) {
  if (text == "product") return Fusion::product;
  if (text == "reconstruction_only") return Fusion::reconstruction_only;
  throw std::invalid_argument("unknown fusion '" + std::string(text) + "'");
}

namespace {

struct Field {
  const char* name;
  std::function<nlohmann::json(const RunConfig&)> get;
  std::function<void(RunConfig&, const nlohmann::json&)> set;
};

#define CEVAE_FIELD(key, member)                                                    \
  Field {                                                                           \
    key, [](const RunConfig& c) { return nlohmann::json(c.member); },               \
        [](RunConfig& c, const nlohmann::json& v) { c.member = v.get<decltype(c.member)>(); } \
  }

std::vector<int> parse_int_list(const nlohmann::json& v) {
  if (v.is_array()) return v.get<std::vector<int>>();
  if (v.is_number_integer()) return {v.get<int>()};
  std::vector<int> out;
  std::stringstream ss(v.get<std::string>());
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
  return out;
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      CEVAE_FIELD("resolution", model.resolution),
      Field{"channels", [](const RunConfig& c) { return nlohmann::json(c.model.channels); },
            [](RunConfig& c, const nlohmann::json& v) { c.model.channels = parse_int_list(v); }},
      CEVAE_FIELD("latent_dim", model.latent_dim),
      CEVAE_FIELD("kernel", model.kernel),
      CEVAE_FIELD("stride", model.stride),
      CEVAE_FIELD("leaky_slope", model.leaky_slope),
      CEVAE_FIELD("coordconv", model.coordconv),
      CEVAE_FIELD("coordconv_all_layers", model.coordconv_all_layers),
      CEVAE_FIELD("lr", train.lr),
      CEVAE_FIELD("batch_size", train.batch_size),
      CEVAE_FIELD("epochs", train.epochs),
      CEVAE_FIELD("cevae_factor", train.cevae_factor),
      Field{"model_kind", [](const RunConfig& c) { return nlohmann::json(std::string(to_string(c.train.model_kind))); },
            [](RunConfig& c, const nlohmann::json& v) { c.train.model_kind = parse_model_kind(v.get<std::string>()); }},
      CEVAE_FIELD("seed", train.seed),
      CEVAE_FIELD("adam_beta1", train.adam_beta1),
      CEVAE_FIELD("adam_beta2", train.adam_beta2),
      CEVAE_FIELD("adam_eps", train.adam_eps),
      CEVAE_FIELD("augment", train.augment),
      CEVAE_FIELD("augment_mirror_probability", train.augment_ranges.mirror_probability),
      CEVAE_FIELD("augment_max_rotation_degrees", train.augment_ranges.max_rotation_degrees),
      CEVAE_FIELD("augment_brightness_min", train.augment_ranges.brightness_min),
      CEVAE_FIELD("augment_brightness_max", train.augment_ranges.brightness_max),
      CEVAE_FIELD("mask_min_squares", train.masks.min_squares),
      CEVAE_FIELD("mask_max_squares", train.masks.max_squares),
      CEVAE_FIELD("mask_min_side_fraction", train.masks.min_side_fraction),
      CEVAE_FIELD("mask_max_side_fraction", train.masks.max_side_fraction),
      CEVAE_FIELD("mask_per_pixel_fill", train.masks.per_pixel_fill),
      CEVAE_FIELD("dae_sigma", train.dae_sigma),
      CEVAE_FIELD("validation_seed", train.validation_seed),
      Field{"attribution_mode",
            [](const RunConfig& c) { return nlohmann::json(std::string(to_string(c.attribution.mode))); },
            [](RunConfig& c, const nlohmann::json& v) {
              c.attribution.mode = parse_attribution_mode(v.get<std::string>());
            }},
      CEVAE_FIELD("smoothgrad_n", attribution.smoothgrad_n),
      CEVAE_FIELD("smoothgrad_sigma_fraction", attribution.smoothgrad_sigma_fraction),
      CEVAE_FIELD("smoothing_sigma_px", attribution.smoothing_sigma_px),
      CEVAE_FIELD("backprop_full_elbo", attribution.backprop_full_elbo),
      Field{"fusion", [](const RunConfig& c) { return nlohmann::json(std::string(to_string(c.attribution.fusion))); },
            [](RunConfig& c, const nlohmann::json& v) { c.attribution.fusion = parse_fusion(v.get<std::string>()); }},
      CEVAE_FIELD("normalize_before_resample", normalize_before_resample),
  };
  return table;
}

#undef CEVAE_FIELD

const Field& find_field(std::string_view key) {
  for (const auto& f : fields())
    if (key == f.name) return f;
  throw std::invalid_argument("unknown config key '" + std::string(key) + "'");
}

void set_field(RunConfig& cfg, std::string_view key, const nlohmann::json& value) {
  const auto& f = find_field(key);
  try {
    f.set(cfg, value);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("config key '" + std::string(key) + "': bad value " + value.dump() + " (" + e.what() + ")");
  } catch (const std::logic_error& e) {
    throw std::invalid_argument("config key '" + std::string(key) + "': bad value " + value.dump() + " (" + e.what() + ")");
  }
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  train.validate();
  attribution.validate();
}

nlohmann::json to_json(const RunConfig& cfg) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& f : fields()) j[f.name] = f.get(cfg);
  return j;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("run config must be a JSON object");
  RunConfig cfg;
  for (const auto& [key, value] : j.items()) set_field(cfg, key, value);
  return cfg;
}

void apply_override(RunConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0)
    throw std::invalid_argument("override '" + std::string(assignment) + "' is not key=value");
  const auto key = assignment.substr(0, eq);
  const std::string raw(assignment.substr(eq + 1));
  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  set_field(cfg, key, value);
}

std::vector<std::string> run_config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.emplace_back(f.name);
  return keys;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  const auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw FormatError(path.string() + ": not valid JSON");
  return run_config_from_json(j);
}

void save_run_config(const RunConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json(cfg).dump(2) << '\n';
}

namespace {

constexpr std::string_view kModelKeys[] = {"resolution", "channels",    "latent_dim", "kernel",
                                           "stride",     "leaky_slope", "coordconv",  "coordconv_all_layers"};

}  // namespace

nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  RunConfig rc;
  rc.model = cfg;
  const auto all = to_json(rc);
  nlohmann::json j;
  for (auto key : kModelKeys) j[std::string(key)] = all.at(std::string(key));
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  RunConfig rc;
  for (const auto& [key, value] : j.items()) {
    if (std::find(std::begin(kModelKeys), std::end(kModelKeys), key) == std::end(kModelKeys))
      throw std::invalid_argument("unknown model config key '" + key + "'");
    set_field(rc, key, value);
  }
  rc.model.validate();
  return rc.model;
}

}  // namespace cevae
