#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "cevae/errors.hpp"
#include "cevae/run_config.hpp"

using namespace cevae;
namespace fs = std::filesystem;

TEST_CASE("defaults") {
  const RunConfig c;
  CHECK(c.train.lr == 2e-4);
  CHECK(c.train.batch_size == 64);
  CHECK(c.train.epochs == 60);
  CHECK(c.model.latent_dim == 1024);
  CHECK(c.model.channels == std::vector<int>{16, 64, 256, 1024});
  CHECK(c.attribution.smoothgrad_n == 16);
  CHECK(c.attribution.smoothing_sigma_px == 2.0);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("overrides") {
  RunConfig c;
  apply_override(c, "lr=0.001");
  apply_override(c, "channels=8,16");
  apply_override(c, "resolution=16");
  apply_override(c, "model_kind=CE");
  apply_override(c, "attribution_mode=vanilla");
  apply_override(c, "augment=false");
  apply_override(c, "fusion=reconstruction_only");
  CHECK(c.train.lr == 0.001);
  CHECK(c.model.channels == std::vector<int>{8, 16});
  CHECK(c.train.model_kind == ModelKind::CE);
  CHECK(c.attribution.mode == AttributionMode::vanilla);
  CHECK_FALSE(c.train.augment);
  CHECK(c.attribution.fusion == Fusion::reconstruction_only);
  CHECK(c.preprocess().resolution == 16);
  apply_override(c, "channels=[4]");
  CHECK(c.model.channels == std::vector<int>{4});

  CHECK_THROWS_WITH_AS(apply_override(c, "learning_rate=1"), doctest::Contains("learning_rate"), std::invalid_argument);
  CHECK_THROWS_AS(apply_override(c, "lr"), std::invalid_argument);
  CHECK_THROWS_AS(apply_override(c, "=3"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(apply_override(c, "epochs=many"), doctest::Contains("epochs"), std::invalid_argument);
  CHECK_THROWS_AS(apply_override(c, "model_kind=GAN"), std::invalid_argument);
}

TEST_CASE("json round trip and unknown keys") {
  RunConfig c;
  apply_override(c, "seed=42");
  apply_override(c, "cevae_factor=0.25");
  apply_override(c, "dae_sigma=0.1");
  const auto j = to_json(c);
  CHECK(j.size() == run_config_keys().size());
  const auto back = run_config_from_json(j);
  CHECK(to_json(back) == j);
  CHECK(back.train.seed == 42);

  auto extra = j;
  extra["bogus"] = 1;
  CHECK_THROWS_WITH_AS(run_config_from_json(extra), doctest::Contains("bogus"), std::invalid_argument);

  // Partial files start from defaults.
  const auto partial = run_config_from_json(nlohmann::json{{"epochs", 3}});
  CHECK(partial.train.epochs == 3);
  CHECK(partial.train.lr == 2e-4);

  const auto dir = fs::temp_directory_path() / "cevae_test_run_config";
  fs::create_directories(dir);
  save_run_config(c, dir / "config.json");
  CHECK(to_json(load_run_config(dir / "config.json")) == j);
  std::ofstream(dir / "broken.json") << "{ not json";
  CHECK_THROWS_AS(load_run_config(dir / "broken.json"), FormatError);
  CHECK_THROWS_AS(load_run_config(dir / "missing.json"), IoError);
}

TEST_CASE("model config json") {
  ModelConfig m;
  m.resolution = 16;
  m.channels = {4, 8};
  m.latent_dim = 32;
  CHECK(model_config_from_json(model_config_to_json(m)) == m);
  CHECK_THROWS_AS(model_config_from_json(nlohmann::json{{"lr", 1.0}}), std::invalid_argument);
  CHECK_THROWS_AS(model_config_from_json(nlohmann::json{{"resolution", 48}}), std::invalid_argument);
}
