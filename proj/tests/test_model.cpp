#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "cevae/checkpoint.hpp"
#include "cevae/errors.hpp"
#include "cevae/model.hpp"
#include "oracles.hpp"

using namespace cevae;
namespace fs = std::filesystem;

TEST_CASE("config invariant and layer plan") {
  ModelConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  const auto enc = encoder_layers(cfg);
  REQUIRE(enc.size() == 5);
  const int sizes[] = {64, 32, 16, 8, 4};
  for (int i = 0; i < 5; ++i) CHECK(enc[static_cast<std::size_t>(i)].in_size == sizes[i]);
  CHECK(enc.back().out_size == 1);
  CHECK(enc.back().out_channels == 2 * 1024);
  CHECK(enc.front().coords);
  CHECK_FALSE(enc[1].coords);
  const auto dec = decoder_layers(cfg);
  REQUIRE(dec.size() == 5);
  const int dec_out[] = {1024, 256, 64, 16, 1};
  for (int i = 0; i < 5; ++i) CHECK(dec[static_cast<std::size_t>(i)].out_channels == dec_out[i]);
  CHECK(dec.back().out_size == 64);
  CHECK_FALSE(dec.back().activation);

  ModelConfig bad = cfg;
  bad.resolution = 48;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.latent_dim = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.kernel = 1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("coordinate channels") {
  Tensor<double> x(1, 1, 2, 2, 5.0);
  const auto c = add_coord_channels(x);
  REQUIRE(c.c == 3);
  CHECK(c.at(0, 1, 0, 0) == -1.0);
  CHECK(c.at(0, 1, 0, 1) == 1.0);
  CHECK(c.at(0, 2, 0, 0) == -1.0);
  CHECK(c.at(0, 2, 1, 0) == 1.0);
  Tensor<double> y(2, 1, 5, 7, -3.0);
  y.data[3] = 100.0;
  const auto d = add_coord_channels(y);
  CHECK(d.at(1, 1, 0, 0) == -1.0);
  CHECK(d.at(1, 2, 0, 0) == -1.0);
  CHECK(d.at(1, 1, 4, 6) == 1.0);
  CHECK(d.at(1, 2, 4, 6) == 1.0);
  CHECK(d.at(0, 1, 2, 3) == doctest::Approx(0.0));
  for (int b = 0; b < 2; ++b)
    for (int yy = 0; yy < 5; ++yy)
      for (int xx = 0; xx < 7; ++xx) {
        CHECK(d.at(b, 1, yy, xx) == d.at(0, 1, yy, xx));
        CHECK(d.at(b, 0, yy, xx) == y.at(b, 0, yy, xx));
      }
}

TEST_CASE("default model: latent size and sane init") {
  const Model<float> model(ModelConfig{}, 1);
  Rng rng(2);
  const auto x = oracle::random_batch<float>(rng, 2, 64);
  const auto post = model.encode(x);
  CHECK(post.dim == 1024);
  CHECK(post.mu.size() == 2 * 1024);
  CHECK(post.log_sigma.size() == 2 * 1024);
  for (float v : post.mu) {
    CHECK(std::isfinite(v));
    CHECK(std::abs(v) < 10.0f);
  }
  const auto x_hat = model.decode(latent_tensor<float>(post.mu, post.batch, post.dim));
  CHECK(x_hat.same_shape(x));
  const auto zero = model.decode(Tensor<float>(1, 1024, 1, 1));
  for (float v : zero.data) CHECK(std::isfinite(v));
}

TEST_CASE("encode/decode determinism and shape errors") {
  const Model<double> model(oracle::tiny_config(), 3);
  Rng rng(4);
  const auto x = oracle::random_batch<double>(rng, 3, 16);
  const auto a = model.encode(x), b = model.encode(x);
  CHECK(a.mu == b.mu);
  CHECK(a.log_sigma == b.log_sigma);
  CHECK(model.decode(latent_tensor<double>(a.mu, 3, 32)).data == model.decode(latent_tensor<double>(a.mu, 3, 32)).data);
  CHECK_THROWS_AS(model.encode(Tensor<double>(1, 1, 32, 32)), std::invalid_argument);
  CHECK_THROWS_AS(model.encode(Tensor<double>(1, 2, 16, 16)), std::invalid_argument);
  CHECK_THROWS_AS(model.decode(Tensor<double>(1, 31, 1, 1)), std::invalid_argument);
}

TEST_CASE("batch samples are independent") {
  const Model<double> model(oracle::tiny_config(), 5);
  Rng rng(6);
  const auto x = oracle::random_batch<double>(rng, 4, 16);
  const auto post = model.encode(x);
  for (int b = 0; b < 4; ++b) {
    Tensor<double> one(1, 1, 16, 16);
    std::copy(x.sample(b).begin(), x.sample(b).end(), one.data.begin());
    const auto p = model.encode(one);
    for (int d = 0; d < 32; ++d) CHECK(p.mu[static_cast<std::size_t>(d)] == doctest::Approx(post.mu_of(b)[static_cast<std::size_t>(d)]).epsilon(1e-12));
  }
}

TEST_CASE("reparameterize") {
  LatentPosterior<double> post{1, 3, {0.5, -1.0, 2.0}, {0.0, 0.0, 0.0}};
  const std::vector<double> zeros(3, 0.0), e{0.3, -0.2, 1.0};
  CHECK(reparameterize<double>(post, zeros).data == post.mu);
  const auto z = reparameterize<double>(post, e);
  for (int i = 0; i < 3; ++i) CHECK(z.data[static_cast<std::size_t>(i)] == post.mu[static_cast<std::size_t>(i)] + e[static_cast<std::size_t>(i)]);

  post.log_sigma = {0.3, -0.7, 1.1};
  Rng rng(7);
  const int n = 100000;
  std::vector<double> mean(3, 0.0);
  for (int s = 0; s < n; ++s) {
    const auto eps = standard_normal<double>(rng, 3);
    const auto zz = reparameterize<double>(post, eps);
    for (int i = 0; i < 3; ++i) mean[static_cast<std::size_t>(i)] += zz.data[static_cast<std::size_t>(i)] / n;
  }
  for (int i = 0; i < 3; ++i) {
    const double sigma = std::exp(post.log_sigma[static_cast<std::size_t>(i)]);
    CHECK(std::abs(mean[static_cast<std::size_t>(i)] - post.mu[static_cast<std::size_t>(i)]) < 3.0 * sigma / std::sqrt(double(n)) + 1e-12);
  }
}

TEST_CASE("forward paths: determinism, reproducibility, shared weights") {
  Model<double> model(oracle::tiny_config(), 8);
  Rng rng(9);
  const auto x = oracle::random_batch<double>(rng, 2, 16);
  CHECK(forward_ce(model, x).data == forward_ce(model, x).data);
  Rng r1(10), r2(10);
  const auto v1 = forward_vae(model, x, r1), v2 = forward_vae(model, x, r2);
  CHECK(v1.x_hat.data == v2.x_hat.data);
  CHECK(v1.z.data == v2.z.data);

  // Perturb a trunk weight: both the CE output and the VAE posterior move.
  const auto ce_before = forward_ce(model, x);
  const auto mu_before = model.encode(x).mu;
  auto& trunk = model.params().front();
  CHECK(trunk.name == "encoder.conv0.weight");
  for (auto& w : trunk.value) w *= 1.5;
  CHECK(forward_ce(model, x).data != ce_before.data);
  CHECK(model.encode(x).mu != mu_before);
}

TEST_CASE("parameter layout, cast, backend equivalence") {
  const Model<float> model(oracle::tiny_config(), 11);
  std::vector<std::string> names;
  for (const auto& p : model.params()) names.push_back(p.name);
  CHECK(names.front() == "encoder.conv0.weight");
  CHECK(std::find(names.begin(), names.end(), "encoder.head.bias") != names.end());
  CHECK(names.back() == "decoder.deconv2.bias");
  const auto& head_w = model.params()[4];
  CHECK(head_w.shape == std::vector<int>{64, 8, 4, 4});

  Rng rng(12);
  const auto x = oracle::random_batch<float>(rng, 2, 16);
  const auto d = model.cast<double>();
  const auto pf = model.encode(x);
  Tensor<double> xd(2, 1, 16, 16);
  std::copy(x.data.begin(), x.data.end(), xd.data.begin());
  const auto pd = d.encode(xd);
  for (std::size_t i = 0; i < pf.mu.size(); ++i) CHECK(pf.mu[i] == doctest::Approx(pd.mu[i]).epsilon(1e-4));

  Model<float> ref = model;
  ref.set_backend(KernelBackend::reference);
  const auto pr = ref.encode(x);
  for (std::size_t i = 0; i < pf.mu.size(); ++i) CHECK(pf.mu[i] == doctest::Approx(pr.mu[i]).epsilon(1e-4));

  auto broken = model.params();
  broken[0].value.pop_back();
  CHECK_THROWS_AS(Model<float>(oracle::tiny_config(), broken), std::invalid_argument);
}

TEST_CASE("coordconv on all layers and linear model") {
  ModelConfig cfg = oracle::tiny_config();
  cfg.coordconv_all_layers = true;
  const Model<double> all(cfg, 13);
  Rng rng(14);
  const auto x = oracle::random_batch<double>(rng, 1, 16);
  CHECK(all.decode(latent_tensor<double>(all.encode(x).mu, 1, 32)).same_shape(x));

  ModelConfig lin;
  lin.resolution = 4;
  lin.channels = {};
  lin.latent_dim = 3;
  const Model<double> linear(lin, 15);
  for (const auto& l : encoder_layers(lin)) CHECK_FALSE(l.activation);
  for (const auto& l : decoder_layers(lin)) CHECK_FALSE(l.activation);
  CHECK(linear.decode(Tensor<double>(1, 3, 1, 1)).h == 4);
}

TEST_CASE("checkpoint round trip is bit exact") {
  const auto dir = fs::temp_directory_path() / "cevae_test_ckpt";
  fs::remove_all(dir);
  const Model<float> model(oracle::tiny_config(), 16);
  const Checkpoint ckpt{oracle::tiny_config(), ModelKind::CE, 1.0, 7, 99, model.params()};
  save_checkpoint(ckpt, dir / "best");
  const auto back = load_checkpoint(dir / "best");
  CHECK(back.model == ckpt.model);
  CHECK(back.kind == ModelKind::CE);
  CHECK(back.epoch == 7);
  CHECK(back.seed == 99);
  REQUIRE(back.params.size() == ckpt.params.size());
  for (std::size_t i = 0; i < back.params.size(); ++i) {
    CHECK(back.params[i].name == ckpt.params[i].name);
    CHECK(back.params[i].shape == ckpt.params[i].shape);
    CHECK(std::memcmp(back.params[i].value.data(), ckpt.params[i].value.data(), ckpt.params[i].value.size() * 4) == 0);
  }
  const auto restored = model_from_checkpoint(back);
  Rng rng(17);
  const auto x = oracle::random_batch<float>(rng, 1, 16);
  CHECK(restored.encode(x).mu == model.encode(x).mu);

  const auto size = fs::file_size(dir / "best");
  fs::copy_file(dir / "best", dir / "cut");
  fs::resize_file(dir / "cut", size - 10);
  CHECK_THROWS_AS(load_checkpoint(dir / "cut"), FormatError);
  std::ofstream(dir / "junk") << "not a checkpoint at all";
  CHECK_THROWS_AS(load_checkpoint(dir / "junk"), FormatError);
  CHECK_THROWS_AS(load_checkpoint(dir / "absent"), IoError);
}
