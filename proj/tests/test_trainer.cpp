#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "cevae/checkpoint.hpp"
#include "cevae/errors.hpp"
#include "cevae/trainer.hpp"
#include "oracles.hpp"

using namespace cevae;
namespace fs = std::filesystem;

namespace {

struct Data {
  DatasetManifest manifest;
  std::vector<SliceSample> train, val, test;
};

const Data& phantom_data() {
  static const Data data = [] {
    PhantomConfig cfg;
    cfg.train_patients = 4;
    cfg.val_patients = 1;
    cfg.test_patients = 2;
    cfg.slices_per_patient = 8;
    cfg.resolution = 32;
    cfg.anomaly_radius_range = {2, 5};
    cfg.seed = 3;
    const auto dir = fs::temp_directory_path() / "cevae_test_trainer_data";
    fs::remove_all(dir);
    Data d;
    d.manifest = generate_phantoms(cfg, dir);
    const PreprocessOptions pre{16, true};
    d.train = load_split(d.manifest, Split::train, pre);
    d.val = load_split(d.manifest, Split::val, pre);
    d.test = load_split(d.manifest, Split::test, pre);
    return d;
  }();
  return data;
}

TrainConfig quick(ModelKind kind, double factor, int epochs = 2) {
  TrainConfig cfg;
  cfg.model_kind = kind;
  cfg.cevae_factor = factor;
  cfg.epochs = epochs;
  cfg.batch_size = 8;
  cfg.lr = 1e-3;
  cfg.seed = 11;
  return cfg;
}

ParamSet<double> single(std::vector<double> v) { return {{"w", {static_cast<int>(v.size())}, std::move(v)}}; }

}  // namespace

TEST_CASE("adam") {
  AdamOptions opt;
  opt.lr = 0.01;
  auto p = single({1.0, -2.0, 3.0});
  const auto zero = single({0.0, 0.0, 0.0});
  AdamState<double> st;
  for (int i = 0; i < 10; ++i) adam_step(p, zero, st, opt);
  CHECK(p[0].value == std::vector<double>{1.0, -2.0, 3.0});
  CHECK(st.step == 10);

  p = single({1.0, -2.0, 3.0});
  AdamState<double> st1;
  adam_step(p, single({0.5, -3.0, 1e3}), st1, opt);
  CHECK(p[0].value[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
  CHECK(p[0].value[1] == doctest::Approx(-2.0 + 0.01).epsilon(1e-6));
  CHECK(p[0].value[2] == doctest::Approx(3.0 - 0.01).epsilon(1e-6));

  // Second step by hand.
  adam_step(p, single({0.5, 1.0, 1e3}), st1, opt);
  const double m = 0.9 * 0.1 * -3.0 + 0.1 * 1.0, v = 0.999 * 0.001 * 9.0 + 0.001 * 1.0;
  const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
  CHECK(p[0].value[1] == doctest::Approx(-2.0 + 0.01 - 0.01 * mh / (std::sqrt(vh) + 1e-8)).epsilon(1e-9));

  auto q = single({1.0});
  AdamState<double> st2;
  CHECK_THROWS_WITH_AS(adam_step(q, single({NAN}), st2, opt), doctest::Contains("w"), NumericError);
  CHECK(q[0].value[0] == 1.0);
  CHECK_THROWS_AS(adam_step(q, single({1.0, 2.0}), st2, opt), std::invalid_argument);
}

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.lr = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.cevae_factor = 1.5;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.epochs = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("one epoch writes a run directory") {
  const auto& d = phantom_data();
  const auto out = fs::temp_directory_path() / "cevae_test_run";
  fs::remove_all(out);
  int calls = 0;
  TrainOptions opts{out, [&](const EpochRecord&) { ++calls; }};
  const auto res = train(d.manifest, oracle::tiny_config(), quick(ModelKind::ceVAE, 0.5, 1), opts);
  CHECK(calls == 1);
  CHECK(fs::exists(out / "config.json"));
  CHECK(fs::exists(out / "losses.csv"));
  CHECK(fs::exists(out / "checkpoints" / "best"));
  CHECK(fs::exists(out / "checkpoints" / "last"));
  CHECK(res.record.best_checkpoint == out / "checkpoints" / "best");
  const auto ck = load_checkpoint(out / "checkpoints" / "best");
  CHECK(ck.kind == ModelKind::ceVAE);
  CHECK(ck.epoch == 1);
  const auto& e = res.record.epochs.at(0);
  CHECK(e.train.l_kl > 0.0);
  CHECK(e.train.l_rec_vae > 0.0);
  CHECK(e.train.l_rec_ce > 0.0);
  CHECK(e.val.l_rec_ce > 0.0);

  const auto rows = read_losses_csv(out / "losses.csv");
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].train.total == e.train.total);
  CHECK(rows[0].val.l_kl == e.val.l_kl);
}

TEST_CASE("training is reproducible and selects the best validation epoch") {
  const auto& d = phantom_data();
  const auto cfg = quick(ModelKind::ceVAE, 0.5, 4);
  const auto a = train(d.train, d.val, oracle::tiny_config(), cfg);
  const auto b = train(d.train, d.val, oracle::tiny_config(), cfg);
  REQUIRE(a.record.epochs.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(a.record.epochs[i].train.total == b.record.epochs[i].train.total);
    CHECK(a.record.epochs[i].val.total == b.record.epochs[i].val.total);
  }
  for (std::size_t i = 0; i < a.best.params().size(); ++i) CHECK(a.best.params()[i].value == b.best.params()[i].value);

  double best = INFINITY;
  int best_epoch = 0;
  for (const auto& e : a.record.epochs)
    if (e.val.total < best) best = e.val.total, best_epoch = e.epoch;
  CHECK(a.record.selection_epoch == best_epoch);
  CHECK(best <= a.record.epochs.back().val.total);
  CHECK(a.record.epochs.back().train.total < a.record.epochs.front().train.total);

  // The returned model is the selected one.
  CHECK(evaluate_loss(a.best, d.val, cfg).total == doctest::Approx(best).epsilon(1e-9));

  auto other = cfg;
  other.seed = 12;
  const auto c = train(d.train, d.val, oracle::tiny_config(), other);
  CHECK(c.record.epochs[0].train.total != a.record.epochs[0].train.total);
}

TEST_CASE("every model kind trains") {
  const auto& d = phantom_data();
  for (auto kind : {ModelKind::AE, ModelKind::DAE, ModelKind::CE, ModelKind::VAE}) {
    CAPTURE(to_string(kind));
    const auto r = train(d.train, d.val, oracle::tiny_config(), quick(kind, 0.5, 1));
    const auto& e = r.record.epochs[0].train;
    CHECK(std::isfinite(e.total));
    if (kind == ModelKind::AE || kind == ModelKind::DAE) CHECK(e.l_kl == 0.0);
    if (kind == ModelKind::VAE) CHECK(e.l_rec_ce == 0.0);
  }
}

TEST_CASE("split provenance is enforced") {
  const auto& d = phantom_data();
  const auto cfg = quick(ModelKind::ceVAE, 0.5, 1);
  CHECK_THROWS_AS(train(d.test, d.val, oracle::tiny_config(), cfg), std::invalid_argument);
  CHECK_THROWS_AS(train(d.train, d.test, oracle::tiny_config(), cfg), std::invalid_argument);
  CHECK_THROWS_AS(train(d.val, d.val, oracle::tiny_config(), cfg), std::invalid_argument);
  CHECK_THROWS_AS(train({}, d.val, oracle::tiny_config(), cfg), std::invalid_argument);
  auto tainted = d.train;
  tainted[0].mask = Mask(16, 16, 1);
  CHECK_THROWS_AS(train(tainted, d.val, oracle::tiny_config(), cfg), std::invalid_argument);
  ModelConfig big = oracle::tiny_config();
  big.resolution = 32;
  big.channels = {4, 8, 8};
  CHECK_THROWS_AS(train(d.train, d.val, big, cfg), std::invalid_argument);
}
