#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>

#include "cevae/data.hpp"
#include "cevae/errors.hpp"
#include "cevae/rng.hpp"

using namespace cevae;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("cevae_test_data_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Image random_image(Rng& rng, int rows, int cols) {
  Image img(rows, cols);
  std::normal_distribution<float> d(0.0f, 1.0f);
  for (auto& v : img.values) v = d(rng);
  return img;
}

std::pair<double, double> pooled_stats(const std::vector<Image>& slices) {
  double sum = 0, sq = 0;
  std::size_t n = 0;
  for (const auto& s : slices)
    for (float v : s.values) {
      sum += v;
      sq += static_cast<double>(v) * v;
      ++n;
    }
  const double mean = sum / n;
  return {mean, std::sqrt(sq / n - mean * mean)};
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("zscore: hand-computed 2x2 slice") {
  Image img(2, 2);
  img.values = {0, 0, 2, 2};
  const auto out = zscore_normalize(std::span<const Image>(&img, 1));
  CHECK(out[0].values == std::vector<float>{-1, -1, 1, 1});
}

TEST_CASE("zscore: constant patient is degenerate and named") {
  Image img(4, 4, 3.0f);
  try {
    zscore_normalize(std::span<const Image>(&img, 1), "patient-x");
    FAIL("expected DegenerateInputError");
  } catch (const DegenerateInputError& e) {
    CHECK(std::string(e.what()).find("patient-x") != std::string::npos);
  }
}

TEST_CASE("zscore: pooled over slices, idempotent") {
  Rng rng(3);
  std::vector<Image> slices;
  for (int i = 0; i < 5; ++i) {
    auto img = random_image(rng, 16, 16);
    for (auto& v : img.values) v = v * (i + 1.0f) + 2.0f * i;
    slices.push_back(img);
  }
  const auto once = zscore_normalize(slices);
  const auto [mean, std] = pooled_stats(once);
  CHECK(std::abs(mean) < 1e-6);
  CHECK(std::abs(std - 1.0) < 1e-6);
  // Per-slice stats are not forced to 0/1: normalization is joint.
  CHECK(std::abs(pooled_stats({once[4]}).first) > 0.1);
  const auto twice = zscore_normalize(once);
  for (std::size_t s = 0; s < once.size(); ++s)
    for (std::size_t i = 0; i < once[s].size(); ++i) CHECK(std::abs(twice[s].values[i] - once[s].values[i]) < 1e-6);
}

TEST_CASE("resample: identity, constancy, checkerboard mean, bad target") {
  Rng rng(1);
  const auto img = random_image(rng, 64, 64);
  CHECK(resample(img, 64) == img);
  const Image c(40, 40, 3.5f);
  for (int t : {8, 37, 64, 100}) {
    const auto r = resample(c, t);
    CHECK(r.rows == t);
    CHECK(r.cols == t);
    for (float v : r.values) CHECK(v == doctest::Approx(3.5f).epsilon(1e-6));
  }
  Image board(128, 128);
  for (int y = 0; y < 128; ++y)
    for (int x = 0; x < 128; ++x) board(y, x) = ((x + y) % 2) ? 1.0f : 0.0f;
  const auto small = resample(board, 64);
  const double mean = std::accumulate(small.values.begin(), small.values.end(), 0.0) / small.size();
  CHECK(std::abs(mean - 0.5) < 1e-3);
  CHECK_THROWS_AS(resample(img, 0), std::invalid_argument);
  CHECK_THROWS_AS(resample(img, -3), std::invalid_argument);
}

TEST_CASE("resample_mask stays binary") {
  Mask m(32, 32);
  for (int y = 8; y < 20; ++y)
    for (int x = 8; x < 20; ++x) m(y, x) = 1;
  const auto r = resample_mask(m, 64);
  int ones = 0;
  for (auto v : r.values) {
    CHECK((v == 0 || v == 1));
    ones += v;
  }
  CHECK(ones == doctest::Approx(4 * 144).epsilon(0.15));
}

TEST_CASE("slice files round-trip bit-exactly and reject corruption") {
  const auto dir = scratch("io");
  Rng rng(7);
  auto img = random_image(rng, 64, 64);
  img.values[5] = -0.0f;
  img.values[6] = std::numeric_limits<float>::denorm_min();
  write_slice(dir / "a.cevs", img);
  const auto back = read_slice(dir / "a.cevs");
  CHECK(back.rows == 64);
  CHECK(std::memcmp(back.values.data(), img.values.data(), img.size() * sizeof(float)) == 0);

  Mask m(8, 5);
  m(2, 3) = 1;
  write_mask(dir / "m.cevs", m);
  CHECK(read_mask(dir / "m.cevs") == m);
  CHECK_THROWS_AS(read_slice(dir / "m.cevs"), FormatError);

  const auto bytes = file_bytes(dir / "a.cevs");
  std::ofstream(dir / "trunc.cevs", std::ios::binary).write(bytes.data(), 100);
  CHECK_THROWS_AS(read_slice(dir / "trunc.cevs"), FormatError);
  std::ofstream(dir / "short.cevs", std::ios::binary).write(bytes.data(), 7);
  CHECK_THROWS_AS(read_slice(dir / "short.cevs"), FormatError);
  auto bad = bytes;
  bad[0] = 'X';
  std::ofstream(dir / "magic.cevs", std::ios::binary).write(bad.data(), static_cast<std::streamsize>(bad.size()));
  CHECK_THROWS_AS(read_slice(dir / "magic.cevs"), FormatError);
}

TEST_CASE("manifest: round trip, missing files listed, split leakage rejected") {
  const auto dir = scratch("manifest");
  Rng rng(2);
  fs::create_directories(dir / "s");
  write_slice(dir / "s/a.cevs", random_image(rng, 8, 8));
  write_slice(dir / "s/b.cevs", random_image(rng, 8, 8));
  write_mask(dir / "s/bm.cevs", Mask(8, 8));

  DatasetManifest m;
  m.entries = {{"p1", "s/a.cevs", "", Split::train}, {"p2", "s/b.cevs", "s/bm.cevs", Split::test}};
  save_manifest(m, dir / "manifest.csv");
  const auto back = load_manifest(dir / "manifest.csv");
  REQUIRE(back.entries.size() == 2);
  CHECK(back.entries[1].mask_path == "s/bm.cevs");
  CHECK(back.entries[1].split == Split::test);
  CHECK(back.patients(Split::train) == std::vector<std::string>{"p1"});

  std::ofstream(dir / "missing.csv") << "patient_id,slice_path,mask_path,split\np1,s/a.cevs,,train\np1,s/nope.cevs,,train\n";
  try {
    load_manifest(dir / "missing.csv");
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("s/nope.cevs") != std::string::npos);
  }

  std::ofstream(dir / "leak.csv") << "patient_id,slice_path,mask_path,split\np1,s/a.cevs,,train\np1,s/b.cevs,,test\n";
  CHECK_THROWS(load_manifest(dir / "leak.csv"));
  std::ofstream(dir / "header.csv") << "id,path\np1,s/a.cevs\n";
  CHECK_THROWS_AS(load_manifest(dir / "header.csv"), FormatError);
}

TEST_CASE("phantoms: counts, train split clean, masks match anomalies") {
  PhantomConfig cfg;
  cfg.train_patients = 2;
  cfg.val_patients = 1;
  cfg.test_patients = 10;
  cfg.slices_per_patient = 20;
  cfg.anomaly_fraction = 0.5;
  cfg.seed = 11;
  const auto dir = scratch("phantom");
  const auto manifest = generate_phantoms(cfg, dir);
  int anomalous = 0, normal = 0;
  for (const auto& e : manifest.entries) {
    if (e.split != Split::test) {
      CHECK(e.mask_path.empty());
      continue;
    }
    bool any = false;
    if (!e.mask_path.empty()) {
      const auto m = read_mask(manifest.resolve(e.mask_path));
      any = std::any_of(m.values.begin(), m.values.end(), [](auto v) { return v != 0; });
    }
    (any ? anomalous : normal) += 1;
  }
  CHECK(anomalous == 100);
  CHECK(normal == 100);

  const auto test = load_split(manifest, Split::test, {});
  for (const auto& s : test) {
    CHECK(s.image.rows == 64);
    if (s.mask) CHECK(s.mask->same_shape(s.image));
  }
  const auto train = load_split(manifest, Split::train, {});
  CHECK(train.size() == 40);
  for (const auto& s : train) CHECK_FALSE(s.has_anomaly());
}

TEST_CASE("phantoms: anomaly_fraction 0 gives no masks") {
  PhantomConfig cfg;
  cfg.train_patients = 1;
  cfg.val_patients = 1;
  cfg.test_patients = 3;
  cfg.slices_per_patient = 6;
  cfg.anomaly_fraction = 0.0;
  for (const auto& e : generate_phantoms(cfg, scratch("nofrac")).entries) CHECK(e.mask_path.empty());
}

TEST_CASE("phantoms: equal seeds give byte-identical files, different seeds differ") {
  PhantomConfig cfg;
  cfg.train_patients = 2;
  cfg.val_patients = 1;
  cfg.test_patients = 2;
  cfg.slices_per_patient = 5;
  cfg.seed = 5;
  const auto a = scratch("seed_a"), b = scratch("seed_b"), c = scratch("seed_c");
  const auto ma = generate_phantoms(cfg, a);
  generate_phantoms(cfg, b);
  cfg.seed = 6;
  generate_phantoms(cfg, c);
  CHECK(file_bytes(a / "manifest.csv") == file_bytes(b / "manifest.csv"));
  int differing = 0;
  for (const auto& e : ma.entries) {
    CHECK(file_bytes(a / e.slice_path) == file_bytes(b / e.slice_path));
    if (!e.mask_path.empty()) CHECK(file_bytes(a / e.mask_path) == file_bytes(b / e.mask_path));
    differing += file_bytes(a / e.slice_path) != file_bytes(c / e.slice_path);
  }
  CHECK(differing == static_cast<int>(ma.entries.size()));
}

TEST_CASE("phantoms: config validation") {
  PhantomConfig cfg;
  cfg.anomaly_radius_range = {0, 5};
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.anomaly_radius_range = {4, 32};
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.anomaly_radius_range = {4, 31};
  CHECK_NOTHROW(cfg.validate());
  cfg.anomaly_fraction = 1.5;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("load_split: per-patient normalization after loading") {
  PhantomConfig cfg;
  cfg.train_patients = 3;
  cfg.val_patients = 1;
  cfg.test_patients = 1;
  cfg.slices_per_patient = 4;
  const auto manifest = generate_phantoms(cfg, scratch("split"));
  const auto train = load_split(manifest, Split::train, {});
  for (const auto& id : manifest.patients(Split::train)) {
    std::vector<Image> mine;
    for (const auto& s : train)
      if (s.patient_id == id) mine.push_back(s.image);
    REQUIRE(mine.size() == 4);
    const auto [mean, std] = pooled_stats(mine);
    CHECK(std::abs(mean) < 1e-5);
    CHECK(std::abs(std - 1.0) < 1e-5);
  }
  for (int i = 0; i < 4; ++i) CHECK(train[static_cast<std::size_t>(i)].slice_index == i);
  const auto down = load_split(manifest, Split::train, {32, true});
  CHECK(down.front().image.rows == 32);
}
