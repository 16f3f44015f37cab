#include "cevae/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "cevae/checkpoint.hpp"
#include "cevae/errors.hpp"
#include "cevae/run_config.hpp"

namespace cevae {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: lr must be > 0");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (!(cevae_factor >= 0.0 && cevae_factor <= 1.0)) throw std::invalid_argument("TrainConfig: cevae_factor must be in [0, 1]");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw std::invalid_argument("TrainConfig: Adam betas must be in [0, 1)");
  if (!(adam_eps > 0.0)) throw std::invalid_argument("TrainConfig: adam_eps must be > 0");
  if (!(dae_sigma >= 0.0)) throw std::invalid_argument("TrainConfig: dae_sigma must be >= 0");
}

template <typename T>
void adam_step(ParamSet<T>& params, const ParamSet<T>& grads, AdamState<T>& state, const AdamOptions& options) {
  if (params.size() != grads.size()) throw std::invalid_argument("adam_step: params and grads differ in count");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].value.size() != grads[i].value.size())
      throw std::invalid_argument("adam_step: shape mismatch for " + params[i].name);
    for (T g : grads[i].value)
      if (!std::isfinite(static_cast<double>(g))) throw NumericError("adam_step: non-finite gradient in " + params[i].name);
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.value.size(), T{0});
      state.v.emplace_back(p.value.size(), T{0});
    }
  }
  ++state.step;
  const double b1 = options.beta1, b2 = options.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& theta = params[i].value;
    const auto& g = grads[i].value;
    auto& m = state.m[i];
    auto& v = state.v[i];
#pragma omp parallel for simd schedule(static)
    for (std::size_t j = 0; j < theta.size(); ++j) {
      m[j] = static_cast<T>(b1 * m[j] + (1.0 - b1) * g[j]);
      v[j] = static_cast<T>(b2 * v[j] + (1.0 - b2) * g[j] * g[j]);
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      theta[j] = static_cast<T>(theta[j] - options.lr * m_hat / (std::sqrt(v_hat) + options.eps));
    }
  }
}

template void adam_step<float>(ParamSet<float>&, const ParamSet<float>&, AdamState<float>&, const AdamOptions&);
template void adam_step<double>(ParamSet<double>&, const ParamSet<double>&, AdamState<double>&, const AdamOptions&);

namespace {

bool uses_masks(ModelKind kind) { return kind == ModelKind::CE || kind == ModelKind::ceVAE; }

struct LossAccumulator {
  double kl = 0, rec_vae = 0, rec_ce = 0, total = 0, factor = 0;
  std::size_t count = 0;

  void add(const LossBreakdown& l, std::size_t n) {
    const auto w = static_cast<double>(n);
    kl += w * l.l_kl;
    rec_vae += w * l.l_rec_vae;
    rec_ce += w * l.l_rec_ce;
    total += w * l.total;
    factor = l.cevae_factor;
    count += n;
  }
  LossBreakdown mean() const {
    const auto n = static_cast<double>(count);
    return {kl / n, rec_vae / n, rec_ce / n, total / n, factor};
  }
};

// Builds the corrupted input the model kind trains on; empty when unused.
Tensor<float> corrupted_batch(ModelKind kind, const std::vector<Image>& images, const Tensor<float>& x,
                              const TrainConfig& cfg, Rng& rng) {
  if (kind == ModelKind::DAE) {
    std::vector<Image> noisy;
    noisy.reserve(images.size());
    for (const auto& img : images) noisy.push_back(gaussian_corrupt(img, cfg.dae_sigma, rng));
    return stack_images<float>(noisy);
  }
  if (!uses_masks(kind)) return {};
  std::vector<Image> masked;
  masked.reserve(images.size());
  for (const auto& img : images)
    masked.push_back(apply_mask(img, sample_mask_spec(rng, img.rows, img.cols, x.data, cfg.masks)));
  return stack_images<float>(masked);
}

void check_split(std::span<const SliceSample> samples, Split expected, int resolution, const char* what) {
  if (samples.empty()) throw std::invalid_argument(std::string("train: empty ") + what + " split");
  for (const auto& s : samples) {
    if (s.split != expected)
      throw std::invalid_argument(std::string("train: ") + what + " set contains " + std::string(to_string(s.split)) +
                                  " slice of patient " + s.patient_id);
    if (expected == Split::train && s.has_anomaly())
      throw std::invalid_argument("train: annotated slice in training data (patient " + s.patient_id + ")");
    if (s.image.rows != resolution || s.image.cols != resolution)
      throw std::invalid_argument("train: slice of patient " + s.patient_id + " is not " + std::to_string(resolution) +
                                  "x" + std::to_string(resolution));
  }
}

void write_json(const nlohmann::json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace

LossBreakdown evaluate_loss(const Model<float>& model, std::span<const SliceSample> samples, const TrainConfig& cfg) {
  if (samples.empty()) throw std::invalid_argument("evaluate_loss: no samples");
  Rng rng(cfg.validation_seed);
  LossAccumulator acc;
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  for (std::size_t start = 0; start < samples.size(); start += bs) {
    const std::size_t end = std::min(samples.size(), start + bs);
    std::vector<Image> images;
    for (std::size_t i = start; i < end; ++i) images.push_back(samples[i].image);
    const auto x = stack_images<float>(images);
    const auto x_corr = corrupted_batch(cfg.model_kind, images, x, cfg, rng);
    const auto eps = standard_normal<float>(rng, images.size() * static_cast<std::size_t>(model.config().latent_dim));
    acc.add(model_loss<float>(cfg.model_kind, model, x, x_corr, eps, cfg.cevae_factor), images.size());
  }
  return acc.mean();
}

TrainResult train(std::span<const SliceSample> train_set, std::span<const SliceSample> val_set, const ModelConfig& model_cfg,
                  const TrainConfig& cfg, const TrainOptions& options) {
  model_cfg.validate();
  cfg.validate();
  check_split(train_set, Split::train, model_cfg.resolution, "train");
  check_split(val_set, Split::val, model_cfg.resolution, "validation");

  const bool write = !options.out_dir.empty();
  RunRecord record;
  record.model = model_cfg;
  record.train = cfg;
  if (write) {
    std::filesystem::create_directories(options.out_dir / "checkpoints");
    record.best_checkpoint = options.out_dir / "checkpoints" / "best";
    record.last_checkpoint = options.out_dir / "checkpoints" / "last";
    if (!std::filesystem::exists(options.out_dir / "config.json")) {
      RunConfig echo;
      echo.model = model_cfg;
      echo.train = cfg;
      write_json(to_json(echo), options.out_dir / "config.json");
    }
  }

  Model<float> model(model_cfg, derive_seed(cfg.seed, fnv1a("init")));
  Model<float> best = model;
  AdamState<float> adam;
  const AdamOptions adam_opts{cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps};
  double best_val = std::numeric_limits<double>::infinity();
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  const auto latent = static_cast<std::size_t>(model_cfg.latent_dim);

  auto make_ckpt = [&](const Model<float>& m, int epoch) {
    return Checkpoint{model_cfg, cfg.model_kind, cfg.cevae_factor, epoch, cfg.seed, m.params()};
  };

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(cfg.seed, fnv1a("shuffle"), static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    Rng rng(derive_seed(cfg.seed, fnv1a("batches"), static_cast<std::uint64_t>(epoch)));

    LossAccumulator acc;
    int step = 0;
    for (std::size_t start = 0; start < order.size(); start += bs, ++step) {
      const std::size_t end = std::min(order.size(), start + bs);
      std::vector<Image> images;
      images.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const auto& img = train_set[order[i]].image;
        images.push_back(cfg.augment ? augment(img, sample_augment_spec(rng, cfg.augment_ranges)) : img);
      }
      const auto x = stack_images<float>(images);
      const auto x_corr = corrupted_batch(cfg.model_kind, images, x, cfg, rng);
      const auto eps = standard_normal<float>(rng, images.size() * latent);
      auto grads = zeros_like(model.params());
      LossBreakdown loss;
      try {
        loss = model_loss<float>(cfg.model_kind, model, x, x_corr, eps, cfg.cevae_factor, &grads);
        adam_step(model.params(), grads, adam, adam_opts);
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", step " + std::to_string(step) +
                           ": " + e.what());
      }
      acc.add(loss, images.size());
    }

    EpochRecord rec{epoch, acc.mean(), evaluate_loss(model, val_set, cfg)};
    record.epochs.push_back(rec);
    if (rec.val.total < best_val) {
      best_val = rec.val.total;
      record.selection_epoch = epoch;
      best = model;
      if (write) save_checkpoint(make_ckpt(best, epoch), record.best_checkpoint);
    }
    if (write) {
      save_checkpoint(make_ckpt(model, epoch), record.last_checkpoint);
      write_losses_csv(record, options.out_dir / "losses.csv");
    }
    if (options.on_epoch) options.on_epoch(rec);
  }
  return {std::move(record), std::move(best)};
}

TrainResult train(const DatasetManifest& manifest, const ModelConfig& model_cfg, const TrainConfig& cfg,
                  const TrainOptions& options) {
  const PreprocessOptions pre{model_cfg.resolution, true};
  const auto train_set = load_split(manifest, Split::train, pre);
  const auto val_set = load_split(manifest, Split::val, pre);
  return train(train_set, val_set, model_cfg, cfg, options);
}

void write_losses_csv(const RunRecord& record, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,split,l_kl,l_rec_vae,l_rec_ce,total\n";
  char line[256];
  for (const auto& e : record.epochs) {
    for (const auto& [split, l] : {std::pair{"train", e.train}, std::pair{"val", e.val}}) {
      std::snprintf(line, sizeof line, "%d,%s,%.17g,%.17g,%.17g,%.17g\n", e.epoch, split, l.l_kl, l.l_rec_vae,
                    l.l_rec_ce, l.total);
      out << line;
    }
  }
}

std::vector<EpochRecord> read_losses_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "epoch,split,l_kl,l_rec_vae,l_rec_ce,total")
    throw FormatError(path.string() + ": unexpected losses.csv header");
  std::vector<EpochRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> parts;
    while (std::getline(ss, field, ',')) parts.push_back(field);
    if (parts.size() != 6) throw FormatError(path.string() + ": malformed row '" + line + "'");
    const int epoch = std::stoi(parts[0]);
    const LossBreakdown l{std::stod(parts[2]), std::stod(parts[3]), std::stod(parts[4]), std::stod(parts[5]), 0.0};
    if (out.empty() || out.back().epoch != epoch) out.push_back({epoch, {}, {}});
    (parts[1] == "train" ? out.back().train : out.back().val) = l;
  }
  return out;
}

}  // namespace cevae
