// Command-line front end: gen-data, train, score, evaluate, sweep, report.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cevae/checkpoint.hpp"
#include "cevae/data.hpp"
#include "cevae/errors.hpp"
#include "cevae/evaluation.hpp"
#include "cevae/parallel.hpp"
#include "cevae/render.hpp"
#include "cevae/run_config.hpp"
#include "cevae/scoring.hpp"
#include "cevae/sweep.hpp"
#include "cevae/trainer.hpp"

namespace fs = std::filesystem;
using namespace cevae;

namespace {

struct ConfigFlags {
  std::string config_file;
  std::vector<std::string> overrides;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_file, "Flat JSON run config")->check(CLI::ExistingFile);
    cmd->add_option("--set", overrides, "Override a config key (key=value), repeatable");
  }
  RunConfig resolve() const {
    RunConfig cfg = config_file.empty() ? RunConfig{} : load_run_config(config_file);
    for (const auto& o : overrides) apply_override(cfg, o);
    return cfg;
  }
};

void print_epoch(const EpochRecord& e) {
  std::printf("epoch %3d  train total %.4f (kl %.4f rec_vae %.4f rec_ce %.4f)  val total %.4f\n", e.epoch, e.train.total,
              e.train.l_kl, e.train.l_rec_vae, e.train.l_rec_ce, e.val.total);
  std::fflush(stdout);
}

int cmd_gen_data(const fs::path& out, const PhantomConfig& cfg) {
  const auto manifest = generate_phantoms(cfg, out);
  std::printf("wrote %zu slices to %s\n", manifest.entries.size(), (out / "manifest.csv").c_str());
  return 0;
}

int cmd_train(const fs::path& data, const fs::path& out, RunConfig cfg) {
  cfg.validate();
  fs::create_directories(out);
  save_run_config(cfg, out / "config.json");
  const auto manifest = load_manifest(data);
  const auto train_set = load_split(manifest, Split::train, cfg.preprocess());
  const auto val_set = load_split(manifest, Split::val, cfg.preprocess());
  TrainOptions opts{out, print_epoch};
  const auto result = train(train_set, val_set, cfg.model, cfg.train, opts);
  std::printf("best epoch %d -> %s\n", result.record.selection_epoch, result.record.best_checkpoint.c_str());
  return 0;
}

int cmd_score(const fs::path& checkpoint, const fs::path& data, const fs::path& out, const RunConfig& cfg,
              const std::optional<std::string>& mode, const std::string& split, bool png, bool sample_only,
              std::optional<std::uint64_t> seed) {
  const auto ckpt = load_checkpoint(checkpoint);
  const auto model = model_from_checkpoint(ckpt);
  AttributionConfig attribution = cfg.attribution;
  if (mode) attribution.mode = parse_attribution_mode(*mode);
  attribution.fusion = default_fusion(ckpt.kind, ckpt.cevae_factor);
  attribution.validate();
  const auto manifest = load_manifest(data);
  const PreprocessOptions pre{ckpt.model.resolution, cfg.normalize_before_resample};
  const auto samples = load_split(manifest, parse_split(split), pre);
  const auto scored = score_slices(model, samples, attribution, seed.value_or(ckpt.seed), !sample_only);
  write_scores(out, scored, png);
  std::printf("scored %zu slices (%s, fusion %s) -> %s\n", scored.size(), std::string(to_string(attribution.mode)).c_str(),
              std::string(to_string(attribution.fusion)).c_str(), (out / "scores.csv").c_str());
  return 0;
}

int cmd_evaluate(const fs::path& scores_dir, const fs::path& data, const fs::path& out, const EvalOptions& eval,
                 bool normalize_first) {
  const auto scored = read_scores(scores_dir);
  if (scored.empty()) throw FormatError(scores_dir.string() + ": no scored slices");
  std::map<std::pair<std::string, int>, const ScoredSlice*> index;
  for (const auto& s : scored) index[{s.patient_id, s.slice_index}] = &s;
  const int resolution = scored.front().pixels.scores.rows;
  if (resolution == 0) throw FormatError(scores_dir.string() + ": score maps missing");
  const auto manifest = load_manifest(data);
  const auto test = load_split(manifest, Split::test, {resolution, normalize_first});
  std::vector<double> sample_scores;
  std::vector<Grid<double>> maps;
  for (const auto& s : test) {
    const auto it = index.find({s.patient_id, s.slice_index});
    if (it == index.end())
      throw FormatError("no score for test slice " + s.patient_id + "#" + std::to_string(s.slice_index));
    sample_scores.push_back(it->second->sample.value);
    maps.push_back(it->second->pixels.scores);
  }
  const auto report = single_run_report(evaluate_run(test, sample_scores, maps, eval));
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_report(report, out);
  const auto table = format_table(report);
  write_text(table, fs::path(out).replace_extension(".txt"));
  std::cout << table;
  return 0;
}

int cmd_sweep(const fs::path& data, const fs::path& out, const RunConfig& base, const std::vector<double>& factors, int seeds,
              const EvalOptions& eval) {
  base.validate();
  fs::create_directories(out);
  save_run_config(base, out / "config.json");
  const auto sweep_data = load_sweep_data(load_manifest(data), base.preprocess());
  SweepOptions opts;
  opts.factors = factors;
  opts.seeds.clear();
  for (int s = 0; s < seeds; ++s) opts.seeds.push_back(base.train.seed + static_cast<std::uint64_t>(s));
  opts.eval = eval;
  opts.out_dir = out / "runs";
  opts.on_run = [](const SweepRow& r) {
    std::printf("factor %.2f seed %llu: slice %.4f pixel %.4f dice %.4f\n", r.factor,
                static_cast<unsigned long long>(r.seed), r.metrics.slice_roc_auc, r.metrics.pixel_roc_auc,
                r.metrics.dice_mean);
    std::fflush(stdout);
  };
  const auto result = factor_sweep(sweep_data, base, opts);
  nlohmann::json j = nlohmann::json::array();
  for (const auto& f : result.per_factor) {
    auto entry = to_json(f.report);
    entry["factor"] = f.factor;
    j.push_back(entry);
  }
  write_text(j.dump(2) + "\n", out / "sweep.json");
  write_text(sweep_csv(result), out / "sweep.csv");
  write_text(sweep_table(result), out / "sweep.txt");
  write_text(sweep_svg(result), out / "sweep.svg");
  std::cout << sweep_table(result);
  return 0;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& out) {
  std::vector<EvalReport> reports;
  for (const auto& p : inputs) reports.push_back(load_report(p));
  const auto merged = aggregate_runs(reports);
  if (!out.empty()) save_report(merged, out);
  std::cout << format_table(merged);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  configure_threads_from_env();
  CLI::App app{"Context-encoding VAE anomaly detection on 2D slices"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic phantom dataset and manifest");
  fs::path gen_out;
  PhantomConfig phantom;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--patients", phantom.test_patients, "Test patients")->capture_default_str();
  gen->add_option("--train-patients", phantom.train_patients)->capture_default_str();
  gen->add_option("--val-patients", phantom.val_patients)->capture_default_str();
  gen->add_option("--slices", phantom.slices_per_patient, "Slices per patient")->capture_default_str();
  gen->add_option("--anomaly-frac", phantom.anomaly_fraction, "Fraction of test slices with an anomaly")
      ->capture_default_str();
  gen->add_option("--anomaly-shift", phantom.anomaly_intensity_shift, "Intensity shift in patient std units")
      ->capture_default_str();
  gen->add_option("--radius-min", phantom.anomaly_radius_range.first)->capture_default_str();
  gen->add_option("--radius-max", phantom.anomaly_radius_range.second)->capture_default_str();
  gen->add_option("--resolution", phantom.resolution)->capture_default_str();
  gen->add_option("--seed", phantom.seed)->capture_default_str();

  auto* tr = app.add_subcommand("train", "Train one model and write a run directory");
  fs::path tr_data, tr_out;
  std::optional<std::string> tr_kind;
  std::optional<double> tr_factor;
  std::optional<std::uint64_t> tr_seed;
  std::optional<int> tr_epochs;
  ConfigFlags tr_cfg;
  tr->add_option("--data", tr_data, "Dataset manifest")->required()->check(CLI::ExistingFile);
  tr->add_option("--out", tr_out, "Run directory")->required();
  tr->add_option("--model-kind", tr_kind, "AE, DAE, CE, VAE or ceVAE");
  tr->add_option("--cevae-factor", tr_factor, "Weight of the context-encoding term in [0, 1]");
  tr->add_option("--seed", tr_seed);
  tr->add_option("--epochs", tr_epochs);
  tr_cfg.attach(tr);

  auto* sc = app.add_subcommand("score", "Write sample scores and pixel maps for one split");
  fs::path sc_ckpt, sc_data, sc_out;
  std::optional<std::string> sc_mode;
  std::optional<std::uint64_t> sc_seed;
  std::string sc_split = "test";
  bool sc_png = false, sc_sample_only = false;
  ConfigFlags sc_cfg;
  sc->add_option("--checkpoint", sc_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  sc->add_option("--data", sc_data, "Dataset manifest")->required()->check(CLI::ExistingFile);
  sc->add_option("--out", sc_out, "Output directory")->required();
  sc->add_option("--mode", sc_mode, "vanilla, guided or smooth_guided");
  sc->add_option("--split", sc_split)->capture_default_str();
  sc->add_option("--seed", sc_seed, "Attribution seed (default: checkpoint seed)");
  sc->add_flag("--png", sc_png, "Also write PNG heatmaps");
  sc->add_flag("--sample-only", sc_sample_only, "Skip pixel maps");
  sc_cfg.attach(sc);

  auto* ev = app.add_subcommand("evaluate", "Compute ROC-AUCs and cross-validated Dice");
  fs::path ev_scores, ev_data, ev_out;
  EvalOptions ev_opts;
  bool ev_resample_first = false;
  ev->add_option("--scores", ev_scores, "Directory written by score")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--data", ev_data, "Dataset manifest")->required()->check(CLI::ExistingFile);
  ev->add_option("--out", ev_out, "Report JSON path")->required();
  ev->add_option("--folds", ev_opts.dice.folds)->capture_default_str();
  ev->add_option("--seed", ev_opts.seed)->capture_default_str();
  ev->add_flag("--per-slice-pixel-auc", ev_opts.pixel_auc_per_slice);
  ev->add_flag("--resample-first", ev_resample_first, "Resample before normalizing (must match scoring)");

  auto* sw = app.add_subcommand("sweep", "Train and evaluate ceVAEs over a grid of factors");
  fs::path sw_data, sw_out;
  std::vector<double> sw_factors{0.0, 0.25, 0.5, 0.75, 1.0};
  int sw_seeds = 5;
  std::optional<int> sw_epochs;
  ConfigFlags sw_cfg;
  EvalOptions sw_eval;
  sw->add_option("--data", sw_data, "Dataset manifest")->required()->check(CLI::ExistingFile);
  sw->add_option("--out", sw_out, "Output directory")->required();
  sw->add_option("--factors", sw_factors)->delimiter(',')->capture_default_str();
  sw->add_option("--seeds", sw_seeds, "Number of seeds per factor")->capture_default_str()->check(CLI::PositiveNumber);
  sw->add_option("--epochs", sw_epochs);
  sw_cfg.attach(sw);

  auto* rp = app.add_subcommand("report", "Aggregate several report.json files (median, min, max)");
  std::vector<std::string> rp_inputs;
  std::string rp_out;
  rp->add_option("inputs", rp_inputs, "Report JSON files")->required()->check(CLI::ExistingFile);
  rp->add_option("--out", rp_out, "Aggregated report path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen) return cmd_gen_data(gen_out, phantom);
    if (*tr) {
      RunConfig cfg = tr_cfg.resolve();
      if (tr_kind) cfg.train.model_kind = parse_model_kind(*tr_kind);
      if (tr_factor) cfg.train.cevae_factor = *tr_factor;
      if (tr_seed) cfg.train.seed = *tr_seed;
      if (tr_epochs) cfg.train.epochs = *tr_epochs;
      return cmd_train(tr_data, tr_out, cfg);
    }
    if (*sc)
      return cmd_score(sc_ckpt, sc_data, sc_out, sc_cfg.resolve(), sc_mode, sc_split, sc_png, sc_sample_only, sc_seed);
    if (*ev) return cmd_evaluate(ev_scores, ev_data, ev_out, ev_opts, !ev_resample_first);
    if (*sw) {
      RunConfig cfg = sw_cfg.resolve();
      if (sw_epochs) cfg.train.epochs = *sw_epochs;
      return cmd_sweep(sw_data, sw_out, cfg, sw_factors, sw_seeds, sw_eval);
    }
    if (*rp) return cmd_report(rp_inputs, rp_out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
