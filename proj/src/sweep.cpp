#include "cevae/sweep.hpp"

#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "cevae/render.hpp"

namespace cevae {

SweepData load_sweep_data(const DatasetManifest& manifest, const PreprocessOptions& options) {
  return {load_split(manifest, Split::train, options), load_split(manifest, Split::val, options),
          load_split(manifest, Split::test, options)};
}

Metrics score_and_evaluate(const Model<float>& model, std::span<const SliceSample> test, const AttributionConfig& attribution,
                           std::uint64_t seed, const EvalOptions& eval) {
  const auto scored = score_slices(model, test, attribution, seed);
  std::vector<double> scores;
  std::vector<Grid<double>> maps;
  for (const auto& s : scored) {
    scores.push_back(s.sample.value);
    maps.push_back(s.pixels.scores);
  }
  return evaluate_run(test, scores, maps, eval);
}

SweepResult factor_sweep(const SweepData& data, const RunConfig& base, const SweepOptions& options) {
  if (options.factors.empty() || options.seeds.empty()) throw std::invalid_argument("factor_sweep: no factors or seeds");
  for (double f : options.factors)
    if (!(f >= 0.0 && f <= 1.0)) throw std::invalid_argument("factor_sweep: factor " + std::to_string(f) + " not in [0, 1]");

  SweepResult result;
  for (double factor : options.factors) {
    std::vector<EvalReport> runs;
    for (std::uint64_t seed : options.seeds) {
      RunConfig cfg = base;
      cfg.train.model_kind = ModelKind::ceVAE;
      cfg.train.cevae_factor = factor;
      cfg.train.seed = seed;
      cfg.attribution.fusion = default_fusion(ModelKind::ceVAE, factor);

      TrainOptions topts;
      if (!options.out_dir.empty()) {
        char name[64];
        std::snprintf(name, sizeof name, "factor_%.2f_seed_%llu", factor, static_cast<unsigned long long>(seed));
        topts.out_dir = options.out_dir / name;
        std::filesystem::create_directories(topts.out_dir);
        save_run_config(cfg, topts.out_dir / "config.json");
      }
      const auto trained = train(data.train, data.val, cfg.model, cfg.train, topts);
      EvalOptions eval = options.eval;
      eval.seed = seed;
      const SweepRow row{factor, seed, score_and_evaluate(trained.best, data.test, cfg.attribution, seed, eval),
                         trained.record.selection_epoch};
      result.rows.push_back(row);
      runs.push_back(single_run_report(row.metrics));
      if (!topts.out_dir.empty()) save_report(runs.back(), topts.out_dir / "report.json");
      if (options.on_run) options.on_run(row);
    }
    result.per_factor.push_back({factor, aggregate_runs(runs)});
  }
  return result;
}

std::string sweep_table(const SweepResult& result) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-7s %-26s %-26s %-26s\n", "factor", "slice_roc_auc med [min,max]",
                "pixel_roc_auc med [min,max]", "dice_mean med [min,max]");
  out << line;
  for (const auto& f : result.per_factor) {
    const auto& r = f.report;
    std::snprintf(line, sizeof line, "%-7.2f %.4f [%.4f,%.4f]    %.4f [%.4f,%.4f]    %.4f [%.4f,%.4f]\n", f.factor,
                  r.slice_roc_auc.median, r.slice_roc_auc.min, r.slice_roc_auc.max, r.pixel_roc_auc.median,
                  r.pixel_roc_auc.min, r.pixel_roc_auc.max, r.dice_mean.median, r.dice_mean.min, r.dice_mean.max);
    out << line;
  }
  return out.str();
}

std::string sweep_csv(const SweepResult& result) {
  std::ostringstream out;
  out << "factor,seed,slice_roc_auc,pixel_roc_auc,dice_mean,selection_epoch\n";
  char line[160];
  for (const auto& r : result.rows) {
    std::snprintf(line, sizeof line, "%.4g,%llu,%.17g,%.17g,%.17g,%d\n", r.factor, static_cast<unsigned long long>(r.seed),
                  r.metrics.slice_roc_auc, r.metrics.pixel_roc_auc, r.metrics.dice_mean, r.selection_epoch);
    out << line;
  }
  return out.str();
}

std::string sweep_svg(const SweepResult& result) {
  PlotSeries dice{"Dice", "#1f77b4", {}, {}, {}, {}};
  PlotSeries auc{"pixel ROC-AUC", "#d62728", {}, {}, {}, {}};
  for (const auto& f : result.per_factor) {
    dice.x.push_back(f.factor);
    dice.median.push_back(f.report.dice_mean.median);
    dice.min.push_back(f.report.dice_mean.min);
    dice.max.push_back(f.report.dice_mean.max);
    auc.x.push_back(f.factor);
    auc.median.push_back(f.report.pixel_roc_auc.median);
    auc.min.push_back(f.report.pixel_roc_auc.min);
    auc.max.push_back(f.report.pixel_roc_auc.max);
  }
  return svg_band_plot({dice, auc}, "Dice and pixel ROC-AUC vs ceVAE factor", "ceVAE factor");
}

}  // namespace cevae
