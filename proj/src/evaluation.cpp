#include "cevae/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "cevae/errors.hpp"

namespace cevae {

std::vector<std::uint8_t> slice_labels(std::span<const SliceSample> samples) {
  std::vector<std::uint8_t> labels;
  labels.reserve(samples.size());
  for (const auto& s : samples) labels.push_back(s.has_anomaly() ? 1 : 0);
  return labels;
}

double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("roc_auc: scores and labels differ in length");
  std::int64_t n_pos = 0;
  for (auto l : labels) n_pos += l ? 1 : 0;
  const std::int64_t n_neg = static_cast<std::int64_t>(labels.size()) - n_pos;
  if (n_pos == 0 || n_neg == 0) throw UndefinedMetricError("roc_auc: both classes must be present");
  for (double s : scores)
    if (std::isnan(s)) throw std::invalid_argument("roc_auc: NaN score");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Twice the positive rank sum; midranks of tie groups are half-integers.
  std::int64_t twice_rank_sum = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    std::int64_t pos_in_group = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) pos_in_group += labels[order[j++]] ? 1 : 0;
    const auto first = static_cast<std::int64_t>(i) + 1, last = static_cast<std::int64_t>(j);
    twice_rank_sum += pos_in_group * (first + last);
    i = j;
  }
  const std::int64_t twice_u = twice_rank_sum - n_pos * (n_pos + 1);
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

namespace {

struct Overlap {
  std::int64_t pred = 0, gt = 0, both = 0;

  double dice() const { return pred + gt == 0 ? 1.0 : 2.0 * static_cast<double>(both) / static_cast<double>(pred + gt); }
};

// Linear-interpolated quantile of sorted values.
double quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

double dice(const Mask& pred, const Mask& gt) {
  if (!pred.same_shape(gt)) throw std::invalid_argument("dice: mask shapes differ");
  Overlap o;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred.values[i] != 0, g = gt.values[i] != 0;
    o.pred += p;
    o.gt += g;
    o.both += p && g;
  }
  return o.dice();
}

double dice_cv(std::span<const Grid<double>> score_maps, std::span<const Mask> gt_masks,
               std::span<const std::string> patient_ids, Rng& rng, const DiceCvOptions& options) {
  if (score_maps.size() != gt_masks.size() || score_maps.size() != patient_ids.size())
    throw std::invalid_argument("dice_cv: inputs differ in length");
  if (options.folds < 2 || options.quantiles < 2) throw std::invalid_argument("dice_cv: need >= 2 folds and quantiles");
  for (std::size_t i = 0; i < score_maps.size(); ++i)
    if (!score_maps[i].same_shape(gt_masks[i])) throw std::invalid_argument("dice_cv: map and mask shapes differ");

  std::map<std::string, std::vector<std::size_t>> by_patient;
  for (std::size_t i = 0; i < patient_ids.size(); ++i) by_patient[patient_ids[i]].push_back(i);
  if (static_cast<int>(by_patient.size()) < options.folds)
    throw std::invalid_argument("dice_cv: fewer patients (" + std::to_string(by_patient.size()) + ") than folds (" +
                                std::to_string(options.folds) + ")");

  std::vector<const std::vector<std::size_t>*> patients;
  for (const auto& [id, slices] : by_patient) patients.push_back(&slices);
  std::shuffle(patients.begin(), patients.end(), rng);
  std::vector<std::vector<std::size_t>> folds(static_cast<std::size_t>(options.folds));
  for (std::size_t p = 0; p < patients.size(); ++p) folds[p % folds.size()].push_back(p);

  auto patient_dice = [&](std::size_t p, double threshold) {
    Overlap o;
    for (std::size_t s : *patients[p]) {
      const auto& map = score_maps[s];
      const auto& gt = gt_masks[s];
      for (std::size_t i = 0; i < map.size(); ++i) {
        const bool pr = map.values[i] > threshold, g = gt.values[i] != 0;
        o.pred += pr;
        o.gt += g;
        o.both += pr && g;
      }
    }
    return o.dice();
  };
  auto mean_dice = [&](const std::vector<std::size_t>& members, double threshold) {
    double acc = 0.0;
    for (std::size_t p : members) acc += patient_dice(p, threshold);
    return acc / static_cast<double>(members.size());
  };

  double total = 0.0;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    std::vector<double> pooled;
    for (std::size_t p : folds[f])
      for (std::size_t s : *patients[p]) pooled.insert(pooled.end(), score_maps[s].values.begin(), score_maps[s].values.end());
    std::sort(pooled.begin(), pooled.end());
    std::vector<double> candidates(static_cast<std::size_t>(options.quantiles));
    std::vector<double> fold_dice(candidates.size());
    for (std::size_t q = 0; q < candidates.size(); ++q)
      candidates[q] = quantile(pooled, static_cast<double>(q) / static_cast<double>(candidates.size() - 1));
#pragma omp parallel for schedule(dynamic)
    for (std::size_t q = 0; q < candidates.size(); ++q) fold_dice[q] = mean_dice(folds[f], candidates[q]);
    const auto best = static_cast<std::size_t>(std::max_element(fold_dice.begin(), fold_dice.end()) - fold_dice.begin());

    std::vector<std::size_t> rest;
    for (std::size_t g = 0; g < folds.size(); ++g)
      if (g != f) rest.insert(rest.end(), folds[g].begin(), folds[g].end());
    total += mean_dice(rest, candidates[best]);
  }
  return total / static_cast<double>(folds.size());
}

Metrics evaluate_run(std::span<const SliceSample> samples, std::span<const double> sample_scores,
                     std::span<const Grid<double>> score_maps, const EvalOptions& options) {
  if (samples.size() != sample_scores.size() || samples.size() != score_maps.size())
    throw std::invalid_argument("evaluate_run: samples, scores and maps differ in length");
  Metrics m;
  m.slice_roc_auc = roc_auc(sample_scores, slice_labels(samples));

  std::vector<Mask> masks;
  std::vector<std::string> ids;
  masks.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& img = samples[i].image;
    masks.push_back(samples[i].mask ? *samples[i].mask : Mask(img.rows, img.cols));
    if (!score_maps[i].same_shape(masks.back()))
      throw std::invalid_argument("evaluate_run: score map shape differs from mask for " + samples[i].patient_id);
    ids.push_back(samples[i].patient_id);
  }

  if (options.pixel_auc_per_slice) {
    double acc = 0.0;
    int counted = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const bool any = std::any_of(masks[i].values.begin(), masks[i].values.end(), [](auto v) { return v != 0; });
      const bool all = std::all_of(masks[i].values.begin(), masks[i].values.end(), [](auto v) { return v != 0; });
      if (!any || all) continue;
      acc += roc_auc(score_maps[i].values, masks[i].values);
      ++counted;
    }
    if (counted == 0) throw UndefinedMetricError("evaluate_run: no slice has both pixel classes");
    m.pixel_roc_auc = acc / counted;
  } else {
    std::vector<double> pixels;
    std::vector<std::uint8_t> pixel_labels;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      pixels.insert(pixels.end(), score_maps[i].values.begin(), score_maps[i].values.end());
      for (auto v : masks[i].values) pixel_labels.push_back(v ? 1 : 0);
    }
    m.pixel_roc_auc = roc_auc(pixels, pixel_labels);
  }

  Rng rng(derive_seed(options.seed, 0xd1ceULL));
  m.dice_mean = dice_cv(score_maps, masks, ids, rng, options.dice);
  return m;
}

namespace {

MetricSummary summarize(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  return {values[(values.size() - 1) / 2], values.front(), values.back()};
}

}  // namespace

EvalReport single_run_report(const Metrics& metrics) {
  const EvalReport one{metrics, {metrics}, {}, {}, {}};
  return aggregate_runs(std::span<const EvalReport>(&one, 1));
}

EvalReport aggregate_runs(std::span<const EvalReport> reports) {
  if (reports.empty()) throw std::invalid_argument("aggregate_runs: no reports");
  EvalReport out;
  for (const auto& r : reports) out.per_run.insert(out.per_run.end(), r.per_run.begin(), r.per_run.end());
  if (out.per_run.empty()) throw std::invalid_argument("aggregate_runs: reports contain no runs");
  std::vector<double> s, p, d;
  for (const auto& m : out.per_run) {
    s.push_back(m.slice_roc_auc);
    p.push_back(m.pixel_roc_auc);
    d.push_back(m.dice_mean);
  }
  out.slice_roc_auc = summarize(s);
  out.pixel_roc_auc = summarize(p);
  out.dice_mean = summarize(d);
  out.metrics = {out.slice_roc_auc.median, out.pixel_roc_auc.median, out.dice_mean.median};
  return out;
}

namespace {

nlohmann::json metrics_json(const Metrics& m) {
  return {{"slice_roc_auc", m.slice_roc_auc}, {"pixel_roc_auc", m.pixel_roc_auc}, {"dice_mean", m.dice_mean}};
}

nlohmann::json summary_json(const MetricSummary& s) { return {{"median", s.median}, {"min", s.min}, {"max", s.max}}; }

Metrics metrics_from(const nlohmann::json& j) {
  return {j.at("slice_roc_auc").get<double>(), j.at("pixel_roc_auc").get<double>(), j.at("dice_mean").get<double>()};
}

MetricSummary summary_from(const nlohmann::json& j) {
  return {j.at("median").get<double>(), j.at("min").get<double>(), j.at("max").get<double>()};
}

}  // namespace

nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& m : report.per_run) runs.push_back(metrics_json(m));
  nlohmann::json j = metrics_json(report.metrics);
  j["per_run"] = runs;
  j["aggregate"] = {{"slice_roc_auc", summary_json(report.slice_roc_auc)},
                    {"pixel_roc_auc", summary_json(report.pixel_roc_auc)},
                    {"dice_mean", summary_json(report.dice_mean)}};
  return j;
}

EvalReport report_from_json(const nlohmann::json& j) {
  try {
    EvalReport r;
    r.metrics = metrics_from(j);
    for (const auto& m : j.at("per_run")) r.per_run.push_back(metrics_from(m));
    const auto& agg = j.at("aggregate");
    r.slice_roc_auc = summary_from(agg.at("slice_roc_auc"));
    r.pixel_roc_auc = summary_from(agg.at("pixel_roc_auc"));
    r.dice_mean = summary_from(agg.at("dice_mean"));
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("eval report: ") + e.what());
  }
}

void save_report(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json(report).dump(2) << '\n';
}

EvalReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return report_from_json(j);
}

std::string format_table(const EvalReport& report) {
  std::ostringstream out;
  char line[128];
  std::snprintf(line, sizeof line, "%-14s %8s %8s %8s\n", "metric", "median", "min", "max");
  out << line;
  const std::pair<const char*, const MetricSummary*> rows[] = {
      {"slice_roc_auc", &report.slice_roc_auc}, {"pixel_roc_auc", &report.pixel_roc_auc}, {"dice_mean", &report.dice_mean}};
  for (const auto& [name, s] : rows) {
    std::snprintf(line, sizeof line, "%-14s %8.4f %8.4f %8.4f\n", name, s->median, s->min, s->max);
    out << line;
  }
  out << "runs: " << report.per_run.size() << '\n';
  return out.str();
}

}  // namespace cevae
