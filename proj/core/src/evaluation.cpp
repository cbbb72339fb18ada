#include "hvfcast/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>

#include "hvfcast/error.hpp"
#include "hvfcast/seed.hpp"
#include "hvfcast/synthsim.hpp"
#include "json.hpp"

namespace hvfcast {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double clamp_db(double v) { return std::isnan(v) ? v : std::clamp(v, kMinDb, kMaxDb); }

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Per-pair error sums; metrics pool cells across pairs.
struct PairErrors {
  double abs_sum = 0.0;
  double sq_sum = 0.0;
  std::size_t cells = 0;
};

double pooled_mae(const std::vector<PairErrors>& e) {
  double a = 0.0;
  std::size_t n = 0;
  for (const auto& p : e) a += p.abs_sum, n += p.cells;
  return a / static_cast<double>(n);
}

double pooled_rmse(const std::vector<PairErrors>& e) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& p : e) s += p.sq_sum, n += p.cells;
  return std::sqrt(s / static_cast<double>(n));
}

double quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

// Percentile bootstrap over pairs for MAE and RMSE. The interval is widened
// to include the point estimate when resampling noise leaves it outside.
std::pair<Interval, Interval> bootstrap(const std::vector<PairErrors>& e, std::uint64_t seed, int resamples) {
  const double mae = pooled_mae(e), rmse = pooled_rmse(e);
  if (resamples < 1 || e.size() < 2) return {{mae, mae}, {rmse, rmse}};
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, e.size() - 1);
  std::vector<double> maes, rmses;
  std::vector<PairErrors> sample(e.size());
  for (int r = 0; r < resamples; ++r) {
    for (auto& s : sample) s = e[pick(rng)];
    maes.push_back(pooled_mae(sample));
    rmses.push_back(pooled_rmse(sample));
  }
  std::sort(maes.begin(), maes.end());
  std::sort(rmses.begin(), rmses.end());
  Interval a{quantile(maes, 0.025), quantile(maes, 0.975)};
  Interval b{quantile(rmses, 0.025), quantile(rmses, 0.975)};
  a.low = std::min(a.low, mae), a.high = std::max(a.high, mae);
  b.low = std::min(b.low, rmse), b.high = std::max(b.high, rmse);
  return {a, b};
}

PairErrors errors_of(const FieldValues& pred, const VisualField& target) {
  PairErrors e;
  for (const Cell c : build_mask(target.eye).cells()) {
    const double d = pred[c.index()] - target.at(c);
    e.abs_sum += std::abs(d);
    e.sq_sum += d * d;
    ++e.cells;
  }
  return e;
}

json interval_json(const Interval& i) { return {i.low, i.high}; }
Interval interval_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

std::string num(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

// ---- ensemble -----------------------------------------------------------------

FieldValues EnsembleForecast::exported() const {
  FieldValues out;
  std::transform(raw.begin(), raw.end(), out.begin(), clamp_db);
  return out;
}

std::vector<FieldValues> ensemble_predict_batch(const std::vector<const Model*>& models, const nn::Tensor& x) {
  if (models.empty()) throw DataError("ensemble_predict: no models");
  for (const Model* m : models)
    if (!m->spec.same_architecture(models.front()->spec))
      throw DataError("ensemble_predict: spec mismatch between " + m->spec.name() + " and " +
                      models.front()->spec.name());
  std::vector<nn::Tensor> outs;
  for (const Model* m : models) outs.push_back(infer(*m, x));

  const std::size_t n = x.dim(0);
  std::vector<FieldValues> res(n);
  std::vector<double> vals(models.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < kGridCells; ++c) {
      for (std::size_t k = 0; k < outs.size(); ++k) vals[k] = outs[k].ptr()[i * kGridCells + c];
      std::sort(vals.begin(), vals.end());
      double s = 0.0;
      for (double v : vals) s += v;
      res[i][c] = s / static_cast<double>(vals.size());
    }
  }
  return res;
}

EnsembleForecast ensemble_predict(const std::vector<const Model*>& models, const nn::Tensor& x,
                                  IntervalBin bin, std::size_t input) {
  nn::Tensor batch = x;
  if (x.shape().size() == 3) batch = x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)});
  if (batch.dim(0) != 1) throw ShapeError("ensemble_predict: expected a single input, got " + nn::shape_str(x.shape()));
  EnsembleForecast f;
  f.raw = ensemble_predict_batch(models, batch).front();
  // both eyes share the valid bitmap
  const auto& valid = build_mask(Eye::right).bitmap();
  for (std::size_t c = 0; c < kGridCells; ++c)
    if (!valid[c]) f.raw[c] = kNaN;
  f.model_count = models.size();
  f.bin = bin;
  f.input = input;
  return f;
}

std::vector<const Model*> LoadedChain::bin_models(IntervalBin b) const {
  std::vector<const Model*> out;
  for (const auto& m : models[b.index]) out.push_back(&m);
  return out;
}

LoadedChain load_chain(const std::filesystem::path& dir) {
  const auto result = dir / "result.json";
  if (!std::filesystem::exists(result)) throw DataError("no interval chain at " + dir.string());
  LoadedChain chain;
  const json meta = json::parse(read_file(result));
  chain.combo = FeatureCombo::parse(meta.at("combo").get<std::string>());
  for (int b = 0; b < kBinCount; ++b) {
    const IntervalBin bin{b};
    for (int f = 0; f < kFoldCount; ++f) {
      const auto p = dir / bin.label() / std::to_string(f);
      if (std::filesystem::exists(p / "manifest.json")) chain.models[b].push_back(load_weights(p));
    }
  }
  return chain;
}

// ---- statistics ---------------------------------------------------------------

Correlation pearson_adj_r2(const std::vector<std::pair<double, double>>& pairs) {
  const std::size_t n = pairs.size();
  if (n < 3) throw DataError("pearson_adj_r2: need at least 3 pairs");
  double mx = 0.0, my = 0.0;
  for (auto [x, y] : pairs) mx += x, my += y;
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (auto [x, y] : pairs) {
    sxy += (x - mx) * (y - my);
    sxx += (x - mx) * (x - mx);
    syy += (y - my) * (y - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw DataError("degenerate");
  Correlation c;
  c.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  const double nd = static_cast<double>(n);
  c.adj_r2 = 1.0 - (1.0 - c.r * c.r) * (nd - 1.0) / (nd - 2.0);
  if (std::abs(c.r) == 1.0) {
    c.p = 0.0;
  } else {
    const double t = std::abs(c.r) * std::sqrt((nd - 2.0) / (1.0 - c.r * c.r));
    boost::math::students_t dist(nd - 2.0);
    c.p = 2.0 * boost::math::cdf(boost::math::complement(dist, t));
  }
  return c;
}

Agreement bland_altman(const std::vector<std::pair<double, double>>& pairs) {
  const std::size_t n = pairs.size();
  if (n < 2) throw DataError("bland_altman: need at least 2 pairs");
  double mean = 0.0;
  for (auto [p, a] : pairs) mean += p - a;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (auto [p, a] : pairs) ss += (p - a - mean) * (p - a - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  return {mean, mean - 1.96 * sd, mean + 1.96 * sd};
}

// ---- baselines ----------------------------------------------------------------

std::string_view to_string(Baseline b) {
  switch (b) {
    case Baseline::copy: return "copy";
    case Baseline::pointwise_ols: return "pointwise_ols";
    case Baseline::pointwise_exp: return "pointwise_exp";
  }
  return "?";
}

Baseline parse_baseline(std::string_view s) {
  for (auto b : {Baseline::copy, Baseline::pointwise_ols, Baseline::pointwise_exp})
    if (to_string(b) == s) return b;
  throw DataError("unknown baseline '" + std::string(s) + "'");
}

FieldValues baseline_forecast(Baseline method, std::vector<HistoryPoint> history, double target_years) {
  std::stable_sort(history.begin(), history.end(),
                   [](const HistoryPoint& a, const HistoryPoint& b) { return a.years < b.years; });
  if (method == Baseline::copy) {
    if (history.empty()) throw DataError("copy baseline needs at least 1 field");
    FieldValues out = history.back().values;
    std::transform(out.begin(), out.end(), out.begin(), clamp_db);
    return out;
  }
  const bool distinct = !history.empty() && history.front().years != history.back().years;
  if (history.size() < 2 || !distinct)
    throw DataError(std::string(to_string(method)) + " baseline needs at least 2 fields with distinct dates");

  const bool log = method == Baseline::pointwise_exp;
  const double n = static_cast<double>(history.size());
  double mt = 0.0;
  for (const auto& h : history) mt += h.years;
  mt /= n;
  double stt = 0.0;
  for (const auto& h : history) stt += (h.years - mt) * (h.years - mt);

  FieldValues out;
  for (std::size_t c = 0; c < kGridCells; ++c) {
    double my = 0.0;
    bool present = true;
    for (const auto& h : history) {
      present = present && !std::isnan(h.values[c]);
      my += log ? std::log(h.values[c] + 1.0) : h.values[c];
    }
    if (!present) {
      out[c] = kNaN;
      continue;
    }
    my /= n;
    double sty = 0.0;
    for (const auto& h : history) sty += (h.years - mt) * ((log ? std::log(h.values[c] + 1.0) : h.values[c]) - my);
    const double y = my + sty / stt * (target_years - mt);
    out[c] = clamp_db(log ? std::exp(y) - 1.0 : y);
  }
  return out;
}

std::vector<HistoryPoint> history_of(const std::vector<VisualField>& fields, std::size_t input) {
  const auto& in = fields.at(input);
  std::vector<const VisualField*> series;
  for (const auto& f : fields)
    if (f.patient_id == in.patient_id && f.eye == in.eye && f.test_date <= in.test_date) series.push_back(&f);
  std::stable_sort(series.begin(), series.end(),
                   [](const VisualField* a, const VisualField* b) { return a->test_date < b->test_date; });
  std::vector<HistoryPoint> out;
  for (const auto* f : series) out.push_back({years_between(series.front()->test_date, f->test_date), f->values});
  return out;
}

// ---- test-set evaluation ------------------------------------------------------

MetricsReport evaluate_testset(const LoadedChain& chain, const std::vector<VisualField>& fields,
                               const std::vector<BinnedPair>& test_pairs, const EvalOptions& opts) {
  if (test_pairs.empty()) throw DataError("evaluate: no test pairs");
  MetricsReport rep;
  rep.bootstrap_seed = opts.bootstrap_seed;
  rep.bootstrap_resamples = opts.resamples;

  // Forecasts per pair in input order; bins are batched.
  std::vector<std::optional<FieldValues>> forecast(test_pairs.size());
  for (int b = 0; b < kBinCount; ++b) {
    const IntervalBin bin{b};
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < test_pairs.size(); ++i)
      if (test_pairs[i].bin == bin) rows.push_back(i);
    const auto models = chain.bin_models(bin);
    if (rows.empty() || models.empty()) continue;
    std::vector<nn::Tensor> xs;
    for (auto i : rows) xs.push_back(encode_input(fields[test_pairs[i].pair.input], chain.combo));
    const auto preds = ensemble_predict_batch(models, stack(xs));
    for (std::size_t k = 0; k < rows.size(); ++k) {
      FieldValues v = preds[k];
      std::transform(v.begin(), v.end(), v.begin(), clamp_db);
      forecast[rows[k]] = v;
    }
  }

  std::vector<PairErrors> all;
  std::array<std::vector<PairErrors>, kBinCount> by_bin;
  std::array<std::size_t, kBinCount> skipped_by_bin{};
  std::map<Baseline, std::pair<std::vector<PairErrors>, std::size_t>> base;
  const std::vector<Baseline> methods = {Baseline::copy, Baseline::pointwise_ols, Baseline::pointwise_exp};

  for (std::size_t i = 0; i < test_pairs.size(); ++i) {
    const auto& bp = test_pairs[i];
    if (!forecast[i]) {
      ++rep.skipped_pairs;
      ++skipped_by_bin[bp.bin.index];
      continue;
    }
    const VisualField& input = fields[bp.pair.input];
    const VisualField& target = fields[bp.pair.target];
    const auto e = errors_of(*forecast[i], target);
    all.push_back(e);
    by_bin[bp.bin.index].push_back(e);

    const auto norm = sim::normative_surface(target.age_years, target.eye);
    VisualField predicted = target;
    predicted.values = *forecast[i];
    rep.md.push_back({mean_deviation(predicted, norm), mean_deviation(target, norm),
                      mean_deviation(input, sim::normative_surface(input.age_years, input.eye)), bp.bin.center()});

    if (opts.baselines) {
      const auto hist = history_of(fields, bp.pair.input);
      const double t = hist.back().years + years_between(input.test_date, target.test_date);
      for (auto m : methods) {
        try {
          base[m].first.push_back(errors_of(baseline_forecast(m, hist, t), target));
        } catch (const DataError&) {
          ++base[m].second;
        }
      }
    }
  }
  rep.evaluated_pairs = all.size();
  if (all.empty()) throw DataError("evaluate: no test pair has a trained model for its bin");

  auto [mae_ci, rmse_ci] = bootstrap(all, opts.bootstrap_seed, opts.resamples);
  rep.mae = pooled_mae(all);
  rep.rmse = pooled_rmse(all);
  rep.mae_ci = mae_ci;
  rep.rmse_ci = rmse_ci;

  std::vector<std::pair<double, double>> md;
  for (const auto& r : rep.md) md.emplace_back(r.predicted, r.actual);
  try {
    rep.correlation = pearson_adj_r2(md);
  } catch (const DataError&) {
  }
  if (md.size() >= 2) rep.agreement = bland_altman(md);

  for (int b = 0; b < kBinCount; ++b) {
    if (by_bin[b].empty() && skipped_by_bin[b] == 0) continue;
    BinRow row;
    row.bin = IntervalBin{b}.center();
    row.pairs = by_bin[b].size();
    row.skipped = skipped_by_bin[b];
    if (!by_bin[b].empty()) {
      row.mae = pooled_mae(by_bin[b]);
      row.mae_ci =
          bootstrap(by_bin[b], derive_seed(opts.bootstrap_seed, "bootstrap-bin", {std::uint64_t(b)}), opts.resamples)
              .first;
    } else {
      row.mae = kNaN;
      row.mae_ci = {kNaN, kNaN};
    }
    rep.per_bin.push_back(row);
  }

  for (auto m : methods) {
    if (!base.count(m)) continue;
    const auto& [errs, skipped] = base[m];
    BaselineRow row{std::string(to_string(m)), errs.size(), skipped, kNaN, kNaN};
    if (!errs.empty()) row.mae = pooled_mae(errs), row.rmse = pooled_rmse(errs);
    rep.baselines.push_back(row);
  }
  return rep;
}

// ---- serialization --------------------------------------------------------------

std::string MetricsReport::to_json() const {
  auto opt = [](double v) { return std::isnan(v) ? json(nullptr) : json(v); };
  json j;
  j["reference"] = {{"mae_db", 2.47},
                    {"mae_db_alternate", 2.57},
                    {"rmse_db", 3.47},
                    {"md_pearson_r", 0.92},
                    {"md_adjusted_r2", 0.84},
                    {"bland_altman_mean_difference_db", 0.41}};
  j["evaluated_pairs"] = evaluated_pairs;
  j["skipped_pairs"] = skipped_pairs;
  j["bootstrap"] = {{"seed", bootstrap_seed}, {"resamples", bootstrap_resamples}, {"method", "percentile"}};
  j["mae"] = {{"value", mae}, {"ci95", interval_json(mae_ci)}};
  j["rmse"] = {{"value", rmse}, {"ci95", interval_json(rmse_ci)}};
  j["md_correlation"] = correlation ? json{{"r", correlation->r}, {"adjusted_r2", correlation->adj_r2},
                                           {"p", correlation->p}}
                                    : json(nullptr);
  j["bland_altman"] = agreement ? json{{"mean_difference", agreement->mean_difference},
                                       {"lower", agreement->lower},
                                       {"upper", agreement->upper}}
                                : json(nullptr);
  json rows = json::array();
  for (const auto& r : md) rows.push_back({r.predicted, r.actual, r.input, r.bin});
  j["md_pairs"] = {{"columns", {"predicted", "actual", "input", "bin"}}, {"rows", rows}};
  json bins = json::array();
  for (const auto& b : per_bin)
    bins.push_back({{"bin", b.bin},
                    {"pairs", b.pairs},
                    {"skipped", b.skipped},
                    {"mae", opt(b.mae)},
                    {"ci95", {opt(b.mae_ci.low), opt(b.mae_ci.high)}}});
  j["per_bin"] = bins;
  json base = json::array();
  for (const auto& b : baselines)
    base.push_back({{"method", b.method},
                    {"pairs", b.pairs},
                    {"skipped", b.skipped},
                    {"mae", opt(b.mae)},
                    {"rmse", opt(b.rmse)}});
  j["baselines"] = base;
  return j.dump(2) + "\n";
}

MetricsReport MetricsReport::from_json(std::string_view text) {
  auto num_or_nan = [](const json& v) { return v.is_null() ? kNaN : v.get<double>(); };
  try {
    const json j = json::parse(text);
    MetricsReport r;
    r.evaluated_pairs = j.at("evaluated_pairs").get<std::size_t>();
    r.skipped_pairs = j.at("skipped_pairs").get<std::size_t>();
    r.bootstrap_seed = j.at("bootstrap").at("seed").get<std::uint64_t>();
    r.bootstrap_resamples = j.at("bootstrap").at("resamples").get<int>();
    r.mae = j.at("mae").at("value").get<double>();
    r.mae_ci = interval_from(j.at("mae").at("ci95"));
    r.rmse = j.at("rmse").at("value").get<double>();
    r.rmse_ci = interval_from(j.at("rmse").at("ci95"));
    if (const auto& c = j.at("md_correlation"); !c.is_null())
      r.correlation = Correlation{c.at("r").get<double>(), c.at("adjusted_r2").get<double>(), c.at("p").get<double>()};
    if (const auto& a = j.at("bland_altman"); !a.is_null())
      r.agreement = Agreement{a.at("mean_difference").get<double>(), a.at("lower").get<double>(),
                              a.at("upper").get<double>()};
    for (const auto& row : j.at("md_pairs").at("rows"))
      r.md.push_back({row.at(0).get<double>(), row.at(1).get<double>(), row.at(2).get<double>(),
                      row.at(3).get<double>()});
    for (const auto& b : j.at("per_bin"))
      r.per_bin.push_back({b.at("bin").get<double>(), b.at("pairs").get<std::size_t>(),
                           b.at("skipped").get<std::size_t>(), num_or_nan(b.at("mae")),
                           {num_or_nan(b.at("ci95").at(0)), num_or_nan(b.at("ci95").at(1))}});
    for (const auto& b : j.at("baselines"))
      r.baselines.push_back({b.at("method").get<std::string>(), b.at("pairs").get<std::size_t>(),
                             b.at("skipped").get<std::size_t>(), num_or_nan(b.at("mae")), num_or_nan(b.at("rmse"))});
    return r;
  } catch (const json::exception& e) {
    throw ParseError(std::string("report: ") + e.what());
  }
}

std::string MetricsReport::md_scatter_csv() const {
  std::string out = "predicted_md,actual_md,input_md,bin\n";
  for (const auto& r : md) out += num(r.predicted) + "," + num(r.actual) + "," + num(r.input) + "," + num(r.bin) + "\n";
  return out;
}

std::string MetricsReport::bland_altman_csv() const {
  std::string out = "mean_md,difference,bin\n";
  for (const auto& r : md)
    out += num((r.predicted + r.actual) / 2.0) + "," + num(r.predicted - r.actual) + "," + num(r.bin) + "\n";
  return out;
}

std::string MetricsReport::per_bin_csv() const {
  std::string out = "bin,pairs,skipped,mae,ci_low,ci_high\n";
  for (const auto& b : per_bin)
    out += num(b.bin) + "," + std::to_string(b.pairs) + "," + std::to_string(b.skipped) + "," + num(b.mae) + "," +
           num(b.mae_ci.low) + "," + num(b.mae_ci.high) + "\n";
  return out;
}

// One long table; `table` names the plot each row belongs to.
std::string MetricsReport::to_csv() const {
  std::string out = "table,bin,predicted_md,actual_md,input_md,mean_md,difference,pairs,mae,ci_low,ci_high\n";
  for (const auto& r : md)
    out += "md_scatter," + num(r.bin) + "," + num(r.predicted) + "," + num(r.actual) + "," + num(r.input) + ",,,,,,\n";
  for (const auto& r : md)
    out += "bland_altman," + num(r.bin) + ",,,," + num((r.predicted + r.actual) / 2.0) + "," +
           num(r.predicted - r.actual) + ",,,,\n";
  for (const auto& b : per_bin)
    out += "per_bin_mae," + num(b.bin) + ",,,,,," + std::to_string(b.pairs) + "," + num(b.mae) + "," +
           num(b.mae_ci.low) + "," + num(b.mae_ci.high) + "\n";
  return out;
}

}  // namespace hvfcast
