#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hvfcast/architectures.hpp"
#include "hvfcast/domain.hpp"
#include "hvfcast/pipeline.hpp"

namespace hvfcast {

using FieldValues = std::array<double, kGridCells>;

struct EnsembleForecast {
  FieldValues raw;  // NaN outside the mask
  std::size_t model_count = 0;
  IntervalBin bin;
  std::size_t input = 0;

  FieldValues exported() const;  // clamped to [0, 50]
};

// Mean over models per cell. Values are sorted before summation so the
// result is bit-identical for any model order. Cells outside the mask are NaN.
EnsembleForecast ensemble_predict(const std::vector<const Model*>& models, const nn::Tensor& x,
                                  IntervalBin bin = {}, std::size_t input = 0);

// Batched form: x is (N, C, 8, 9), one forecast per row.
std::vector<FieldValues> ensemble_predict_batch(const std::vector<const Model*>& models, const nn::Tensor& x);

struct LoadedChain {
  FeatureCombo combo;
  std::array<std::vector<Model>, kBinCount> models;  // per bin, ascending fold

  std::vector<const Model*> bin_models(IntervalBin b) const;
};

// Reads runs/intervals (the directory written by train_interval_chain).
LoadedChain load_chain(const std::filesystem::path& intervals_dir);

struct Interval {
  double low = 0.0;
  double high = 0.0;
};

struct Correlation {
  double r = 0.0;
  double adj_r2 = 0.0;
  double p = 0.0;
};

struct Agreement {
  double mean_difference = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

Correlation pearson_adj_r2(const std::vector<std::pair<double, double>>& pairs);
Agreement bland_altman(const std::vector<std::pair<double, double>>& pairs);

enum class Baseline { copy, pointwise_ols, pointwise_exp };
std::string_view to_string(Baseline b);
Baseline parse_baseline(std::string_view s);

struct HistoryPoint {
  double years = 0.0;
  FieldValues values;
};

FieldValues baseline_forecast(Baseline method, std::vector<HistoryPoint> history, double target_years);

// Fields of the same (patient, eye) dated up to and including `input`,
// with times measured from the first of them.
std::vector<HistoryPoint> history_of(const std::vector<VisualField>& fields, std::size_t input);

struct MdRow {
  double predicted = 0.0;
  double actual = 0.0;
  double input = 0.0;
  double bin = 0.0;
};

struct BinRow {
  double bin = 0.0;
  std::size_t pairs = 0;
  std::size_t skipped = 0;
  double mae = 0.0;
  Interval mae_ci;
};

struct BaselineRow {
  std::string method;
  std::size_t pairs = 0;
  std::size_t skipped = 0;  // not enough history
  double mae = 0.0;
  double rmse = 0.0;
};

struct MetricsReport {
  std::size_t evaluated_pairs = 0;
  std::size_t skipped_pairs = 0;
  double mae = 0.0;
  Interval mae_ci;
  double rmse = 0.0;
  Interval rmse_ci;
  std::vector<MdRow> md;
  std::optional<Correlation> correlation;  // absent when degenerate
  std::optional<Agreement> agreement;
  std::vector<BinRow> per_bin;
  std::vector<BaselineRow> baselines;
  std::uint64_t bootstrap_seed = 0;
  int bootstrap_resamples = 1000;

  std::string to_json() const;
  static MetricsReport from_json(std::string_view text);
  std::string to_csv() const;
  std::string md_scatter_csv() const;
  std::string bland_altman_csv() const;
  std::string per_bin_csv() const;
};

struct EvalOptions {
  std::uint64_t bootstrap_seed = 0;
  int resamples = 1000;
  bool baselines = true;
};

MetricsReport evaluate_testset(const LoadedChain& chain, const std::vector<VisualField>& fields,
                               const std::vector<BinnedPair>& test_pairs, const EvalOptions& opts = {});

}  // namespace hvfcast
