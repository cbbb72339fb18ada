#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hvfcast/architectures.hpp"
#include "hvfcast/pipeline.hpp"

namespace hvfcast {

struct TrainConfig {
  int epochs = 60;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  std::array<std::size_t, 3> widths{8, 16, 24};
  std::size_t fc_hidden = 2048;
  // Keep the best-validation epoch's weights; false keeps the last epoch.
  bool freeze_best = true;

  static TrainConfig paper_scale();
  void validate() const;
  std::string to_json() const;
};

// Inputs/targets for a set of pairs, ready for batching.
struct EncodedSet {
  nn::Tensor inputs;   // (N, C, 8, 9)
  nn::Tensor targets;  // (N, 1, 8, 9)
  std::vector<bool> mask;  // 72 flags per sample, from the target eye

  std::size_t size() const { return inputs.empty() ? 0 : inputs.dim(0); }
};

EncodedSet encode_pairs(const std::vector<VisualField>& fields, const std::vector<FieldPair>& pairs,
                        const FeatureCombo& combo);

// Masked MAE over the whole set in infer mode, batch by batch in order.
double evaluate_mae(const Model& m, const EncodedSet& set, std::size_t batch_size = 32);

struct WeightsSnapshot {
  std::vector<nn::Tensor> params;
  std::vector<nn::BatchNormState> bn;

  static WeightsSnapshot of(const Model& m);
  void restore(Model& m) const;
};

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> val_mae;
  int best_epoch = 0;  // 1-based; 0 means the initial weights
  double best_val_mae = 0.0;
  std::string initial_hash;
  std::string best_hash;
  std::uint64_t shuffle_seed = 0;
  std::optional<WeightsSnapshot> best_weights;

  std::string to_json() const;  // excludes weights
};

// Mini-batch Adam on masked MAE with per-epoch validation. On return the
// model holds the frozen weights (best epoch by default). Non-finite loss
// restores the last good snapshot and throws DivergenceError.
TrainHistory train_model(Model& m, const EncodedSet& train, const EncodedSet& val, const TrainConfig& cfg,
                         std::uint64_t shuffle_seed);

// Inputs shared by every phase.
struct Experiment {
  const std::vector<VisualField>& fields;
  std::vector<BinnedPair> pairs;  // all binned pairs of the dataset
  const SplitPlan& plan;

  Experiment(const std::vector<VisualField>& f, const SplitPlan& p);
  // holds references; temporaries would dangle
  Experiment(std::vector<VisualField>&&, const SplitPlan&) = delete;
  Experiment(const std::vector<VisualField>&, SplitPlan&&) = delete;
  // Pairs of `bin` on the training side, split into fold `fold`'s
  // validation pairs and the other folds' training pairs.
  std::pair<std::vector<FieldPair>, std::vector<FieldPair>> fold_pairs(IntervalBin bin, int fold) const;
  std::vector<FieldPair> test_pairs(IntervalBin bin) const;
  std::vector<BinnedPair> test_pairs() const;
};

struct RunOptions {
  std::filesystem::path out_dir;  // empty: no checkpoints written
  int workers = 1;
};

struct PhaseResult {
  std::string phase;
  std::vector<std::string> candidates;
  // [candidate][fold] best validation MAE; NaN marks a failed cell.
  std::vector<std::array<double, kFoldCount>> best_val;
  std::vector<std::array<TrainHistory, kFoldCount>> histories;
  std::string winner;

  double mean_of(std::size_t candidate) const;
  bool complete(std::size_t candidate) const;
  std::string to_json() const;
};

// Lowest mean of per-fold minima over complete candidates; ties go to the
// lexicographically smallest name.
std::string pick_winner(const std::vector<std::string>& names,
                        const std::vector<std::array<double, kFoldCount>>& best_val);

// Every candidate trained once per fold on bin 1.0 with HVF-only input.
PhaseResult select_architecture(const std::vector<ModelSpec>& candidates, const Experiment& ex,
                                const TrainConfig& cfg, const RunOptions& opts);

PhaseResult select_features(const ModelSpec& arch, const std::vector<FeatureCombo>& combos, const Experiment& ex,
                            const TrainConfig& cfg, const RunOptions& opts);

struct ChainCell {
  bool trained = false;  // false: recorded gap (no pairs for this fold/bin)
  std::string initial_hash;
  std::string best_hash;
  double best_val_mae = 0.0;
  int best_epoch = 0;
};

struct ChainResult {
  ModelSpec spec;
  FeatureCombo combo;
  std::array<std::array<ChainCell, kBinCount>, kFoldCount> cells;  // [fold][bin]
  std::array<std::array<std::optional<Model>, kBinCount>, kFoldCount> models;

  std::size_t trained_count() const;
  std::string to_json() const;
};

struct ChainOptions {
  // Seeds each fold's bin-1.0 model from <dir>/<fold>/ instead of fresh
  // initialization (e.g. the feature phase's checkpoints).
  std::optional<std::filesystem::path> init_from;
  bool keep_models = true;
};

ChainResult train_interval_chain(const ModelSpec& arch, const FeatureCombo& combo, const Experiment& ex,
                                 const TrainConfig& cfg, const RunOptions& opts, const ChainOptions& chain = {});

// Spec of the model a phase job trains: architecture with the config's
// widths/batch/lr and the combo's channel count.
ModelSpec job_spec(const ModelSpec& arch, const FeatureCombo& combo, const TrainConfig& cfg, std::uint64_t seed);

}  // namespace hvfcast
