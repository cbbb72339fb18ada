#include "hvfcast/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

#include "hvfcast/error.hpp"
#include "hvfcast/seed.hpp"
#include "json.hpp"

namespace hvfcast {

using nlohmann::json;
using nn::Shape;
using nn::Tensor;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Runs fn(0..n-1) on up to `workers` threads. Each job writes only its own
// result slot, so the outcome does not depend on the worker count. The
// first exception (by job index) is rethrown after all workers finish.
template <class Fn>
void run_jobs(std::size_t n, int workers, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto count = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(workers, 1)));
  if (count <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < count; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << text;
  }
  std::filesystem::rename(tmp, path);
}

Tensor gather(const Tensor& src, const std::vector<std::size_t>& rows, std::size_t begin, std::size_t end) {
  Shape s = src.shape();
  s[0] = end - begin;
  Tensor out(s);
  const std::size_t stride = src.size() / src.dim(0);
  for (std::size_t i = begin; i < end; ++i)
    std::copy_n(src.ptr() + rows[i] * stride, stride, out.ptr() + (i - begin) * stride);
  return out;
}

std::vector<bool> gather_mask(const std::vector<bool>& mask, const std::vector<std::size_t>& rows, std::size_t begin,
                              std::size_t end) {
  std::vector<bool> out;
  out.reserve((end - begin) * kGridCells);
  for (std::size_t i = begin; i < end; ++i)
    out.insert(out.end(), mask.begin() + rows[i] * kGridCells, mask.begin() + (rows[i] + 1) * kGridCells);
  return out;
}

void checkpoint(const Model& m, const TrainHistory& h, const std::filesystem::path& dir, const Provenance& prov,
                const TrainConfig& cfg, std::uint64_t init_seed) {
  save_weights(m, dir, prov);
  json j = json::parse(h.to_json());
  j["phase"] = prov.phase;
  j["candidate"] = prov.candidate;
  j["fold"] = prov.fold;
  j["seeds"] = {{"root", cfg.seed}, {"init", init_seed}, {"shuffle", h.shuffle_seed}};
  j["config"] = json::parse(cfg.to_json());
  write_text(dir / "history.json", j.dump(2) + "\n");
}

std::uint64_t select_init_seed(const TrainConfig& cfg, int fold) {
  return derive_seed(cfg.seed, "select-init", {static_cast<std::uint64_t>(fold)});
}
std::uint64_t select_shuffle_seed(const TrainConfig& cfg, int fold) {
  return derive_seed(cfg.seed, "select-shuffle", {static_cast<std::uint64_t>(fold)});
}

}  // namespace

// ---- config -------------------------------------------------------------------

TrainConfig TrainConfig::paper_scale() {
  TrainConfig c;
  c.epochs = 1000;
  c.widths = {64, 128, 256};
  return c;
}

void TrainConfig::validate() const {
  if (epochs < 0) throw DataError("train config: epochs must be >= 0");
  if (batch_size < 1) throw DataError("train config: batch_size must be >= 1");
  if (!(lr > 0.0)) throw DataError("train config: lr must be positive");
  for (auto w : widths)
    if (w < 1) throw DataError("train config: widths must be positive");
}

std::string TrainConfig::to_json() const {
  json j = {{"epochs", epochs}, {"batch_size", batch_size}, {"lr", lr},        {"seed", seed},
            {"widths", widths}, {"fc_hidden", fc_hidden},   {"freeze_best", freeze_best}};
  return j.dump();
}

ModelSpec job_spec(const ModelSpec& arch, const FeatureCombo& combo, const TrainConfig& cfg, std::uint64_t seed) {
  ModelSpec s = arch;
  s.widths = cfg.widths;
  s.fc_hidden = cfg.fc_hidden;
  s.batch_size = cfg.batch_size;
  s.lr = cfg.lr;
  s.in_channels = combo.channels();
  s.seed = seed;
  return s;
}

// ---- data ---------------------------------------------------------------------

EncodedSet encode_pairs(const std::vector<VisualField>& fields, const std::vector<FieldPair>& pairs,
                        const FeatureCombo& combo) {
  EncodedSet set;
  if (pairs.empty()) return set;
  const std::size_t C = combo.channels(), P = kGridCells;
  set.inputs = Tensor(Shape{pairs.size(), C, kGridRows, kGridCols});
  set.targets = Tensor(Shape{pairs.size(), 1, kGridRows, kGridCols});
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const Tensor x = encode_input(fields[pairs[i].input], combo);
    std::copy_n(x.ptr(), C * P, set.inputs.ptr() + i * C * P);
    const auto t = encode_target(fields[pairs[i].target]);
    std::copy_n(t.grid.ptr(), P, set.targets.ptr() + i * P);
    set.mask.insert(set.mask.end(), t.mask.begin(), t.mask.end());
  }
  return set;
}

double evaluate_mae(const Model& m, const EncodedSet& set, std::size_t batch_size) {
  if (set.size() == 0) throw DataError("evaluate_mae: empty set");
  std::vector<std::size_t> rows(set.size());
  std::iota(rows.begin(), rows.end(), 0);
  double weighted = 0.0;
  for (std::size_t b = 0; b < rows.size(); b += batch_size) {
    const std::size_t e = std::min(rows.size(), b + batch_size);
    const Tensor pred = infer(m, gather(set.inputs, rows, b, e));
    weighted += nn::masked_mae_value(pred, gather(set.targets, rows, b, e),
                                     gather_mask(set.mask, rows, b, e)) * static_cast<double>(e - b);
  }
  return weighted / static_cast<double>(set.size());
}

WeightsSnapshot WeightsSnapshot::of(const Model& m) {
  WeightsSnapshot s;
  for (const auto& p : m.params.entries()) s.params.push_back(p.value);
  s.bn = m.bn_states;
  return s;
}

void WeightsSnapshot::restore(Model& m) const {
  for (std::size_t i = 0; i < params.size(); ++i) m.params.entries()[i].value = params[i];
  m.bn_states = bn;
}

std::string TrainHistory::to_json() const {
  json j = {{"train_loss", train_loss},     {"val_mae", val_mae},
            {"best_epoch", best_epoch},     {"best_val_mae", best_val_mae},
            {"initial_weights_hash", initial_hash}, {"best_weights_hash", best_hash}};
  return j.dump();
}

TrainHistory train_model(Model& m, const EncodedSet& train, const EncodedSet& val, const TrainConfig& cfg,
                         std::uint64_t shuffle_seed) {
  cfg.validate();
  if (train.size() == 0 || val.size() == 0) throw DataError("train_model: empty training or validation set");
  if (train.inputs.dim(1) != m.spec.in_channels)
    throw ShapeError("train_model: encoded inputs have " + std::to_string(train.inputs.dim(1)) +
                     " channels, model expects " + std::to_string(m.spec.in_channels));

  TrainHistory h;
  h.shuffle_seed = shuffle_seed;
  h.initial_hash = weights_hash(m);
  m.optimizer.lr = cfg.lr;
  WeightsSnapshot best = WeightsSnapshot::of(m);
  h.best_val_mae = std::numeric_limits<double>::infinity();
  if (cfg.epochs == 0) h.best_val_mae = evaluate_mae(m, val, cfg.batch_size);

  std::mt19937_64 rng(shuffle_seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), b + cfg.batch_size);
      nn::Tape tape;
      nn::Var x = tape.constant(gather(train.inputs, order, b, e));
      nn::Var loss = nn::masked_mae(forward(m, tape, x, nn::Mode::train), gather(train.targets, order, b, e),
                                  gather_mask(train.mask, order, b, e));
      const double lv = loss.value()[0];
      if (!std::isfinite(lv)) {
        best.restore(m);
        throw DivergenceError("divergence: non-finite training loss at epoch " + std::to_string(epoch));
      }
      tape.backward(loss);
      try {
        nn::adam_step(m.params, m.optimizer);
      } catch (const DivergenceError&) {
        best.restore(m);
        throw;
      }
      loss_sum += lv * static_cast<double>(e - b);
    }
    h.train_loss.push_back(loss_sum / static_cast<double>(order.size()));
    const double v = evaluate_mae(m, val, cfg.batch_size);
    if (!std::isfinite(v)) {
      best.restore(m);
      throw DivergenceError("divergence: non-finite validation MAE at epoch " + std::to_string(epoch));
    }
    h.val_mae.push_back(v);
    if (v < h.best_val_mae) {
      h.best_val_mae = v;
      h.best_epoch = epoch;
      best = WeightsSnapshot::of(m);
    }
  }
  if (cfg.freeze_best) best.restore(m);
  h.best_hash = weights_hash(m);
  h.best_weights = std::move(best);
  return h;
}

// ---- experiment ---------------------------------------------------------------

Experiment::Experiment(const std::vector<VisualField>& f, const SplitPlan& p)
    : fields(f), pairs(make_binned_pairs(f)), plan(p) {}

std::pair<std::vector<FieldPair>, std::vector<FieldPair>> Experiment::fold_pairs(IntervalBin bin, int fold) const {
  std::vector<FieldPair> train, val;
  for (const auto& bp : pairs) {
    if (bp.bin != bin) continue;
    const int side = plan.side_of(fields[bp.pair.input].patient_id);
    if (side < 0) continue;
    (side == fold ? val : train).push_back(bp.pair);
  }
  return {std::move(train), std::move(val)};
}

std::vector<FieldPair> Experiment::test_pairs(IntervalBin bin) const {
  std::vector<FieldPair> out;
  for (const auto& bp : pairs)
    if (bp.bin == bin && plan.side_of(fields[bp.pair.input].patient_id) == SplitPlan::kTestSide)
      out.push_back(bp.pair);
  return out;
}

std::vector<BinnedPair> Experiment::test_pairs() const {
  std::vector<BinnedPair> out;
  for (const auto& bp : pairs)
    if (plan.side_of(fields[bp.pair.input].patient_id) == SplitPlan::kTestSide) out.push_back(bp);
  return out;
}

// ---- selection phases ------------------------------------------------------------

double PhaseResult::mean_of(std::size_t c) const {
  double s = 0.0;
  for (double v : best_val[c]) s += v;
  return s / kFoldCount;
}

bool PhaseResult::complete(std::size_t c) const {
  return std::none_of(best_val[c].begin(), best_val[c].end(), [](double v) { return std::isnan(v); });
}

std::string pick_winner(const std::vector<std::string>& names,
                        const std::vector<std::array<double, kFoldCount>>& best_val) {
  std::string winner;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < names.size(); ++c) {
    double s = 0.0;
    bool complete = true;
    for (double v : best_val[c]) {
      complete = complete && !std::isnan(v);
      s += v;
    }
    if (!complete) continue;
    const double mean = s / kFoldCount;
    if (winner.empty() || mean < best || (mean == best && names[c] < winner)) {
      best = mean;
      winner = names[c];
    }
  }
  return winner;
}

std::string PhaseResult::to_json() const {
  json rows = json::array();
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    json folds = json::array();
    for (double v : best_val[c]) folds.push_back(std::isnan(v) ? json(nullptr) : json(v));
    rows.push_back({{"candidate", candidates[c]},
                    {"fold_best_val_mae", folds},
                    {"complete", complete(c)},
                    {"mean", complete(c) ? json(mean_of(c)) : json(nullptr)}});
  }
  json j = {{"phase", phase}, {"candidates", rows}, {"winner", winner}};
  return j.dump(2) + "\n";
}

namespace {

struct SelectionJob {
  ModelSpec arch;
  FeatureCombo combo;
  std::string name;
};

PhaseResult run_selection(const std::string& phase, const std::vector<SelectionJob>& jobs, const Experiment& ex,
                          const TrainConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  const IntervalBin bin{0};
  std::array<std::pair<std::vector<FieldPair>, std::vector<FieldPair>>, kFoldCount> split;
  for (int f = 0; f < kFoldCount; ++f) {
    split[f] = ex.fold_pairs(bin, f);
    if (split[f].first.empty() || split[f].second.empty())
      throw DataError(phase + ": fold " + std::to_string(f) + " has no bin-1.0 training or validation pairs");
  }

  PhaseResult res;
  res.phase = phase;
  for (const auto& j : jobs) res.candidates.push_back(j.name);
  res.best_val.assign(jobs.size(), {});
  res.histories.resize(jobs.size());

  run_jobs(jobs.size() * kFoldCount, opts.workers, [&](std::size_t idx) {
    const std::size_t c = idx / kFoldCount;
    const int fold = static_cast<int>(idx % kFoldCount);
    const auto& job = jobs[c];
    const auto train = encode_pairs(ex.fields, split[fold].first, job.combo);
    const auto val = encode_pairs(ex.fields, split[fold].second, job.combo);
    const std::uint64_t init_seed = select_init_seed(cfg, fold);
    Model m = build_model(job_spec(job.arch, job.combo, cfg, init_seed));
    TrainHistory h;
    try {
      h = train_model(m, train, val, cfg, select_shuffle_seed(cfg, fold));
    } catch (const DivergenceError&) {
      res.best_val[c][fold] = kNaN;
      return;
    }
    res.best_val[c][fold] = h.best_val_mae;
    if (!opts.out_dir.empty())
      checkpoint(m, h, opts.out_dir / phase / job.name / std::to_string(fold), {phase, job.name, fold, h.best_epoch},
                 cfg, init_seed);
    h.best_weights.reset();
    res.histories[c][fold] = std::move(h);
  });

  res.winner = pick_winner(res.candidates, res.best_val);
  if (!opts.out_dir.empty()) write_text(opts.out_dir / phase / "result.json", res.to_json());
  return res;
}

}  // namespace

PhaseResult select_architecture(const std::vector<ModelSpec>& candidates, const Experiment& ex,
                                const TrainConfig& cfg, const RunOptions& opts) {
  std::vector<SelectionJob> jobs;
  for (const auto& s : candidates) jobs.push_back({s, FeatureCombo{}, s.name()});
  return run_selection("arch", jobs, ex, cfg, opts);
}

PhaseResult select_features(const ModelSpec& arch, const std::vector<FeatureCombo>& combos, const Experiment& ex,
                            const TrainConfig& cfg, const RunOptions& opts) {
  std::vector<SelectionJob> jobs;
  for (const auto& c : combos) jobs.push_back({arch, c, c.name()});
  return run_selection("features", jobs, ex, cfg, opts);
}

// ---- interval chain -----------------------------------------------------------

std::size_t ChainResult::trained_count() const {
  std::size_t n = 0;
  for (const auto& fold : cells)
    for (const auto& c : fold) n += c.trained;
  return n;
}

std::string ChainResult::to_json() const {
  json folds = json::array();
  for (int f = 0; f < kFoldCount; ++f) {
    json bins = json::array();
    for (int b = 0; b < kBinCount; ++b) {
      const auto& c = cells[f][b];
      bins.push_back({{"bin", IntervalBin{b}.center()},
                      {"trained", c.trained},
                      {"initial_weights_hash", c.initial_hash},
                      {"best_weights_hash", c.best_hash},
                      {"best_val_mae", c.trained ? json(c.best_val_mae) : json(nullptr)},
                      {"best_epoch", c.best_epoch}});
    }
    folds.push_back(bins);
  }
  json j = {{"phase", "intervals"},
            {"architecture", spec.name()},
            {"spec", json::parse(spec_to_json(spec))},
            {"combo", combo.name()},
            {"checkpoints", trained_count()},
            {"folds", folds}};
  return j.dump(2) + "\n";
}

ChainResult train_interval_chain(const ModelSpec& arch, const FeatureCombo& combo, const Experiment& ex,
                                 const TrainConfig& cfg, const RunOptions& opts, const ChainOptions& chain) {
  cfg.validate();
  ChainResult res;
  res.spec = job_spec(arch, combo, cfg, 0);
  res.combo = combo;

  run_jobs(kFoldCount, opts.workers, [&](std::size_t fi) {
    const int fold = static_cast<int>(fi);
    std::optional<Model> prev;
    for (int b = 0; b < kBinCount; ++b) {
      const IntervalBin bin{b};
      const auto [train_pairs, val_pairs] = ex.fold_pairs(bin, fold);
      auto& cell = res.cells[fold][b];
      if (train_pairs.empty() || val_pairs.empty()) continue;  // recorded gap

      const std::uint64_t init_seed = derive_seed(cfg.seed, "interval-init", {fi});
      Model m = build_model(job_spec(arch, combo, cfg, init_seed));
      if (prev) {
        transfer_weights(*prev, m);
      } else if (chain.init_from) {
        transfer_weights(load_weights(*chain.init_from / std::to_string(fold)), m);
      }
      const auto train = encode_pairs(ex.fields, train_pairs, combo);
      const auto val = encode_pairs(ex.fields, val_pairs, combo);
      TrainHistory h = train_model(m, train, val, cfg,
                                   derive_seed(cfg.seed, "interval-shuffle", {fi, static_cast<std::uint64_t>(b)}));
      cell.trained = true;
      cell.initial_hash = h.initial_hash;
      cell.best_hash = h.best_hash;
      cell.best_val_mae = h.best_val_mae;
      cell.best_epoch = h.best_epoch;
      if (!opts.out_dir.empty())
        checkpoint(m, h, opts.out_dir / "intervals" / bin.label() / std::to_string(fold),
                   {"intervals", bin.label(), fold, h.best_epoch}, cfg, init_seed);
      prev = m;
      if (chain.keep_models) res.models[fold][b] = std::move(m);
    }
  });

  if (!opts.out_dir.empty()) write_text(opts.out_dir / "intervals" / "result.json", res.to_json());
  return res;
}

}  // namespace hvfcast
