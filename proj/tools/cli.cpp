#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "hvfcast/architectures.hpp"
#include "hvfcast/domain.hpp"
#include "hvfcast/error.hpp"
#include "hvfcast/evaluation.hpp"
#include "hvfcast/pipeline.hpp"
#include "hvfcast/synthsim.hpp"
#include "hvfcast/trainer.hpp"
#include "json.hpp"

namespace hvfcast::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("HVFCAST_SEED"); env && *env) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used == std::string(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw UsageError(std::string("HVFCAST_SEED is not an unsigned integer: '") + env + "'");
  }
  return 0;
}

struct Manifest {
  json j;
  explicit Manifest(std::string command) {
    j["command"] = std::move(command);
    j["tool_version"] = kToolVersion;
    j["started"] = utc_now();
  }
  void write(const fs::path& path) {
    j["finished"] = utc_now();
    write_text(path, j.dump(2) + "\n");
  }
};

fs::path beside(const fs::path& output) {
  auto p = output;
  p += ".manifest.json";
  return p;
}

std::vector<VisualField> load_dataset(const std::string& path) {
  auto fields = read_dataset(path);
  if (fields.empty()) throw DataError("dataset " + path + " is empty");
  if (const auto v = validate_dataset(fields); !v.empty()) throw DataError(path + ": " + v.front().message());
  return fields;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

std::string winner_of(const fs::path& result, const char* phase) {
  if (!fs::exists(result))
    throw DataError(std::string("no ") + phase + " phase result at " + result.string() + "; run it first or pass the choice explicitly");
  const auto w = json::parse(read_text(result)).at("winner").get<std::string>();
  if (w.empty()) throw DataError(std::string(phase) + " phase has no winner");
  return w;
}

// ---- simulate -----------------------------------------------------------------

struct SimulateArgs {
  sim::CohortConfig cfg;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool noiseless = false;
};

int run_simulate(SimulateArgs& a, std::ostream& out) {
  Manifest m("simulate");
  a.cfg.seed = resolve_seed(a.seed);
  a.cfg.noise = !a.noiseless;
  a.cfg.validate();
  const auto cohort = sim::generate_cohort(a.cfg);
  write_dataset(a.out, cohort.fields);
  fs::path meta = a.out;
  meta.replace_extension(".meta.json");
  write_text(meta, cohort.meta_json());
  m.j["seeds"] = {{"root", a.cfg.seed}};
  m.j["config"] = json::parse(cohort.meta_json()).at("config");
  m.j["outputs"] = {a.out, meta.string()};
  m.write(beside(a.out));
  out << "wrote " << cohort.fields.size() << " fields to " << a.out << "\n";
  return kExitOk;
}

// ---- pairs --------------------------------------------------------------------

struct PairsArgs {
  std::string data, out, split, side = "all";
};

int run_pairs(const PairsArgs& a, std::ostream& out) {
  Manifest m("pairs");
  const auto fields = load_dataset(a.data);
  auto pairs = make_binned_pairs(fields);
  if (a.side != "all") {
    if (a.split.empty()) throw UsageError("--side " + a.side + " needs --split");
    const auto plan = SplitPlan::from_json(read_text(a.split));
    std::erase_if(pairs, [&](const BinnedPair& bp) {
      const int s = plan.side_of(fields[bp.pair.input].patient_id);
      return a.side == "test" ? s != SplitPlan::kTestSide : s < 0;
    });
  }
  write_pairs(a.out, fields, pairs);
  m.j["config"] = {{"side", a.side}};
  m.j["inputs"] = {a.data, a.split};
  m.j["outputs"] = {a.out};
  m.write(beside(a.out));
  out << "wrote " << pairs.size() << " pairs to " << a.out << "\n";
  return kExitOk;
}

// ---- split --------------------------------------------------------------------

struct SplitArgs {
  std::string data, out;
  double ratio = 0.8;
  std::optional<std::uint64_t> seed;
};

int run_split(const SplitArgs& a, std::ostream& out) {
  Manifest m("split");
  const auto seed = resolve_seed(a.seed);
  const auto fields = load_dataset(a.data);
  const auto plan = split_patients(fields, a.ratio, seed);
  write_text(a.out, plan.to_json());
  m.j["seeds"] = {{"root", seed}};
  m.j["config"] = {{"ratio", a.ratio}};
  m.j["inputs"] = {a.data};
  m.j["outputs"] = {a.out};
  m.write(beside(a.out));
  out << "test patients " << plan.test_patients.size() << ", training patients "
      << std::accumulate(plan.folds.begin(), plan.folds.end(), std::size_t{0},
                         [](std::size_t n, const auto& f) { return n + f.size(); })
      << "\n";
  return kExitOk;
}

// ---- train --------------------------------------------------------------------

struct TrainArgs {
  std::string data, split, runs = "runs", phase;
  std::optional<int> epochs;
  std::vector<int> widths;
  std::optional<std::uint64_t> seed;
  bool paper_scale = false;
  int workers = 1;
  std::optional<int> fc_hidden, batch_size;
  std::optional<double> lr;
  std::string arch, combo, candidates, combos, init_from;
};

int run_train(const TrainArgs& a, std::ostream& out) {
  Manifest m("train");
  TrainConfig cfg = a.paper_scale ? TrainConfig::paper_scale() : TrainConfig{};
  if (a.epochs) cfg.epochs = *a.epochs;
  if (!a.widths.empty()) {
    if (a.widths.size() != 3) throw UsageError("--widths takes exactly three values");
    std::copy(a.widths.begin(), a.widths.end(), cfg.widths.begin());
  }
  if (a.fc_hidden) cfg.fc_hidden = *a.fc_hidden;
  if (a.batch_size) cfg.batch_size = static_cast<std::size_t>(*a.batch_size);
  if (a.lr) cfg.lr = *a.lr;
  cfg.seed = resolve_seed(a.seed);
  cfg.validate();
  if (a.workers < 1) throw UsageError("--workers must be >= 1");

  const auto fields = load_dataset(a.data);
  const auto plan = SplitPlan::from_json(read_text(a.split));
  const Experiment ex(fields, plan);
  const fs::path runs = a.runs;
  const RunOptions opts{runs, a.workers};

  m.j["seeds"] = {{"root", cfg.seed}};
  m.j["config"] = json::parse(cfg.to_json());
  m.j["config"]["phase"] = a.phase;
  m.j["config"]["workers"] = a.workers;
  m.j["inputs"] = {a.data, a.split};

  if (a.phase == "arch") {
    std::vector<ModelSpec> cands;
    if (a.candidates.empty()) {
      cands = canonical_specs();
    } else {
      for (const auto& n : split_list(a.candidates)) cands.push_back(spec_from_name(n));
    }
    const auto res = select_architecture(cands, ex, cfg, opts);
    if (res.winner.empty()) throw DivergenceError("divergence: every architecture candidate failed");
    out << "architecture winner " << res.winner << "\n";
  } else if (a.phase == "features") {
    const auto arch = spec_from_name(a.arch.empty() ? winner_of(runs / "arch" / "result.json", "arch") : a.arch);
    std::vector<FeatureCombo> combos;
    if (a.combos.empty()) {
      combos = FeatureCombo::all();
    } else {
      for (const auto& n : split_list(a.combos)) combos.push_back(FeatureCombo::parse(n));
    }
    m.j["config"]["architecture"] = arch.name();
    const auto res = select_features(arch, combos, ex, cfg, opts);
    if (res.winner.empty()) throw DivergenceError("divergence: every feature combination failed");
    out << "feature winner " << res.winner << "\n";
  } else if (a.phase == "intervals") {
    const auto arch = spec_from_name(a.arch.empty() ? winner_of(runs / "arch" / "result.json", "arch") : a.arch);
    const auto combo =
        FeatureCombo::parse(a.combo.empty() ? winner_of(runs / "features" / "result.json", "features") : a.combo);
    ChainOptions chain;
    if (!a.init_from.empty()) chain.init_from = fs::path(a.init_from);
    m.j["config"]["architecture"] = arch.name();
    m.j["config"]["combo"] = combo.name();
    const auto res = train_interval_chain(arch, combo, ex, cfg, opts, chain);
    out << "trained " << res.trained_count() << " interval models\n";
  } else {
    throw UsageError("--phase must be arch, features or intervals");
  }
  m.j["outputs"] = {(runs / a.phase).string()};
  m.write(runs / a.phase / "run_manifest.json");
  return kExitOk;
}

// ---- evaluate -----------------------------------------------------------------

struct EvaluateArgs {
  std::string data, pairs, runs = "runs", out = "report";
  std::optional<std::uint64_t> seed;
  int resamples = 1000;
  bool no_baselines = false;
};

int run_evaluate(const EvaluateArgs& a, std::ostream& out) {
  Manifest m("evaluate");
  const auto fields = load_dataset(a.data);
  const auto pairs = read_pairs(a.pairs, fields);
  if (pairs.empty()) throw DataError("test pair file " + a.pairs + " is empty");
  const auto chain = load_chain(fs::path(a.runs) / "intervals");
  EvalOptions opts;
  opts.bootstrap_seed = resolve_seed(a.seed);
  opts.resamples = a.resamples;
  opts.baselines = !a.no_baselines;
  const auto rep = evaluate_testset(chain, fields, pairs, opts);
  const fs::path dir = a.out;
  write_text(dir / "report.json", rep.to_json());
  write_text(dir / "report.csv", rep.to_csv());
  m.j["seeds"] = {{"bootstrap", opts.bootstrap_seed}};
  m.j["config"] = {{"resamples", a.resamples}, {"baselines", opts.baselines}};
  m.j["inputs"] = {a.data, a.pairs, a.runs};
  m.j["outputs"] = {(dir / "report.json").string(), (dir / "report.csv").string()};
  m.write(dir / "run_manifest.json");
  char line[160];
  std::snprintf(line, sizeof line, "pairs %zu (skipped %zu)  MAE %.3f dB  RMSE %.3f dB\n", rep.evaluated_pairs,
                rep.skipped_pairs, rep.mae, rep.rmse);
  out << line;
  return kExitOk;
}

// ---- predict ------------------------------------------------------------------

struct PredictArgs {
  std::string runs = "runs", data, field, patient, eye, out;
  std::optional<double> interval;
  int test_index = 0;
};

int run_predict(const PredictArgs& a, std::ostream& out) {
  Manifest m("predict");
  if (!a.interval) throw UsageError("--interval is required");
  IntervalBin bin;
  try {
    bin = IntervalBin::from_center(*a.interval);
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }

  VisualField input;
  if (!a.field.empty()) {
    const auto fields = read_dataset(a.field);
    if (fields.size() != 1) throw DataError("--field file must hold exactly one record");
    input = fields.front();
  } else if (!a.data.empty()) {
    if (a.patient.empty() || a.eye.empty() || a.test_index < 1)
      throw UsageError("--data needs --patient, --eye and --test-index");
    const auto fields = load_dataset(a.data);
    const auto it = std::find_if(fields.begin(), fields.end(), [&](const VisualField& f) {
      return f.patient_id == a.patient && to_string(f.eye) == a.eye && f.test_index == a.test_index;
    });
    if (it == fields.end()) throw DataError("no field " + a.patient + " " + a.eye + " #" + std::to_string(a.test_index));
    input = *it;
  } else {
    throw UsageError("give --field or --data with --patient/--eye/--test-index");
  }

  const auto chain = load_chain(fs::path(a.runs) / "intervals");
  const auto models = chain.bin_models(bin);
  if (models.empty()) throw DataError("no trained model for interval " + bin.label());
  const auto f = ensemble_predict(models, encode_input(input, chain.combo), bin);
  const auto exported = f.exported();

  json values = json::array(), raw = json::array();
  for (const Cell c : build_mask(input.eye).cells()) {
    values.push_back(round2(exported[c.index()]));
    raw.push_back(f.raw[c.index()]);
  }
  json j = {{"input", {{"patient_id", input.patient_id},
                       {"eye", to_string(input.eye)},
                       {"test_index", input.test_index},
                       {"test_date", format_date(input.test_date)}}},
            {"interval", bin.center()},
            {"models", f.model_count},
            {"values", values},
            {"raw", raw}};
  if (a.out.empty()) {
    out << j.dump() << "\n";
  } else {
    write_text(a.out, j.dump(2) + "\n");
    m.j["config"] = {{"interval", bin.center()}};
    m.j["inputs"] = {a.runs, a.field.empty() ? a.data : a.field};
    m.j["outputs"] = {a.out};
    m.write(beside(a.out));
  }
  return kExitOk;
}

// ---- report -------------------------------------------------------------------

struct ReportArgs {
  std::string report, out = ".";
};

int run_report(const ReportArgs& a, std::ostream& out) {
  Manifest m("report");
  const auto rep = MetricsReport::from_json(read_text(a.report));
  const fs::path dir = a.out;
  write_text(dir / "md_scatter.csv", rep.md_scatter_csv());
  write_text(dir / "bland_altman.csv", rep.bland_altman_csv());
  write_text(dir / "per_bin_mae.csv", rep.per_bin_csv());
  m.j["inputs"] = {a.report};
  m.j["outputs"] = {(dir / "md_scatter.csv").string(), (dir / "bland_altman.csv").string(),
                    (dir / "per_bin_mae.csv").string()};
  m.write(dir / "run_manifest.json");
  out << "wrote plot tables to " << dir.string() << "\n";
  return kExitOk;
}

constexpr const char* kDatasetDoc =
    "Dataset: JSON lines, one field per line: {\"patient_id\", \"eye\": \"OD\"|\"OS\", \"age_years\",\n"
    "\"gender\": \"M\"|\"F\", \"test_date\": \"YYYY-MM-DD\", \"test_index\" (>=1), \"values\": 54 dB\n"
    "values in row-major 24-2 order, two decimals, within [0, 50]}.";
constexpr const char* kPairsDoc =
    "Pairs: JSON lines {\"bin\": \"1.0\".. \"5.5\", \"input_ref\": {patient_id, eye, test_index},\n"
    "\"target_ref\": {...}, \"delta\": years}.";
constexpr const char* kSplitDoc =
    "Split: JSON {\"seed\", \"ratio\", \"test_patients\": [...], \"folds\": [[...] x 10]}.";
constexpr const char* kRunsDoc =
    "Runs: <runs>/<phase>/<candidate>/<fold>/{manifest.json, weights.bin, history.json} and\n"
    "<runs>/<phase>/result.json; phases arch, features, intervals (candidate = bin label).\n"
    "weights.bin is little-endian float64; manifest.json lists name, shape, offset, length\n"
    "and FNV-1a checksum per tensor.";
constexpr const char* kReportDoc =
    "Report: report.json holds MAE/RMSE with 95% bootstrap CIs, MD correlation, Bland-Altman,\n"
    "per-bin MAE, baseline rows and reference constants; report.csv is a long table keyed by\n"
    "`table` (md_scatter, bland_altman, per_bin_mae).";

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"hvfcast: visual field forecasting toolkit", "hvfcast"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);
  app.footer("Exit codes: 0 ok, 1 usage, 2 data or validation error, 3 training divergence.\n"
             "HVFCAST_SEED supplies the seed when --seed is absent.");

  SimulateArgs sim_a;
  auto* sim = app.add_subcommand("simulate", "Generate a synthetic cohort dataset");
  sim->add_option("--out", sim_a.out, "Output dataset (.jsonl)")->required();
  sim->add_option("--patients", sim_a.cfg.patients, "Number of patients")->capture_default_str();
  sim->add_option("--seed", sim_a.seed, "Root seed");
  sim->add_option("--min-tests", sim_a.cfg.min_tests, "Fewest tests per eye")->capture_default_str();
  sim->add_option("--max-tests", sim_a.cfg.max_tests, "Most tests per eye")->capture_default_str();
  sim->add_option("--min-span", sim_a.cfg.min_span_years, "Shortest follow-up (years)")->capture_default_str();
  sim->add_option("--max-span", sim_a.cfg.max_span_years, "Longest follow-up (years)")->capture_default_str();
  sim->add_option("--min-rate", sim_a.cfg.min_rate, "Slowest loss rate (dB/year)")->capture_default_str();
  sim->add_option("--max-rate", sim_a.cfg.max_rate, "Fastest loss rate (dB/year)")->capture_default_str();
  sim->add_flag("--noiseless", sim_a.noiseless, "Disable test-retest noise");
  sim->footer(std::string(kDatasetDoc) + "\nAlso writes <out>.meta.json (cohort truth) and <out>.manifest.json.");

  PairsArgs pairs_a;
  auto* pairs = app.add_subcommand("pairs", "Enumerate binned forecasting pairs");
  pairs->add_option("--data", pairs_a.data, "Dataset (.jsonl)")->required();
  pairs->add_option("--out", pairs_a.out, "Output pairs (.jsonl)")->required();
  pairs->add_option("--split", pairs_a.split, "Split plan, needed with --side");
  pairs->add_option("--side", pairs_a.side, "all, test or train")
      ->check(CLI::IsMember({"all", "test", "train"}))
      ->capture_default_str();
  pairs->footer(std::string(kDatasetDoc) + "\n" + kPairsDoc);

  SplitArgs split_a;
  auto* split = app.add_subcommand("split", "Patient-level test/fold split");
  split->add_option("--data", split_a.data, "Dataset (.jsonl)")->required();
  split->add_option("--out", split_a.out, "Output split plan (.json)")->required();
  split->add_option("--ratio", split_a.ratio, "Training share of patients")->capture_default_str();
  split->add_option("--seed", split_a.seed, "Shuffle seed");
  split->footer(kSplitDoc);

  TrainArgs train_a;
  auto* train = app.add_subcommand("train", "Run one training phase");
  train->add_option("--data", train_a.data, "Dataset (.jsonl)")->required();
  train->add_option("--split", train_a.split, "Split plan (.json)")->required();
  train->add_option("--phase", train_a.phase, "arch, features or intervals")
      ->required()
      ->check(CLI::IsMember({"arch", "features", "intervals"}));
  train->add_option("--runs", train_a.runs, "Checkpoint root")->capture_default_str();
  train->add_option("--epochs", train_a.epochs, "Epochs per model (default 60)");
  train->add_option("--widths", train_a.widths, "Block widths w1,w2,w3 (default 8,16,24)")->delimiter(',');
  train->add_option("--seed", train_a.seed, "Root seed");
  train->add_flag("--paper-scale", train_a.paper_scale, "1000 epochs, widths 64,128,256");
  train->add_option("--workers", train_a.workers, "Parallel jobs")->capture_default_str();
  train->add_option("--fc-hidden", train_a.fc_hidden, "Hidden units of the fully connected model (default 2048)");
  train->add_option("--batch-size", train_a.batch_size, "Mini-batch size (default 32)");
  train->add_option("--lr", train_a.lr, "Adam learning rate (default 1e-3)");
  train->add_option("--candidates", train_a.candidates, "arch: comma list, e.g. FullBN-3,Cascade-5");
  train->add_option("--arch", train_a.arch, "features/intervals: architecture (default: arch winner)");
  train->add_option("--combos", train_a.combos, "features: comma list, e.g. hvf,age+gender");
  train->add_option("--combo", train_a.combo, "intervals: feature combination (default: features winner)");
  train->add_option("--init-from", train_a.init_from, "intervals: <dir>/<fold> checkpoints seeding bin 1.0");
  train->footer(std::string(kSplitDoc) + "\n" + kRunsDoc);

  EvaluateArgs eval_a;
  auto* eval = app.add_subcommand("evaluate", "Score the interval ensemble on test pairs");
  eval->add_option("--data", eval_a.data, "Dataset (.jsonl)")->required();
  eval->add_option("--pairs", eval_a.pairs, "Test pairs (.jsonl)")->required();
  eval->add_option("--runs", eval_a.runs, "Checkpoint root")->capture_default_str();
  eval->add_option("--out", eval_a.out, "Report directory")->capture_default_str();
  eval->add_option("--seed", eval_a.seed, "Bootstrap seed");
  eval->add_option("--resamples", eval_a.resamples, "Bootstrap resamples")->capture_default_str();
  eval->add_flag("--no-baselines", eval_a.no_baselines, "Skip copy/OLS/exponential baselines");
  eval->footer(std::string(kPairsDoc) + "\n" + kRunsDoc + "\n" + kReportDoc);

  PredictArgs pred_a;
  auto* pred = app.add_subcommand("predict", "Forecast one field at a given interval");
  pred->add_option("--interval", pred_a.interval, "Horizon in years: 1.0, 1.5, .. 5.5");
  pred->add_option("--runs", pred_a.runs, "Checkpoint root")->capture_default_str();
  pred->add_option("--field", pred_a.field, "File holding one dataset record");
  pred->add_option("--data", pred_a.data, "Dataset to pick the input from");
  pred->add_option("--patient", pred_a.patient, "Patient id (with --data)");
  pred->add_option("--eye", pred_a.eye, "OD or OS (with --data)");
  pred->add_option("--test-index", pred_a.test_index, "Test index (with --data)");
  pred->add_option("--out", pred_a.out, "Output file (default stdout)");
  pred->footer("Forecast: JSON {\"input\", \"interval\", \"models\", \"values\": 54 clamped dB values,\n"
               "\"raw\": unclamped ensemble means}.");

  ReportArgs rep_a;
  auto* rep = app.add_subcommand("report", "Split report.json into plot-ready CSVs");
  rep->add_option("--report", rep_a.report, "report.json")->required();
  rep->add_option("--out", rep_a.out, "Output directory")->capture_default_str();
  rep->footer(std::string(kReportDoc) +
              "\nWrites md_scatter.csv, bland_altman.csv and per_bin_mae.csv.");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*sim) return run_simulate(sim_a, out);
    if (*pairs) return run_pairs(pairs_a, out);
    if (*split) return run_split(split_a, out);
    if (*train) return run_train(train_a, out);
    if (*eval) return run_evaluate(eval_a, out);
    if (*pred) return run_predict(pred_a, out);
    if (*rep) return run_report(rep_a, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace hvfcast::cli
