#include "hvfcast/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <tuple>

#include "hvfcast/error.hpp"
#include "json.hpp"

namespace hvfcast {

using nlohmann::json;
using nn::Shape;
using nn::Tensor;

std::string IntervalBin::label() const {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.1f", center());
  return buf;
}

IntervalBin IntervalBin::from_center(double center) {
  for (int i = 0; i < kBinCount; ++i)
    if (IntervalBin{i}.center() == center) return {i};
  throw DataError("interval outside [1.0, 5.5]");
}

IntervalBin IntervalBin::from_label(std::string_view label) {
  try {
    return from_center(std::stod(std::string(label)));
  } catch (const std::invalid_argument&) {
    throw DataError("bad interval label '" + std::string(label) + "'");
  }
}

std::optional<IntervalBin> assign_bin(double delta) {
  for (int i = 0; i + 1 < kBinCount; ++i) {
    const IntervalBin b{i};
    if (delta >= b.lower() && delta < b.upper()) return b;
  }
  const IntervalBin last{kBinCount - 1};
  if (delta >= last.lower() && delta <= 5.5) return last;
  return std::nullopt;
}

std::vector<FieldPair> make_pairs(const std::vector<VisualField>& fields) {
  std::map<std::tuple<std::string, Eye>, std::vector<std::size_t>> series;
  for (std::size_t i = 0; i < fields.size(); ++i) series[{fields[i].patient_id, fields[i].eye}].push_back(i);
  std::vector<FieldPair> out;
  for (auto& [key, idx] : series) {
    std::stable_sort(idx.begin(), idx.end(),
                     [&](auto a, auto b) { return fields[a].test_date < fields[b].test_date; });
    for (std::size_t a = 0; a < idx.size(); ++a)
      for (std::size_t b = a + 1; b < idx.size(); ++b) {
        const auto& fa = fields[idx[a]];
        const auto& fb = fields[idx[b]];
        if (!(fb.test_date > fa.test_date)) continue;
        out.push_back({idx[a], idx[b], years_between(fa.test_date, fb.test_date)});
      }
  }
  return out;
}

std::vector<BinnedPair> make_binned_pairs(const std::vector<VisualField>& fields) {
  std::vector<BinnedPair> out;
  for (const auto& p : make_pairs(fields))
    if (auto b = assign_bin(p)) out.push_back({p, *b});
  return out;
}

int SplitPlan::side_of(const std::string& id) const {
  if (std::binary_search(test_patients.begin(), test_patients.end(), id)) return kTestSide;
  for (int f = 0; f < kFoldCount; ++f)
    if (std::binary_search(folds[f].begin(), folds[f].end(), id)) return f;
  return kUnknown;
}

std::string SplitPlan::to_json() const {
  json j = {{"seed", seed}, {"ratio", ratio}, {"test_patients", test_patients}, {"folds", folds}};
  return j.dump(2) + "\n";
}

SplitPlan SplitPlan::from_json(std::string_view text) {
  SplitPlan p;
  try {
    const json j = json::parse(text);
    p.seed = j.at("seed").get<std::uint64_t>();
    p.ratio = j.at("ratio").get<double>();
    p.test_patients = j.at("test_patients").get<std::vector<std::string>>();
    const auto folds = j.at("folds").get<std::vector<std::vector<std::string>>>();
    if (folds.size() != kFoldCount) throw ParseError("folds: expected " + std::to_string(kFoldCount) + " folds");
    std::copy(folds.begin(), folds.end(), p.folds.begin());
  } catch (const json::exception& e) {
    throw ParseError(std::string("split plan: ") + e.what());
  }
  std::sort(p.test_patients.begin(), p.test_patients.end());
  for (auto& f : p.folds) std::sort(f.begin(), f.end());
  return p;
}

SplitPlan split_patients(const std::vector<VisualField>& fields, double ratio, std::uint64_t seed) {
  std::vector<std::string> ids;
  for (const auto& f : fields) ids.push_back(f.patient_id);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  const std::size_t total = ids.size();
  // Guard against 0.8 * 100 = 80.00000000000001 rounding up.
  const auto n_train = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(total) - 1e-9));
  if (total < 20 || n_train < kFoldCount || n_train >= total)
    throw DataError("too few patients for a " + std::to_string(kFoldCount) + "-fold split: " +
                    std::to_string(total) + " patients");

  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  SplitPlan plan;
  plan.seed = seed;
  plan.ratio = ratio;
  for (std::size_t i = 0; i < n_train; ++i) plan.folds[i % kFoldCount].push_back(ids[i]);
  plan.test_patients.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
  std::sort(plan.test_patients.begin(), plan.test_patients.end());
  for (auto& f : plan.folds) std::sort(f.begin(), f.end());
  return plan;
}

std::string FeatureCombo::name() const {
  std::string out;
  auto add = [&](bool on, const char* n) {
    if (!on) return;
    if (!out.empty()) out += '+';
    out += n;
  };
  add(age, "age");
  add(gender, "gender");
  add(eye, "eye");
  add(test_index, "test_index");
  return out.empty() ? "hvf" : out;
}

FeatureCombo FeatureCombo::parse(std::string_view name) {
  FeatureCombo c;
  if (name == "hvf" || name.empty()) return c;
  std::size_t start = 0;
  while (start <= name.size()) {
    auto end = name.find('+', start);
    if (end == std::string_view::npos) end = name.size();
    const auto tok = name.substr(start, end - start);
    if (tok == "age") c.age = true;
    else if (tok == "gender") c.gender = true;
    else if (tok == "eye") c.eye = true;
    else if (tok == "test_index") c.test_index = true;
    else throw DataError("unknown clinical feature '" + std::string(tok) + "'");
    start = end + 1;
  }
  return c;
}

std::vector<FeatureCombo> FeatureCombo::all() {
  std::vector<FeatureCombo> out;
  for (int bits = 0; bits < 16; ++bits)
    out.push_back({(bits & 1) != 0, (bits & 2) != 0, (bits & 4) != 0, (bits & 8) != 0});
  return out;
}

std::vector<bool> field_mask(Eye eye) {
  const auto& bitmap = build_mask(eye).bitmap();
  return std::vector<bool>(bitmap.begin(), bitmap.end());
}

Tensor encode_input(const VisualField& f, const FeatureCombo& combo) {
  Tensor x(Shape{combo.channels(), kGridRows, kGridCols});
  const auto& mask = build_mask(f.eye);
  for (const Cell c : mask.cells()) x[static_cast<std::size_t>(c.index())] = f.at(c);
  std::size_t ch = 1;
  auto face = [&](double v) {
    std::fill_n(x.ptr() + ch * kGridCells, kGridCells, v);
    ++ch;
  };
  if (combo.age) face(f.age_years / 100.0);
  if (combo.gender) {
    face(f.gender == Gender::male ? 1.0 : 0.0);
    face(f.gender == Gender::female ? 1.0 : 0.0);
  }
  if (combo.eye) {
    face(f.eye == Eye::right ? 1.0 : 0.0);
    face(f.eye == Eye::left ? 1.0 : 0.0);
  }
  if (combo.test_index) face(std::min(f.test_index, 20) / 20.0);
  return x;
}

EncodedTarget encode_target(const VisualField& f) {
  EncodedTarget t{Tensor(Shape{1, kGridRows, kGridCols}), field_mask(f.eye)};
  for (const Cell c : build_mask(f.eye).cells()) t.grid[static_cast<std::size_t>(c.index())] = f.at(c);
  return t;
}

Tensor stack(const std::vector<Tensor>& samples) {
  if (samples.empty()) throw ShapeError("stack: no samples");
  Shape s{samples.size()};
  for (auto d : samples[0].shape()) s.push_back(d);
  Tensor out(s);
  const std::size_t n = samples[0].size();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].shape() != samples[0].shape())
      throw ShapeError("stack: " + nn::shape_str(samples[i].shape()) + " vs " + nn::shape_str(samples[0].shape()));
    std::copy(samples[i].ptr(), samples[i].ptr() + n, out.ptr() + i * n);
  }
  return out;
}

namespace {

json ref_of(const VisualField& f) {
  return {{"patient_id", f.patient_id}, {"eye", to_string(f.eye)}, {"test_index", f.test_index}};
}

}  // namespace

void write_pairs(const std::string& path, const std::vector<VisualField>& fields,
                 const std::vector<BinnedPair>& pairs) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  for (const auto& bp : pairs) {
    json j = {{"bin", bp.bin.center()},
              {"input_ref", ref_of(fields[bp.pair.input])},
              {"target_ref", ref_of(fields[bp.pair.target])},
              {"delta", bp.pair.delta_years}};
    out << j.dump() << '\n';
  }
}

std::vector<BinnedPair> read_pairs(const std::string& path, const std::vector<VisualField>& fields) {
  std::map<std::tuple<std::string, std::string, int>, std::size_t> index;
  for (std::size_t i = 0; i < fields.size(); ++i)
    index[{fields[i].patient_id, std::string(to_string(fields[i].eye)), fields[i].test_index}] = i;
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::vector<BinnedPair> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      auto lookup = [&](const json& r) {
        auto it = index.find({r.at("patient_id").get<std::string>(), r.at("eye").get<std::string>(),
                              r.at("test_index").get<int>()});
        if (it == index.end()) throw ParseError("reference to unknown record " + r.dump());
        return it->second;
      };
      const std::size_t a = lookup(j.at("input_ref")), b = lookup(j.at("target_ref"));
      const FieldPair p{a, b, years_between(fields[a].test_date, fields[b].test_date)};
      const auto bin = assign_bin(p);
      if (!bin || bin->center() != j.at("bin").get<double>())
        throw ParseError("bin does not match the referenced dates");
      out.push_back({p, *bin});
    } catch (const json::exception& e) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const ParseError& e) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace hvfcast
