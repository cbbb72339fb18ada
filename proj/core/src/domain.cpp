#include "hvfcast/domain.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <tuple>

#include "hvfcast/error.hpp"
#include "json.hpp"

namespace hvfcast {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct RowSpan {
  int first;
  int last;
};
constexpr std::array<RowSpan, kGridRows> kRowSpans{{
    {2, 5}, {1, 6}, {0, 7}, {0, 8}, {0, 8}, {0, 7}, {1, 6}, {2, 5}}};

Mask24x2 make_mask(Eye eye) {
  std::array<bool, kGridCells> valid{};
  for (int r = 0; r < kGridRows; ++r)
    for (int c = kRowSpans[r].first; c <= kRowSpans[r].last; ++c)
      valid[static_cast<std::size_t>(Cell{r, c}.index())] = true;
  const int bs_col = eye == Eye::right ? 7 : 1;
  return Mask24x2(eye, valid, {Cell{3, bs_col}, Cell{4, bs_col}});
}

}  // namespace

std::string_view to_string(Eye eye) { return eye == Eye::right ? "OD" : "OS"; }
std::string_view to_string(Gender g) { return g == Gender::male ? "M" : "F"; }

std::ostream& operator<<(std::ostream& os, Cell c) {
  return os << '(' << c.row << ',' << c.col << ')';
}

Date parse_date(std::string_view iso) {
  auto bad = [&] { return ParseError("test_date: malformed date '" + std::string(iso) + "'"); };
  if (iso.size() != 10 || iso[4] != '-' || iso[7] != '-') throw bad();
  int y = 0;
  unsigned m = 0, d = 0;
  auto parse = [&](std::string_view s, auto& out) {
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    if (ec != std::errc{} || p != s.data() + s.size()) throw bad();
  };
  parse(iso.substr(0, 4), y);
  parse(iso.substr(5, 2), m);
  parse(iso.substr(8, 2), d);
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m},
                                        std::chrono::day{d}};
  if (!ymd.ok()) throw bad();
  return Date{ymd};
}

std::string format_date(Date d) {
  const std::chrono::year_month_day ymd{d};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

double years_between(Date from, Date to) {
  return static_cast<double>((to - from).count()) / 365.25;
}

Mask24x2::Mask24x2(Eye eye, std::array<bool, kGridCells> valid, std::array<Cell, 2> blind_spot)
    : eye_(eye), valid_(valid), blind_spot_(blind_spot) {
  for (int i = 0; i < kGridCells; ++i)
    if (valid_[static_cast<std::size_t>(i)]) cells_.push_back(Cell::from_index(i));
}

bool Mask24x2::contains(Cell c) const {
  if (c.row < 0 || c.row >= kGridRows || c.col < 0 || c.col >= kGridCols) return false;
  return valid_[static_cast<std::size_t>(c.index())];
}

bool Mask24x2::is_blind_spot(Cell c) const {
  return c == blind_spot_[0] || c == blind_spot_[1];
}

const Mask24x2& build_mask(Eye eye) {
  static const Mask24x2 right = make_mask(Eye::right);
  static const Mask24x2 left = make_mask(Eye::left);
  return eye == Eye::right ? right : left;
}

VisualField::VisualField() { values.fill(kNaN); }

bool operator==(const VisualField& a, const VisualField& b) {
  if (std::tie(a.patient_id, a.eye, a.gender, a.age_years, a.test_date, a.test_index) !=
      std::tie(b.patient_id, b.eye, b.gender, b.age_years, b.test_date, b.test_index))
    return false;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const bool na = std::isnan(a.values[i]), nb = std::isnan(b.values[i]);
    if (na != nb || (!na && a.values[i] != b.values[i])) return false;
  }
  return true;
}

bool is_two_decimal(double v) {
  const double scaled = v * 100.0;
  return std::abs(scaled - std::nearbyint(scaled)) < 1e-6;
}

double round2(double v) { return std::nearbyint(v * 100.0) / 100.0; }

std::vector<Violation> validate_field(const VisualField& f) {
  std::vector<Violation> out;
  if (f.patient_id.empty()) out.push_back({"patient_id", "empty"});
  if (!(f.age_years >= 0.0) || !std::isfinite(f.age_years))
    out.push_back({"age", "must be a nonnegative finite number"});
  if (f.test_index < 1) out.push_back({"test_index", "must be >= 1"});
  const auto& mask = build_mask(f.eye);
  for (int i = 0; i < kGridCells; ++i) {
    const Cell c = Cell::from_index(i);
    const double v = f.values[static_cast<std::size_t>(i)];
    std::ostringstream where;
    where << "cell " << c;
    if (!mask.contains(c)) {
      if (!std::isnan(v)) out.push_back({where.str(), "value outside 24-2 mask"});
      continue;
    }
    if (std::isnan(v)) {
      out.push_back({where.str(), "missing cell"});
    } else if (!(v >= kMinDb && v <= kMaxDb)) {
      out.push_back({where.str(), "out of range [0,50]"});
    } else if (!is_two_decimal(v)) {
      out.push_back({where.str(), "not two-decimal"});
    }
  }
  return out;
}

std::vector<Violation> validate_dataset(const std::vector<VisualField>& fields) {
  std::vector<Violation> out;
  for (const auto& f : fields)
    for (auto& v : validate_field(f))
      out.push_back({f.patient_id + "/" + std::string(to_string(f.eye)) + "#" +
                         std::to_string(f.test_index) + " " + v.where,
                     v.rule});
  std::map<std::tuple<std::string, Eye>, std::vector<const VisualField*>> series;
  for (const auto& f : fields) series[{f.patient_id, f.eye}].push_back(&f);
  for (auto& [key, list] : series) {
    std::sort(list.begin(), list.end(),
              [](auto* a, auto* b) { return a->test_index < b->test_index; });
    for (std::size_t i = 1; i < list.size(); ++i) {
      const std::string where = std::get<0>(key) + "/" + std::string(to_string(std::get<1>(key)));
      if (list[i]->test_index == list[i - 1]->test_index)
        out.push_back({where, "duplicate test_index " + std::to_string(list[i]->test_index)});
      else if (!(list[i]->test_date > list[i - 1]->test_date))
        out.push_back({where, "test_index " + std::to_string(list[i]->test_index) +
                                  " does not follow a later test_date"});
    }
  }
  return out;
}

NormativeSurface::NormativeSurface() { expected.fill(kNaN); }

double mean_deviation(const VisualField& f, const NormativeSurface& n) {
  const auto& mask = build_mask(f.eye);
  double sum = 0.0;
  int count = 0;
  for (const Cell c : mask.cells()) {
    if (mask.is_blind_spot(c)) continue;
    const double e = n.expected[static_cast<std::size_t>(c.index())];
    if (std::isnan(e)) throw DataError("normative incomplete");
    sum += f.at(c) - e;
    ++count;
  }
  return sum / count;
}

VisualField parse_record(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("record: expected a JSON object");

  auto require = [&](const char* key) -> const json& {
    auto it = j.find(key);
    if (it == j.end()) throw ParseError(std::string(key) + ": missing key");
    return *it;
  };

  VisualField f;
  const auto& pid = require("patient_id");
  if (!pid.is_string()) throw ParseError("patient_id: expected string");
  f.patient_id = pid.get<std::string>();

  const auto& eye = require("eye");
  if (eye == "OD") f.eye = Eye::right;
  else if (eye == "OS") f.eye = Eye::left;
  else throw ParseError("eye: expected \"OD\" or \"OS\"");

  const auto& gender = require("gender");
  if (gender == "M") f.gender = Gender::male;
  else if (gender == "F") f.gender = Gender::female;
  else throw ParseError("gender: expected \"M\" or \"F\"");

  const auto& age = require("age");
  if (!age.is_number()) throw ParseError("age: expected number");
  f.age_years = age.get<double>();

  const auto& date = require("test_date");
  if (!date.is_string()) throw ParseError("test_date: expected string");
  f.test_date = parse_date(date.get<std::string>());

  const auto& idx = require("test_index");
  if (!idx.is_number_integer()) throw ParseError("test_index: expected integer");
  f.test_index = idx.get<int>();

  const auto& values = require("values");
  if (!values.is_array()) throw ParseError("values: expected array");
  if (values.size() != kFieldPoints)
    throw ParseError("values length " + std::to_string(values.size()) + " \xE2\x89\xA0 " +
                     std::to_string(kFieldPoints));
  const auto& cells = build_mask(f.eye).cells();
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (!values[i].is_number()) throw ParseError("values: element " + std::to_string(i) + " is not a number");
    f.at(cells[i]) = values[i].get<double>();
  }

  if (auto v = validate_field(f); !v.empty()) throw ParseError("values: " + v.front().message());
  return f;
}

std::string serialize_record(const VisualField& f) {
  if (auto v = validate_field(f); !v.empty()) {
    std::string msg = "refusing to serialize invalid field:";
    for (const auto& x : v) msg += " [" + x.message() + "]";
    throw DataError(msg);
  }
  // Values are emitted by hand so every number carries exactly two decimals.
  json head = {{"patient_id", f.patient_id},
               {"eye", to_string(f.eye)},
               {"gender", to_string(f.gender)},
               {"age", f.age_years},
               {"test_date", format_date(f.test_date)},
               {"test_index", f.test_index}};
  std::string out = head.dump();
  out.pop_back();
  out += ",\"values\":[";
  const auto& cells = build_mask(f.eye).cells();
  char buf[32];
  for (std::size_t i = 0; i < cells.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.2f", f.at(cells[i]));
    if (i) out += ',';
    out += buf;
  }
  out += "]}";
  return out;
}

std::vector<VisualField> read_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset " + path);
  std::vector<VisualField> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_record(line));
    } catch (const ParseError& e) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_dataset(const std::string& path, const std::vector<VisualField>& fields) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write dataset " + path);
  for (const auto& f : fields) out << serialize_record(f) << '\n';
}

}  // namespace hvfcast
