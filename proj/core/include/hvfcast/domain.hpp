#pragma once

#include <array>
#include <chrono>
#include <compare>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace hvfcast {

inline constexpr int kGridRows = 8;
inline constexpr int kGridCols = 9;
inline constexpr int kGridCells = kGridRows * kGridCols;
inline constexpr int kFieldPoints = 54;
inline constexpr int kMdPoints = 52;
inline constexpr double kMinDb = 0.0;
inline constexpr double kMaxDb = 50.0;

enum class Eye { right, left };
enum class Gender { male, female };

std::string_view to_string(Eye eye);  // "OD" / "OS"
std::string_view to_string(Gender g);  // "M" / "F"

struct Cell {
  int row = 0;
  int col = 0;

  constexpr int index() const { return row * kGridCols + col; }
  static constexpr Cell from_index(int i) { return {i / kGridCols, i % kGridCols}; }
  friend constexpr auto operator<=>(const Cell&, const Cell&) = default;
};

std::ostream& operator<<(std::ostream& os, Cell c);

using Date = std::chrono::sys_days;

Date parse_date(std::string_view iso);  // "YYYY-MM-DD"
std::string format_date(Date d);
double years_between(Date from, Date to);  // 365.25-day years

// The 54 measured 24-2 locations inside the 8x9 grid for one eye.
class Mask24x2 {
 public:
  Mask24x2() = default;
  Mask24x2(Eye eye, std::array<bool, kGridCells> valid, std::array<Cell, 2> blind_spot);

  Eye eye() const { return eye_; }
  bool contains(Cell c) const;
  bool is_blind_spot(Cell c) const;
  const std::array<Cell, 2>& blind_spot() const { return blind_spot_; }
  // Valid cells in row-major order; this is also the record value order.
  const std::vector<Cell>& cells() const { return cells_; }
  std::size_t size() const { return cells_.size(); }
  const std::array<bool, kGridCells>& bitmap() const { return valid_; }

 private:
  Eye eye_ = Eye::right;
  std::array<bool, kGridCells> valid_{};
  std::array<Cell, 2> blind_spot_{};
  std::vector<Cell> cells_;
};

// Canonical layout. Row spans: 2-5, 1-6, 0-7, 0-8, 0-8, 0-7, 1-6, 2-5.
// Blind spot (3,7),(4,7) for the right eye and (3,1),(4,1) for the left.
const Mask24x2& build_mask(Eye eye);

struct VisualField {
  std::string patient_id;
  Eye eye = Eye::right;
  Gender gender = Gender::female;
  double age_years = 0.0;
  Date test_date{};
  int test_index = 1;
  // Grid-indexed sensitivities in dB; NaN marks an absent value.
  std::array<double, kGridCells> values;

  VisualField();
  double at(Cell c) const { return values[static_cast<std::size_t>(c.index())]; }
  double& at(Cell c) { return values[static_cast<std::size_t>(c.index())]; }

  friend bool operator==(const VisualField&, const VisualField&);
};

struct Violation {
  std::string where;
  std::string rule;
  std::string message() const { return where + ": " + rule; }
};

std::vector<Violation> validate_field(const VisualField& f);

// Cross-record rule: test_index strictly increases with test_date within
// each (patient, eye) series, and no (patient, eye, test_index) repeats.
std::vector<Violation> validate_dataset(const std::vector<VisualField>& fields);

bool is_two_decimal(double v);
double round2(double v);

struct NormativeSurface {
  std::array<double, kGridCells> expected;
  NormativeSurface();
};

// Unweighted mean total deviation over the 52 non-blind-spot cells.
double mean_deviation(const VisualField& f, const NormativeSurface& n);

// JSON Lines codec. parse_record validates the result and throws
// ParseError naming the offending key; serialize_record refuses invalid
// fields with a DataError listing the violations.
VisualField parse_record(std::string_view line);
std::string serialize_record(const VisualField& f);

std::vector<VisualField> read_dataset(const std::string& path);
void write_dataset(const std::string& path, const std::vector<VisualField>& fields);

}  // namespace hvfcast
