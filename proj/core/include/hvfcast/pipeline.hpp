#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "hvfcast/domain.hpp"
#include "hvfcast/tensor.hpp"

namespace hvfcast {

// Ordered (earlier -> later) same-eye pair. Indices refer to the dataset
// vector the pair was built from.
struct FieldPair {
  std::size_t input = 0;
  std::size_t target = 0;
  double delta_years = 0.0;
};

inline constexpr int kBinCount = 10;

// Horizon bin centred at 1.0, 1.5, ..., 5.5 years. Bin i covers
// [c-0.25, c+0.25) except the last, which is [5.25, 5.5].
struct IntervalBin {
  int index = 0;

  double center() const { return 1.0 + 0.5 * index; }
  double lower() const { return center() - 0.25; }
  double upper() const { return center() + 0.25; }
  std::string label() const;  // "1.0", "1.5", ...
  static IntervalBin from_center(double center);  // throws DataError
  static IntervalBin from_label(std::string_view label);
  friend auto operator<=>(const IntervalBin&, const IntervalBin&) = default;
};

std::optional<IntervalBin> assign_bin(double delta_years);
inline std::optional<IntervalBin> assign_bin(const FieldPair& p) { return assign_bin(p.delta_years); }

// All ordered pairs within each (patient, eye) series.
std::vector<FieldPair> make_pairs(const std::vector<VisualField>& fields);

struct BinnedPair {
  FieldPair pair;
  IntervalBin bin;
};
// make_pairs + assign_bin, excluded pairs dropped.
std::vector<BinnedPair> make_binned_pairs(const std::vector<VisualField>& fields);

inline constexpr int kFoldCount = 10;

struct SplitPlan {
  std::uint64_t seed = 0;
  double ratio = 0.8;
  std::vector<std::string> test_patients;
  std::array<std::vector<std::string>, kFoldCount> folds;

  // Fold index, kTestSide for held-out patients, or kUnknown.
  static constexpr int kTestSide = -1;
  static constexpr int kUnknown = -2;
  int side_of(const std::string& patient_id) const;

  std::string to_json() const;
  static SplitPlan from_json(std::string_view text);
};

SplitPlan split_patients(const std::vector<VisualField>& fields, double ratio = 0.8, std::uint64_t seed = 0);

struct FeatureCombo {
  bool age = false;
  bool gender = false;
  bool eye = false;
  bool test_index = false;

  std::size_t channels() const { return 1 + age + 2 * gender + 2 * eye + test_index; }
  // "hvf" for no clinical features, otherwise e.g. "age+gender+eye+test_index".
  std::string name() const;
  static FeatureCombo parse(std::string_view name);
  // All 16 combinations ordered by bitmask (age=1, gender=2, eye=4, test_index=8).
  static std::vector<FeatureCombo> all();
  friend bool operator==(const FeatureCombo&, const FeatureCombo&) = default;
};

// (channels, 8, 9): dB at valid cells (0 elsewhere), then in order age/100,
// gender one-hot (M, F), eye one-hot (OD, OS), min(test_index, 20)/20.
nn::Tensor encode_input(const VisualField& f, const FeatureCombo& combo);

struct EncodedTarget {
  nn::Tensor grid;          // (1, 8, 9)
  std::vector<bool> mask;   // 72 flags, 54 set
};
EncodedTarget encode_target(const VisualField& f);

// Mask of measured cells shared by both eyes.
std::vector<bool> field_mask(Eye eye);

// Stacks (C, H, W) samples into (N, C, H, W).
nn::Tensor stack(const std::vector<nn::Tensor>& samples);

// Pair files: one JSON object per line referencing dataset records by
// (patient_id, eye, test_index).
void write_pairs(const std::string& path, const std::vector<VisualField>& fields,
                 const std::vector<BinnedPair>& pairs);
std::vector<BinnedPair> read_pairs(const std::string& path, const std::vector<VisualField>& fields);

}  // namespace hvfcast
