#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "hvfcast/error.hpp"
#include "hvfcast/pipeline.hpp"
#include "hvfcast/tape.hpp"
#include "support.hpp"

using namespace hvfcast;
using hvfcast::testing::eye_series;
using hvfcast::testing::uniform_int;

namespace {

struct RefPair {
  std::size_t input, target;
  double delta;
  auto operator<=>(const RefPair&) const = default;
};

// Brute force over every ordered (i, j) with matching patient and eye.
std::vector<RefPair> brute_pairs(const std::vector<VisualField>& f) {
  std::vector<RefPair> out;
  for (std::size_t i = 0; i < f.size(); ++i)
    for (std::size_t j = 0; j < f.size(); ++j)
      if (f[i].patient_id == f[j].patient_id && f[i].eye == f[j].eye && f[i].test_date < f[j].test_date)
        out.push_back({i, j, (f[j].test_date - f[i].test_date).count() / 365.25});
  std::sort(out.begin(), out.end());
  return out;
}

std::optional<int> brute_bin(double d) {
  if (d < 0.75 || d > 5.5) return std::nullopt;
  return std::min(9, static_cast<int>(std::floor((d - 0.75) / 0.5)));
}

std::vector<VisualField> random_cohort(std::mt19937_64& rng, int patients, int max_tests = 6) {
  std::vector<VisualField> out;
  for (int p = 0; p < patients; ++p) {
    const std::string id = "P" + std::to_string(1000 + p);
    for (Eye eye : {Eye::right, Eye::left}) {
      if (eye == Eye::left && uniform_int(rng, 0, 1)) continue;
      std::set<int> days;
      const int n = uniform_int(rng, 1, max_tests);
      while (static_cast<int>(days.size()) < n) days.insert(uniform_int(rng, 0, 2600));
      auto s = eye_series(id, eye, {days.begin(), days.end()});
      out.insert(out.end(), s.begin(), s.end());
    }
  }
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

std::vector<VisualField> patients(int n) {
  std::vector<VisualField> out;
  for (int p = 0; p < n; ++p) {
    auto s = eye_series("P" + std::to_string(p), Eye::right, {0, 400});
    auto t = eye_series("P" + std::to_string(p), Eye::left, {0, 400});
    out.insert(out.end(), s.begin(), s.end());
    out.insert(out.end(), t.begin(), t.end());
  }
  return out;
}

}  // namespace

TEST(Pairs, FourTestsGiveSixPairs) {
  const auto f = eye_series("A", Eye::right, {0, 365, 767, 2191});
  auto pairs = make_pairs(f);
  ASSERT_EQ(pairs.size(), 6u);
  std::vector<double> d;
  for (const auto& p : pairs) d.push_back(p.delta_years);
  const double expect[] = {1.0, 2.1, 6.0, 1.1, 5.0, 3.9};
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(d[i], expect[i], 0.01) << i;
}

TEST(Pairs, SingleTestHasNone) { EXPECT_TRUE(make_pairs(eye_series("A", Eye::left, {0})).empty()); }

TEST(Pairs, NoCrossEyePairs) {
  auto f = eye_series("A", Eye::right, {0, 400});
  const auto g = eye_series("A", Eye::left, {0, 400});
  f.insert(f.end(), g.begin(), g.end());
  EXPECT_EQ(make_pairs(f).size(), 2u);
}

TEST(Pairs, MatchBruteForce) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto f = random_cohort(rng, 15);
    std::vector<RefPair> got;
    for (const auto& p : make_pairs(f)) got.push_back({p.input, p.target, p.delta_years});
    std::sort(got.begin(), got.end());
    EXPECT_EQ(got, brute_pairs(f));
  }
}

TEST(Pairs, CountIsChoose2PerEye) {
  std::mt19937_64 rng(2);
  const auto f = random_cohort(rng, 30, 8);
  std::map<std::pair<std::string, Eye>, std::size_t> n;
  for (const auto& x : f) ++n[{x.patient_id, x.eye}];
  std::size_t expected = 0;
  for (auto& [k, c] : n) expected += c * (c - 1) / 2;
  EXPECT_EQ(make_pairs(f).size(), expected);
}

TEST(Bins, Examples) {
  EXPECT_EQ(assign_bin(1.10)->center(), 1.0);
  EXPECT_FALSE(assign_bin(0.50));
  EXPECT_EQ(assign_bin(3.90)->center(), 4.0);
  EXPECT_EQ(assign_bin(0.75)->center(), 1.0);
  EXPECT_EQ(assign_bin(1.25)->center(), 1.5);
  EXPECT_EQ(assign_bin(5.5)->center(), 5.5);
  EXPECT_FALSE(assign_bin(5.5000001));
  EXPECT_FALSE(assign_bin(6.0));
}

TEST(Bins, MatchIntervalOracle) {
  std::mt19937_64 rng(3);
  std::array<std::size_t, kBinCount> counts{};
  std::size_t excluded = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const double d = hvfcast::testing::uniform(rng, 0.0, 7.0);
    const auto got = assign_bin(d);
    const auto want = brute_bin(d);
    ASSERT_EQ(got.has_value(), want.has_value()) << d;
    if (got) {
      ASSERT_EQ(got->index, *want) << d;
      ++counts[got->index];
    } else {
      ++excluded;
    }
  }
  std::size_t total = excluded;
  for (auto c : counts) total += c;
  EXPECT_EQ(total, static_cast<std::size_t>(n));
}

TEST(Bins, Labels) {
  EXPECT_EQ(IntervalBin{0}.label(), "1.0");
  EXPECT_EQ(IntervalBin{9}.label(), "5.5");
  EXPECT_EQ(IntervalBin::from_label("2.5").index, 3);
  try {
    IntervalBin::from_center(6.0);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_STREQ(e.what(), "interval outside [1.0, 5.5]");
  }
}

TEST(Split, HundredPatients) {
  const auto plan = split_patients(patients(100), 0.8, 5);
  EXPECT_EQ(plan.test_patients.size(), 20u);
  for (const auto& f : plan.folds) EXPECT_EQ(f.size(), 8u);
}

TEST(Split, SameSeedSamePlan) {
  const auto f = patients(50);
  EXPECT_EQ(split_patients(f, 0.8, 9).to_json(), split_patients(f, 0.8, 9).to_json());
  EXPECT_NE(split_patients(f, 0.8, 9).to_json(), split_patients(f, 0.8, 10).to_json());
}

TEST(Split, PatientLevel) {
  const auto f = patients(40);
  const auto plan = split_patients(f, 0.8, 1);
  std::map<std::string, std::set<int>> sides;
  for (const auto& x : f) sides[x.patient_id].insert(plan.side_of(x.patient_id));
  for (auto& [id, s] : sides) {
    EXPECT_EQ(s.size(), 1u) << id;
    EXPECT_NE(*s.begin(), SplitPlan::kUnknown);
  }
  EXPECT_EQ(plan.side_of("nobody"), SplitPlan::kUnknown);
}

TEST(Split, Disjoint) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const auto plan = split_patients(patients(uniform_int(rng, 20, 120)), hvfcast::testing::uniform(rng, 0.5, 0.9),
                                     rng());
    std::multiset<std::string> seen(plan.test_patients.begin(), plan.test_patients.end());
    for (const auto& fold : plan.folds) seen.insert(fold.begin(), fold.end());
    std::set<std::string> unique(seen.begin(), seen.end());
    EXPECT_EQ(unique.size(), seen.size());
  }
}

TEST(Split, JsonRoundTrip) {
  const auto plan = split_patients(patients(30), 0.8, 2);
  EXPECT_EQ(SplitPlan::from_json(plan.to_json()).to_json(), plan.to_json());
}

TEST(Split, TooFewPatients) { EXPECT_THROW(split_patients(patients(5), 0.8, 1), DataError); }

TEST(Encode, AgeFace) {
  auto f = eye_series("A", Eye::right, {0}).front();
  f.age_years = 62;
  FeatureCombo c;
  c.age = true;
  const auto x = encode_input(f, c);
  ASSERT_EQ(x.shape(), (nn::Shape{2, 8, 9}));
  for (std::size_t i = 0; i < 72; ++i) EXPECT_DOUBLE_EQ(x[72 + i], 0.62);
}

TEST(Encode, ChannelCounts) {
  const auto f = eye_series("A", Eye::right, {0}).front();
  EXPECT_EQ(encode_input(f, {}).dim(0), 1u);
  EXPECT_EQ(encode_input(f, FeatureCombo{true, true, true, true}).dim(0), 7u);
}

TEST(Encode, ChannelOrderFixed) {
  auto f = eye_series("A", Eye::left, {0}).front();
  f.gender = Gender::male;
  f.age_years = 50;
  f.test_index = 30;
  const auto all = FeatureCombo::parse("test_index+eye+gender+age");
  EXPECT_EQ(all, FeatureCombo::parse("age+gender+eye+test_index"));
  EXPECT_EQ(all.name(), "age+gender+eye+test_index");
  const auto x = encode_input(f, all);
  const double expect[] = {0.5, 1.0, 0.0, 0.0, 1.0, 1.0};  // age, M, F, OD, OS, index capped at 20
  for (std::size_t ch = 0; ch < 6; ++ch) EXPECT_DOUBLE_EQ(x[(ch + 1) * 72 + 5], expect[ch]) << ch;
}

TEST(Encode, MaskedCellsZero) {
  const auto f = eye_series("A", Eye::right, {0}, 25.0).front();
  const auto x = encode_input(f, {});
  const auto t = encode_target(f);
  std::size_t on = 0;
  for (std::size_t i = 0; i < 72; ++i) {
    on += t.mask[i];
    EXPECT_EQ(x[i], t.mask[i] ? 25.0 : 0.0);
    EXPECT_EQ(t.grid[i], t.mask[i] ? 25.0 : 0.0);
  }
  EXPECT_EQ(on, 54u);
  EXPECT_EQ(nn::masked_mae_value(t.grid.reshaped({1, 1, 8, 9}), t.grid.reshaped({1, 1, 8, 9}), t.mask), 0.0);
}

TEST(Encode, ComboNames) {
  const auto all = FeatureCombo::all();
  ASSERT_EQ(all.size(), 16u);
  std::set<std::string> names;
  for (const auto& c : all) {
    names.insert(c.name());
    EXPECT_EQ(FeatureCombo::parse(c.name()), c);
  }
  EXPECT_EQ(names.size(), 16u);
  EXPECT_EQ(all.front().name(), "hvf");
  EXPECT_THROW(FeatureCombo::parse("age+iop"), DataError);
}

TEST(PairsFile, RoundTrip) {
  hvfcast::testing::TempDir dir;
  std::mt19937_64 rng(5);
  const auto f = random_cohort(rng, 10);
  const auto pairs = make_binned_pairs(f);
  const auto path = (dir / "p.jsonl").string();
  write_pairs(path, f, pairs);
  const auto back = read_pairs(path, f);
  ASSERT_EQ(back.size(), pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    EXPECT_EQ(back[i].pair.input, pairs[i].pair.input);
    EXPECT_EQ(back[i].pair.target, pairs[i].pair.target);
    EXPECT_EQ(back[i].bin, pairs[i].bin);
  }
}
