#pragma once

#include <chrono>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "hvfcast/domain.hpp"
#include "hvfcast/tensor.hpp"

namespace hvfcast::testing {

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

inline nn::Tensor random_tensor(const nn::Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  nn::Tensor t(shape);
  for (auto& v : t.data()) v = uniform(rng, lo, hi);
  return t;
}

// Valid field with two-decimal values in [0, 50].
inline VisualField random_field(std::mt19937_64& rng) {
  VisualField f;
  f.patient_id = "R" + std::to_string(uniform_int(rng, 0, 99999));
  f.eye = uniform_int(rng, 0, 1) ? Eye::left : Eye::right;
  f.gender = uniform_int(rng, 0, 1) ? Gender::male : Gender::female;
  f.age_years = uniform_int(rng, 1800, 9000) / 100.0;
  f.test_date = Date{std::chrono::days{uniform_int(rng, 9000, 20000)}};
  f.test_index = uniform_int(rng, 1, 40);
  for (const Cell c : build_mask(f.eye).cells()) f.at(c) = uniform_int(rng, 0, 5000) / 100.0;
  return f;
}

// Series of `n` tests on one eye at the given day offsets.
inline std::vector<VisualField> eye_series(const std::string& patient, Eye eye, const std::vector<int>& day_offsets,
                                           double value = 30.0) {
  std::vector<VisualField> out;
  const Date start{std::chrono::year{2005} / 1 / 1};
  for (std::size_t i = 0; i < day_offsets.size(); ++i) {
    VisualField f;
    f.patient_id = patient;
    f.eye = eye;
    f.age_years = 60.0 + day_offsets[i] / 365.25;
    f.test_date = start + std::chrono::days{day_offsets[i]};
    f.test_index = static_cast<int>(i) + 1;
    for (const Cell c : build_mask(eye).cells()) f.at(c) = value;
    out.push_back(f);
  }
  return out;
}

// Fresh scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::mt19937_64 rng(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() / ("hvfcast-test-" + std::to_string(rng()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

}  // namespace hvfcast::testing
