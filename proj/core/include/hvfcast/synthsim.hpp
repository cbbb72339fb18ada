#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "hvfcast/domain.hpp"

namespace hvfcast::sim {

enum class Archetype {
  normal,
  diffuse,
  superior_arcuate,
  inferior_arcuate,
  nasal_step,
  paracentral,
  stable_hemianopia,
};
inline constexpr int kArchetypeCount = 7;

std::string_view to_string(Archetype a);
Archetype parse_archetype(std::string_view s);

using Grid = std::array<double, kGridCells>;

// Region template for one eye. Cells outside `affected` have multiplier 0.
struct ArchetypeTemplate {
  Archetype kind = Archetype::normal;
  std::array<bool, kGridCells> affected{};
  Grid multiplier{};
  double depth_min = 0.0;  // onset depth range in dB
  double depth_max = 0.0;
};

const ArchetypeTemplate& archetype_template(Archetype a, Eye eye);

// Visual-field coordinates of a cell centre in degrees. Cells sit at
// +-3 + 6k; the two 9-point rows reach 27 deg on the nasal side.
struct FieldPoint {
  double x;
  double y;
};
FieldPoint cell_position(Cell c, Eye eye);
double eccentricity(Cell c, Eye eye);

// clamp(34 - 0.06 (age - 45) - 0.15 ecc, 0, 40)
double normative_sensitivity(double age_years, Cell c, Eye eye);
NormativeSurface normative_surface(double age_years, Eye eye);

// clamp(baseline - rate * multiplier * t, 0, 40) on valid cells; other
// cells are copied through.
Grid progress_field(const Grid& baseline, const ArchetypeTemplate& tpl, double rate, double t_years);

// clamp(1 + 0.12 (34 - value), 1, 6)
double noise_sd(double value);
// Adds test-retest noise on the valid cells of `eye`, clamps to [0, 50]
// and rounds to two decimals.
Grid add_noise(const Grid& values, Eye eye, std::mt19937_64& rng);

struct CohortConfig {
  int patients = 200;
  int min_tests = 3;
  int max_tests = 8;
  double min_span_years = 1.0;
  double max_span_years = 6.0;
  // normal, diffuse, superior_arcuate, inferior_arcuate, nasal_step,
  // paracentral, stable_hemianopia
  std::array<double, kArchetypeCount> archetype_weights{3, 1, 2, 2, 1, 1, 0.5};
  double min_rate = 0.5;  // dB/year on affected cells
  double max_rate = 2.0;
  double min_age = 40.0;
  double max_age = 80.0;
  double two_eye_probability = 0.75;
  bool noise = true;
  std::uint64_t seed = 0;

  void validate() const;
};

// Ground truth for one simulated eye.
struct EyeTruth {
  std::string patient_id;
  Eye eye = Eye::right;
  Gender gender = Gender::female;
  Archetype archetype = Archetype::normal;
  double rate = 0.0;
  double depth = 0.0;
  double baseline_age = 0.0;
  std::vector<Date> test_dates;

  // Noise-free, unrounded sensitivities `years` after the first test.
  Grid noiseless_values(double years) const;
};

struct Cohort {
  CohortConfig config;
  std::vector<VisualField> fields;
  std::vector<EyeTruth> truth;

  // Config echo plus per-eye ground truth.
  std::string meta_json() const;
};

Cohort generate_cohort(const CohortConfig& cfg);

}  // namespace hvfcast::sim
