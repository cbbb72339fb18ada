#include "hvfcast/synthsim.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "hvfcast/error.hpp"
#include "hvfcast/seed.hpp"
#include "json.hpp"

namespace hvfcast::sim {

using nlohmann::json;

namespace {

constexpr std::array<std::string_view, kArchetypeCount> kNames{
    "normal", "diffuse", "superior_arcuate", "inferior_arcuate", "nasal_step", "paracentral", "stable_hemianopia"};

// Positive toward the nasal side of the tested eye.
double nasal_x(Cell c, Eye eye) {
  const double x = cell_position(c, eye).x;
  return eye == Eye::right ? -x : x;
}

ArchetypeTemplate make_template(Archetype a, Eye eye) {
  ArchetypeTemplate t;
  t.kind = a;
  const auto& mask = build_mask(eye);
  for (const Cell c : mask.cells()) {
    const auto [x, y] = cell_position(c, eye);
    const double ecc = eccentricity(c, eye);
    const double xn = nasal_x(c, eye);
    bool hit = false;
    switch (a) {
      case Archetype::normal: break;
      case Archetype::diffuse: hit = true; break;
      case Archetype::superior_arcuate: hit = y > 0 && ecc >= 8.0 && xn > -10.0; break;
      case Archetype::inferior_arcuate: hit = y < 0 && ecc >= 8.0 && xn > -10.0; break;
      case Archetype::nasal_step: hit = y > 0 && xn >= 9.0; break;
      case Archetype::paracentral: hit = y > 0 && ecc < 12.0; break;
      case Archetype::stable_hemianopia: hit = x < 0; break;
    }
    const auto i = static_cast<std::size_t>(c.index());
    t.affected[i] = hit;
    t.multiplier[i] = hit && a != Archetype::stable_hemianopia ? 1.0 : 0.0;
  }
  switch (a) {
    case Archetype::normal: break;
    case Archetype::diffuse: t.depth_min = 0.0, t.depth_max = 4.0; break;
    case Archetype::stable_hemianopia: t.depth_min = 20.0, t.depth_max = 30.0; break;
    default: t.depth_min = 2.0, t.depth_max = 10.0; break;
  }
  return t;
}

Grid onset_baseline(double age, Eye eye, const ArchetypeTemplate& tpl, double depth) {
  Grid g;
  g.fill(std::numeric_limits<double>::quiet_NaN());
  for (const Cell c : build_mask(eye).cells()) {
    const auto i = static_cast<std::size_t>(c.index());
    g[i] = normative_sensitivity(age, c, eye) - (tpl.affected[i] ? depth : 0.0);
  }
  return g;
}

}  // namespace

std::string_view to_string(Archetype a) { return kNames[static_cast<std::size_t>(a)]; }

Archetype parse_archetype(std::string_view s) {
  for (std::size_t i = 0; i < kNames.size(); ++i)
    if (kNames[i] == s) return static_cast<Archetype>(i);
  throw DataError("unknown archetype '" + std::string(s) + "'");
}

const ArchetypeTemplate& archetype_template(Archetype a, Eye eye) {
  static const auto table = [] {
    std::array<std::array<ArchetypeTemplate, 2>, kArchetypeCount> t;
    for (int i = 0; i < kArchetypeCount; ++i) {
      t[i][0] = make_template(static_cast<Archetype>(i), Eye::right);
      t[i][1] = make_template(static_cast<Archetype>(i), Eye::left);
    }
    return t;
  }();
  return table[static_cast<std::size_t>(a)][eye == Eye::right ? 0 : 1];
}

FieldPoint cell_position(Cell c, Eye eye) {
  // Right eye: columns 0..8 at -27..+21 (blind spot at +15). Left eye is
  // shifted so its blind spot lands at -15.
  const double x = eye == Eye::right ? 6.0 * c.col - 27.0 : 6.0 * c.col - 21.0;
  const double y = 21.0 - 6.0 * c.row;
  return {x, y};
}

double eccentricity(Cell c, Eye eye) {
  const auto [x, y] = cell_position(c, eye);
  return std::hypot(x, y);
}

double normative_sensitivity(double age, Cell c, Eye eye) {
  return std::clamp(34.0 - 0.06 * (age - 45.0) - 0.15 * eccentricity(c, eye), 0.0, 40.0);
}

NormativeSurface normative_surface(double age, Eye eye) {
  NormativeSurface n;
  for (const Cell c : build_mask(eye).cells())
    n.expected[static_cast<std::size_t>(c.index())] = normative_sensitivity(age, c, eye);
  return n;
}

Grid progress_field(const Grid& baseline, const ArchetypeTemplate& tpl, double rate, double t) {
  Grid out = baseline;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (std::isnan(out[i])) continue;
    out[i] = std::clamp(baseline[i] - rate * tpl.multiplier[i] * t, 0.0, 40.0);
  }
  return out;
}

double noise_sd(double value) { return std::clamp(1.0 + 0.12 * (34.0 - value), 1.0, 6.0); }

Grid add_noise(const Grid& values, Eye eye, std::mt19937_64& rng) {
  Grid out = values;
  for (const Cell c : build_mask(eye).cells()) {
    const auto i = static_cast<std::size_t>(c.index());
    std::normal_distribution<double> noise(0.0, noise_sd(values[i]));
    out[i] = round2(std::clamp(values[i] + noise(rng), kMinDb, kMaxDb));
  }
  return out;
}

void CohortConfig::validate() const {
  if (patients < 1) throw DataError("cohort: patients must be >= 1");
  if (min_tests < 1 || max_tests < min_tests) throw DataError("cohort: bad tests-per-eye range");
  if (!(min_span_years > 0.0) || max_span_years < min_span_years) throw DataError("cohort: bad follow-up span");
  double total = 0.0;
  for (double w : archetype_weights) {
    if (w < 0.0) throw DataError("cohort: archetype weights must be nonnegative");
    total += w;
  }
  if (!(total > 0.0)) throw DataError("cohort: archetype weights sum to zero");
  if (min_rate < 0.0 || max_rate < min_rate) throw DataError("cohort: bad progression rate range");
  if (min_age < 0.0 || max_age < min_age) throw DataError("cohort: bad age range");
}

Grid EyeTruth::noiseless_values(double years) const {
  const auto& tpl = archetype_template(archetype, eye);
  return progress_field(onset_baseline(baseline_age + years, eye, tpl, depth), tpl, rate, years);
}

Cohort generate_cohort(const CohortConfig& cfg) {
  cfg.validate();
  Cohort cohort;
  cohort.config = cfg;
  const Date earliest{std::chrono::year{2000} / 1 / 1};
  const Date latest{std::chrono::year{2010} / 12 / 31};
  std::discrete_distribution<int> pick_archetype(cfg.archetype_weights.begin(), cfg.archetype_weights.end());

  for (int p = 0; p < cfg.patients; ++p) {
    std::mt19937_64 rng(derive_seed(cfg.seed, "patient", {static_cast<std::uint64_t>(p)}));
    auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    auto integer = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

    char id[16];
    std::snprintf(id, sizeof id, "P%05d", p + 1);
    const Gender gender = integer(0, 1) == 0 ? Gender::male : Gender::female;
    const double baseline_age = uniform(cfg.min_age, cfg.max_age);

    std::vector<Eye> eyes;
    if (uniform(0.0, 1.0) < cfg.two_eye_probability) eyes = {Eye::right, Eye::left};
    else eyes = {integer(0, 1) == 0 ? Eye::right : Eye::left};

    // Shared schedule for both eyes: first visit, last visit at the span,
    // distinct days in between.
    const int n_tests = integer(cfg.min_tests, cfg.max_tests);
    const double span = uniform(cfg.min_span_years, cfg.max_span_years);
    const int span_days = std::max(static_cast<int>(std::lround(span * 365.25)), n_tests - 1);
    const Date first = earliest + std::chrono::days{integer(0, static_cast<int>((latest - earliest).count()))};
    std::set<int> offsets{0};
    if (n_tests > 1) offsets.insert(span_days);
    while (static_cast<int>(offsets.size()) < n_tests) offsets.insert(integer(1, span_days - 1));
    std::vector<Date> dates;
    for (int off : offsets) dates.push_back(first + std::chrono::days{off});

    for (const Eye eye : eyes) {
      EyeTruth truth;
      truth.patient_id = id;
      truth.eye = eye;
      truth.gender = gender;
      truth.archetype = static_cast<Archetype>(pick_archetype(rng));
      const auto& tpl = archetype_template(truth.archetype, eye);
      truth.rate = truth.archetype == Archetype::normal || truth.archetype == Archetype::stable_hemianopia
                       ? 0.0
                       : uniform(cfg.min_rate, cfg.max_rate);
      truth.depth = tpl.depth_max > 0.0 ? uniform(tpl.depth_min, tpl.depth_max) : 0.0;
      truth.baseline_age = baseline_age;
      truth.test_dates = dates;

      for (std::size_t k = 0; k < dates.size(); ++k) {
        const double t = years_between(first, dates[k]);
        Grid values = truth.noiseless_values(t);
        if (cfg.noise) {
          values = add_noise(values, eye, rng);
        } else {
          for (const Cell c : build_mask(eye).cells()) {
            auto& v = values[static_cast<std::size_t>(c.index())];
            v = round2(v);
          }
        }
        VisualField f;
        f.patient_id = id;
        f.eye = eye;
        f.gender = gender;
        f.age_years = baseline_age + t;
        f.test_date = dates[k];
        f.test_index = static_cast<int>(k) + 1;
        f.values = values;
        cohort.fields.push_back(std::move(f));
      }
      cohort.truth.push_back(std::move(truth));
    }
  }
  return cohort;
}

std::string Cohort::meta_json() const {
  json weights = json::object();
  for (int i = 0; i < kArchetypeCount; ++i) weights[std::string(kNames[i])] = config.archetype_weights[i];
  json j = {{"config",
             {{"patients", config.patients},
              {"min_tests", config.min_tests},
              {"max_tests", config.max_tests},
              {"min_span_years", config.min_span_years},
              {"max_span_years", config.max_span_years},
              {"archetype_weights", weights},
              {"min_rate", config.min_rate},
              {"max_rate", config.max_rate},
              {"min_age", config.min_age},
              {"max_age", config.max_age},
              {"two_eye_probability", config.two_eye_probability},
              {"noise", config.noise},
              {"seed", config.seed}}}};
  json eyes = json::array();
  for (const auto& t : truth) {
    json dates = json::array();
    for (auto d : t.test_dates) dates.push_back(format_date(d));
    eyes.push_back({{"patient_id", t.patient_id},
                    {"eye", hvfcast::to_string(t.eye)},
                    {"gender", hvfcast::to_string(t.gender)},
                    {"archetype", to_string(t.archetype)},
                    {"rate", t.rate},
                    {"depth", t.depth},
                    {"baseline_age", t.baseline_age},
                    {"test_dates", dates}});
  }
  j["eyes"] = eyes;
  return j.dump(2) + "\n";
}

}  // namespace hvfcast::sim
