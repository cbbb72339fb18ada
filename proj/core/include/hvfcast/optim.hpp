#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "hvfcast/tape.hpp"

namespace hvfcast::nn {

struct AdamState {
  std::int64_t step_count = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<Tensor> first_moment;   // lazily shaped like each parameter
  std::vector<Tensor> second_moment;
};

// One bias-corrected Adam update over every parameter, then zeroes the
// gradients. Throws DivergenceError naming the first non-finite gradient.
void adam_step(ParamSet& params, AdamState& state);

struct GradCheckOptions {
  double eps = 1e-6;
  // Coordinates whose +/- kink_probe perturbation changes the kink
  // signature are skipped.
  double kink_probe = 1e-4;
  // 0 checks every coordinate; otherwise a seeded uniform sample.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
};

// Compares reverse-mode gradients of a scalar loss against central finite
// differences, coordinate by coordinate. `loss` must rebuild the graph on
// the tape it is given and return a scalar node.
GradCheckResult grad_check(ParamSet& params, const std::function<Var(Tape&)>& loss,
                           const GradCheckOptions& opts = {});

}  // namespace hvfcast::nn
