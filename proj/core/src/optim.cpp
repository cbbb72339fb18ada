#include "hvfcast/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "hvfcast/error.hpp"

namespace hvfcast::nn {

void adam_step(ParamSet& params, AdamState& state) {
  auto& entries = params.entries();
  for (const auto& p : entries)
    if (!p.grad.all_finite()) throw DivergenceError("divergence: non-finite gradient in " + p.name);
  if (state.first_moment.size() != entries.size()) {
    state.first_moment.clear();
    state.second_moment.clear();
    for (const auto& p : entries) {
      state.first_moment.emplace_back(p.value.shape());
      state.second_moment.emplace_back(p.value.shape());
    }
  }
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < entries.size(); ++k) {
    auto& p = entries[k];
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p.value[i] -= state.lr * mhat / (std::sqrt(vhat) + state.epsilon);
    }
    p.grad.fill(0.0);
  }
}

GradCheckResult grad_check(ParamSet& params, const std::function<Var(Tape&)>& loss,
                           const GradCheckOptions& opts) {
  struct Eval {
    double value;
    std::vector<std::int8_t> kinks;
  };
  auto evaluate = [&] {
    Tape t;
    Var l = loss(t);
    return Eval{l.value()[0], t.kink_signature()};
  };

  params.zero_grad();
  std::vector<std::int8_t> base_kinks;
  {
    Tape t;
    Var l = loss(t);
    t.backward(l);
    base_kinks = t.kink_signature();
  }
  std::vector<Tensor> analytic;
  for (const auto& p : params.entries()) analytic.push_back(p.grad);
  params.zero_grad();

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t k = 0; k < params.size(); ++k)
    for (std::size_t i = 0; i < params.entries()[k].value.size(); ++i) coords.emplace_back(k, i);
  if (opts.max_coords && coords.size() > opts.max_coords) {
    std::vector<std::pair<std::size_t, std::size_t>> picked;
    std::mt19937_64 rng(opts.seed);
    std::sample(coords.begin(), coords.end(), std::back_inserter(picked), opts.max_coords, rng);
    coords = std::move(picked);
  }

  GradCheckResult res;
  for (auto [k, i] : coords) {
    double& theta = params.entries()[k].value[i];
    const double theta0 = theta;
    bool kink = false;
    for (double dir : {1.0, -1.0}) {
      theta = theta0 + dir * opts.kink_probe;
      if (evaluate().kinks != base_kinks) kink = true;
    }
    if (kink) {
      theta = theta0;
      ++res.skipped_kinks;
      continue;
    }
    theta = theta0 + opts.eps;
    const double fp = evaluate().value;
    theta = theta0 - opts.eps;
    const double fm = evaluate().value;
    theta = theta0;
    const double fd = (fp - fm) / (2.0 * opts.eps);
    const double ad = analytic[k][i];
    const double rel = std::abs(ad - fd) / std::max({1.0, std::abs(ad), std::abs(fd)});
    res.max_rel_error = std::max(res.max_rel_error, rel);
    ++res.checked;
  }
  return res;
}

}  // namespace hvfcast::nn
