#include <benchmark/benchmark.h>

#include <random>

#include "hvfcast/architectures.hpp"
#include "hvfcast/synthsim.hpp"
#include "hvfcast/tape.hpp"
#include "hvfcast/trainer.hpp"

using namespace hvfcast;

namespace {

nn::Tensor noise(const nn::Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  nn::Tensor t(shape);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

void BM_ConvForward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto x = noise({32, c, 8, 9}, 1), w = noise({c, c, 3, 3}, 2), b = noise({c}, 3);
  for (auto _ : state) {
    nn::Tape t;
    auto y = nn::conv2d(t.constant(x), t.constant(w), t.constant(b));
    benchmark::DoNotOptimize(y.value().ptr());
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_ConvForward)->Arg(8)->Arg(32)->Arg(64);

void BM_ConvBackward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  nn::ParamSet ps;
  auto& x = ps.add("x", noise({32, c, 8, 9}, 1));
  auto& w = ps.add("w", noise({c, c, 3, 3}, 2));
  auto& b = ps.add("b", noise({c}, 3));
  for (auto _ : state) {
    nn::Tape t;
    auto y = nn::sum(nn::conv2d(t.parameter(x), t.parameter(w), t.parameter(b)));
    t.backward(y);
    benchmark::DoNotOptimize(w.grad.ptr());
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_ConvBackward)->Arg(8)->Arg(32)->Arg(64);

void BM_CascadeInfer(benchmark::State& state) {
  auto spec = spec_from_name("Cascade-5");
  const auto w = static_cast<std::size_t>(state.range(0));
  spec.widths = {w, 2 * w, 3 * w};
  const Model m = build_model(spec);
  const auto x = noise({32, 1, 8, 9}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(infer(m, x).ptr());
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_CascadeInfer)->Arg(8)->Arg(21)->Unit(benchmark::kMillisecond);

void BM_TrainEpoch(benchmark::State& state) {
  sim::CohortConfig cc;
  cc.patients = 100;
  cc.seed = 1;
  const auto fields = sim::generate_cohort(cc).fields;
  const auto plan = split_patients(fields, 0.8, 1);
  const Experiment ex(fields, plan);
  auto [tr, va] = ex.fold_pairs(IntervalBin{0}, 0);
  const auto train = encode_pairs(fields, tr, {}), val = encode_pairs(fields, va, {});
  TrainConfig cfg;
  cfg.epochs = 1;
  Model m = build_model(job_spec(spec_from_name("Cascade-3"), {}, cfg, 1));
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(train_model(m, train, val, cfg, ++seed).best_val_mae);
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(train.size()));
}
BENCHMARK(BM_TrainEpoch)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
