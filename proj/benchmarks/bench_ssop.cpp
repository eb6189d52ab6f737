#include <benchmark/benchmark.h>

#include "ssop/bench.hpp"
#include "ssop/fft.hpp"

namespace {

using namespace ssop;

// Smoke-scale problem shared by every benchmark.
struct Fixture {
  bench::ExperimentConfig config = bench::smoke_config();
  bench::Setup setup = bench::make_setup(config);
  TrainingData data = bench::generate_training(setup, config);
  bench::TestSet tests = bench::generate_tests(setup, config);
  bench::Trained trained = bench::train(setup, data, config, config.r);
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

void BM_ForwardDft(benchmark::State& state) {
  const auto n = static_cast<int>(state.range(0));
  const CMat x = CMat::Random(64, n);
  for (auto _ : state) benchmark::DoNotOptimize(fft::forward(x));
}
BENCHMARK(BM_ForwardDft)->Arg(64)->Arg(256);

void BM_Spod(benchmark::State& state) {
  Fixture& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(compute_spod(f.data.stack, f.setup.grid.weights, f.config.r));
}
BENCHMARK(BM_Spod)->Unit(benchmark::kMillisecond);

void BM_ConstantTerm(benchmark::State& state) {
  Fixture& f = fixture();
  OnlineModel model(f.trained.ops);
  for (auto _ : state) benchmark::DoNotOptimize(model.constant_term(f.tests.forcing[0], f.tests.q0[0]));
}
BENCHMARK(BM_ConstantTerm)->Unit(benchmark::kMicrosecond);

void BM_DeimNonlinearTerm(benchmark::State& state) {
  Fixture& f = fixture();
  OnlineModel model(f.trained.ops);
  const CVec a = model.constant_term(f.tests.forcing[0], f.tests.q0[0]);
  CVec w;
  for (auto _ : state) {
    model.nonlinear_term(a, w);
    benchmark::DoNotOptimize(w.data());
  }
}
BENCHMARK(BM_DeimNonlinearTerm)->Unit(benchmark::kMicrosecond);

void BM_SsopSolve(benchmark::State& state) {
  Fixture& f = fixture();
  OnlineModel model(f.trained.ops);
  SolveOptions o;
  for (auto _ : state) benchmark::DoNotOptimize(model.solve(f.tests.forcing[0], f.tests.q0[0], o));
}
BENCHMARK(BM_SsopSolve)->Unit(benchmark::kMillisecond);

void BM_PodGalerkinIntegrate(benchmark::State& state) {
  Fixture& f = fixture();
  const CVec a0 = winner(f.trained.pod.phi, f.setup.grid.weights, f.tests.q0[0]);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        integrate_rom_coefficients(f.trained.pod, a0, f.tests.forcing[0], f.config.n_omega, f.config.dt));
  }
}
BENCHMARK(BM_PodGalerkinIntegrate)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
