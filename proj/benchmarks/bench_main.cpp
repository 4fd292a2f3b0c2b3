#include <benchmark/benchmark.h>

#include "seqmatch/engine.hpp"
#include "seqmatch/inference.hpp"
#include "seqmatch/numstat/distributions.hpp"
#include "seqmatch/rng.hpp"

using namespace seqmatch;

static void BM_AllocateTrial(benchmark::State& state) {
  const auto n = state.range(0);
  const auto p = state.range(1);
  for (auto _ : state) {
    TrialState trial(EngineConfig{p, n, 0.10}, 1);
    CounterRng data(2);
    Eigen::VectorXd x(p);
    for (std::int64_t t = 0; t < n; ++t) {
      for (Eigen::Index j = 0; j < p; ++j) x[j] = data.normal();
      benchmark::DoNotOptimize(trial.allocate(x));
    }
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_AllocateTrial)->Args({100, 2})->Args({1000, 2})->Args({1000, 8});

static void BM_FQuantile(benchmark::State& state) {
  double q = 0.01;
  for (auto _ : state) {
    benchmark::DoNotOptimize(numstat::f_quantile(q, 2.0, 97.0));
    q = q < 0.98 ? q + 0.01 : 0.01;
  }
}
BENCHMARK(BM_FQuantile);

static void BM_ExactTestMonteCarlo(benchmark::State& state) {
  CounterRng rng(3);
  PairedSample pairs;
  pairs.differences.resize(40);
  pairs.diff_covariates.resize(40, 0);
  for (Eigen::Index k = 0; k < 40; ++k) pairs.differences[k] = 1.0 + rng.normal();
  ReservoirSample res;
  res.responses_t.resize(10);
  res.responses_c.resize(10);
  res.covariates_t.resize(10, 0);
  res.covariates_c.resize(10, 0);
  for (Eigen::Index i = 0; i < 10; ++i) {
    res.responses_t[i] = 1.0 + rng.normal();
    res.responses_c[i] = rng.normal();
  }
  ExactTestOptions opt;
  opt.draws = state.range(0);
  for (auto _ : state) benchmark::DoNotOptimize(exact_test(pairs, res, 0.0, opt));
}
BENCHMARK(BM_ExactTestMonteCarlo)->Arg(1000)->Arg(10000);
BENCHMARK_MAIN();
