#include <benchmark/benchmark.h>

#include "wsx/projections.hpp"

#include <random>

namespace {

std::vector<double> scores(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 2.0);
  std::vector<double> s(n);
  for (auto& x : s) x = d(rng);
  return s;
}

void BM_Softmax(benchmark::State& state) {
  const auto s = scores(std::size_t(state.range(0)), 1);
  wsx::ProjectionConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(wsx::softmax_project(s, cfg));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Softmax)->RangeMultiplier(4)->Range(16, 1024);

void BM_SimplexProject(benchmark::State& state) {
  const auto s = scores(std::size_t(state.range(0)), 2);
  for (auto _ : state) benchmark::DoNotOptimize(wsx::simplex_project(s));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_SimplexProject)->RangeMultiplier(4)->Range(16, 1024);

void BM_TvProx(benchmark::State& state) {
  const auto s = scores(std::size_t(state.range(0)), 3);
  for (auto _ : state) benchmark::DoNotOptimize(wsx::tv_prox(s, 1.0));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TvProx)->RangeMultiplier(4)->Range(16, 1024);

void BM_Fusedmax(benchmark::State& state) {
  const auto s = scores(std::size_t(state.range(0)), 4);
  wsx::ProjectionConfig cfg;
  cfg.kind = wsx::ProjectionKind::fusedmax;
  for (auto _ : state) benchmark::DoNotOptimize(wsx::fusedmax_project(s, cfg));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Fusedmax)->RangeMultiplier(4)->Range(16, 1024);

// forward plus the vector-Jacobian product, as one training step needs
void BM_FusedmaxWithJvp(benchmark::State& state) {
  const auto s = scores(std::size_t(state.range(0)), 5);
  const auto up = scores(std::size_t(state.range(0)), 6);
  wsx::ProjectionConfig cfg;
  cfg.kind = wsx::ProjectionKind::fusedmax;
  for (auto _ : state) {
    wsx::FusedmaxState st;
    benchmark::DoNotOptimize(wsx::fusedmax_project(s, cfg, &st));
    benchmark::DoNotOptimize(wsx::fusedmax_jvp(st, up));
  }
}
BENCHMARK(BM_FusedmaxWithJvp)->Arg(64)->Arg(256);

}  // namespace
