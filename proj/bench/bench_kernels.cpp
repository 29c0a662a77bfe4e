// Parallel kernels and client-parallel rounds against their serial
// counterparts. On a single core the two should be within noise.

#include <benchmark/benchmark.h>

#include <vector>

#include "fedadapt/adapter.hpp"
#include "fedadapt/config.hpp"
#include "fedadapt/fed.hpp"
#include "fedadapt/kernels.hpp"
#include "fedadapt/rng.hpp"
#include "fedadapt/session.hpp"

using namespace fedadapt;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
  SeededRng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const std::size_t k = m, n = m;
  const auto a = random_vec(m * k, 1), b = random_vec(k * n, 2), bias = random_vec(n, 3);
  std::vector<double> c(m * n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::gemm(a, b, bias, c, m, k, n);
    } else {
      kernels::reference::gemm(a, b, bias, c, m, k, n);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["threads"] = Parallel ? kernels::max_threads() : 1;
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * m * k * n));
}
BENCHMARK(BM_Gemm<true>)->Name("gemm/parallel")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_Gemm<false>)->Name("gemm/reference")->Arg(64)->Arg(128)->Arg(256);

template <bool Parallel>
void BM_GemmTn(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto a = random_vec(m * m, 4), b = random_vec(m * m, 5);
  std::vector<double> c(m * m);
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::gemm_tn_acc(a, b, c, m, m, m);
    } else {
      kernels::reference::gemm_tn_acc(a, b, c, m, m, m);
    }
    benchmark::DoNotOptimize(c.data());
  }
}
BENCHMARK(BM_GemmTn<true>)->Name("gemm_tn/parallel")->Arg(128);
BENCHMARK(BM_GemmTn<false>)->Name("gemm_tn/reference")->Arg(128);

template <bool Parallel>
void BM_Round(benchmark::State& state) {
  SessionConfig c;
  c.model.layers = 4;
  c.model.hidden = 32;
  c.model.ffn_dim = 64;
  c.task.samples_per_label = 50;
  c.parallel = Parallel;
  c.cache = false;
  const Environment env = build_environment(c, 1);
  SeededRng rng(7);
  TrackSlot slot;
  slot.model = insert_adapters(env.backbone, {4, 16}, 8, rng);
  slot.participants = c.total_participants();
  FederationOptions opts;
  opts.local = c.local;
  opts.local.use_cache = false;
  opts.parallel = Parallel;
  for (auto _ : state) {
    state.PauseTiming();
    Federation fed(env.clients, opts, 3);
    TrackSlot s = slot;
    TrackSlot* tracks[] = {&s};
    state.ResumeTiming();
    benchmark::DoNotOptimize(fed.run_round(tracks));
  }
}
BENCHMARK(BM_Round<true>)->Name("round/parallel_clients")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Round<false>)->Name("round/serial_clients")->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
