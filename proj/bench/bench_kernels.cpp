// Copyright 2026 The MergeForge Authors
// SPDX-License-Identifier: Apache-2.0

// Serial reference vs OpenMP gemm, plus the merge hot paths built on it.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "mergeforge/kernels.hpp"
#include "mergeforge/linalg.hpp"
#include "mergeforge/merge.hpp"
#include "mergeforge/stats.hpp"

namespace {

using namespace mergeforge;

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vec(n * n, 1), b = random_vec(n * n, 2);
  std::vector<double> c(n * n);
  kernels::GemmArgs args{kernels::Trans::No, kernels::Trans::No, n, n, n,
                         a, b, c, false};
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::omp::gemm(args);
    } else {
      kernels::serial::gemm(args);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Gemm<false>)->Name("gemm/serial")->RangeMultiplier(2)->Range(32, 512);
BENCHMARK(BM_Gemm<true>)->Name("gemm/omp")->RangeMultiplier(2)->Range(32, 512);

// One module merge: Cholesky of G + lambda I and a triangular solve pair.
void BM_MapMerge(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  const Tensor2D x(d, 4 * d, random_vec(4 * d * d, 3));
  stats::ModuleStats st;
  st.gram = matmul_nt(x, x);
  st.cross = Tensor2D(d, d, random_vec(d * d, 4));
  const Tensor2D u0(d, d);
  for (auto _ : state) {
    benchmark::DoNotOptimize(merge::map_merge(st, u0, 0.1));
  }
}
BENCHMARK(BM_MapMerge)->RangeMultiplier(2)->Range(16, 256);

template <bool Parallel>
void BM_Gram(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  const std::size_t n = 1024;
  const auto x = random_vec(n * d, 5);
  std::vector<double> g(d * d);
  // G = X^T X over n activation rows.
  kernels::GemmArgs args{kernels::Trans::Yes, kernels::Trans::No, d, d, n,
                         x, x, g, false};
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::omp::gemm(args);
    } else {
      kernels::serial::gemm(args);
    }
    benchmark::DoNotOptimize(g.data());
  }
}
BENCHMARK(BM_Gram<false>)->Name("gram/serial")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_Gram<true>)->Name("gram/omp")->RangeMultiplier(2)->Range(32, 256);

}  // namespace

BENCHMARK_MAIN();
