// Copyright 2026 The MergeForge Authors
// SPDX-License-Identifier: Apache-2.0

// Dense row-major matrix products.
//
// Two implementations with identical semantics are provided: `serial` is the
// reference, `omp` splits output rows across OpenMP threads. Every output
// entry is accumulated by a single thread in ascending inner-index order, so
// the two produce bit-identical results for any thread count. `gemm` picks
// one of them based on problem size.

#pragma once

#include <cstddef>
#include <span>

namespace mergeforge::kernels {

enum class Trans { No, Yes };

// C (m x n) = op(A) * op(B) (+ C when accumulate), where op(A) is m x k and
// op(B) is k x n. A and B are row-major with their stored shapes implied by
// the transpose flags.
struct GemmArgs {
  Trans trans_a = Trans::No;
  Trans trans_b = Trans::No;
  std::size_t m = 0;
  std::size_t n = 0;
  std::size_t k = 0;
  std::span<const double> a;
  std::span<const double> b;
  std::span<double> c;
  bool accumulate = false;
};

namespace serial {
void gemm(const GemmArgs& args);
}  // namespace serial

namespace omp {
void gemm(const GemmArgs& args);
}  // namespace omp

// Dispatches to omp::gemm for large problems outside a parallel region.
void gemm(const GemmArgs& args);

// Problem size (m*n*k) above which gemm() goes parallel.
inline constexpr std::size_t kParallelThreshold = 1u << 15;

// Caps the worker count for subsequent parallel regions (n <= 0 resets to
// the runtime default). No-op without OpenMP.
void set_thread_cap(int n);
int max_threads();

}  // namespace mergeforge::kernels
