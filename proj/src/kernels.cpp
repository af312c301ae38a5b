// Copyright 2026 The MergeForge Authors
// SPDX-License-Identifier: Apache-2.0

#include "mergeforge/kernels.hpp"

#include <algorithm>
#include <cstdlib>

#include "mergeforge/errors.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mergeforge::kernels {
namespace {

void check(const GemmArgs& g) {
  if (g.a.size() < g.m * g.k || g.b.size() < g.k * g.n ||
      g.c.size() < g.m * g.n) {
    throw DimensionMismatch("gemm buffer smaller than declared shape");
  }
}

// Four interleaved partial sums, combined in a fixed order.
inline double dot(const double* x, const double* y, std::size_t k) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t p = 0;
  for (; p + 4 <= k; p += 4) {
    s0 += x[p] * y[p];
    s1 += x[p + 1] * y[p + 1];
    s2 += x[p + 2] * y[p + 2];
    s3 += x[p + 3] * y[p + 3];
  }
  for (; p < k; ++p) s0 += x[p] * y[p];
  return (s0 + s1) + (s2 + s3);
}

// Computes row i of C. Shared by both implementations so that the
// per-entry summation order is identical.
inline void gemm_row(const GemmArgs& g, std::size_t i) {
  const std::size_t m = g.m, n = g.n, k = g.k;
  const double* a = g.a.data();
  const double* b = g.b.data();
  double* c = g.c.data() + i * n;
  if (!g.accumulate) std::fill(c, c + n, 0.0);

  if (g.trans_b == Trans::No) {
    // Axpy form: c += a_ip * b_p for p ascending.
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = g.trans_a == Trans::No ? a[i * k + p] : a[p * m + i];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += aip * bp[j];
    }
  } else {
    // Dot form: B is stored n x k.
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      if (g.trans_a == Trans::No) {
        c[j] += dot(a + i * k, bj, k);
      } else {
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * bj[p];
        c[j] += acc;
      }
    }
  }
}

}  // namespace

namespace serial {

void gemm(const GemmArgs& args) {
  check(args);
  for (std::size_t i = 0; i < args.m; ++i) gemm_row(args, i);
}

}  // namespace serial

namespace omp {

void gemm(const GemmArgs& args) {
  check(args);
  const auto m = static_cast<std::ptrdiff_t>(args.m);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < m; ++i) {
    gemm_row(args, static_cast<std::size_t>(i));
  }
}

}  // namespace omp

void gemm(const GemmArgs& args) {
#ifdef _OPENMP
  if (args.m > 1 && args.m * args.n * args.k >= kParallelThreshold &&
      !omp_in_parallel() && omp_get_max_threads() > 1) {
    omp::gemm(args);
    return;
  }
#endif
  serial::gemm(args);
}

void set_thread_cap(int n) {
#ifdef _OPENMP
  if (n > 0) {
    omp_set_num_threads(n);
  } else {
    omp_set_num_threads(omp_get_num_procs());
  }
#else
  (void)n;
#endif
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace mergeforge::kernels
