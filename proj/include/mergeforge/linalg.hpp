// Copyright 2026 The MergeForge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

namespace mergeforge {

/// Dense row-major matrix of 64-bit reals. Every public constructor rejects
/// non-finite entries; arithmetic helpers below produce new tensors.
class Tensor2D {
 public:
  Tensor2D() = default;
  Tensor2D(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor2D(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Tensor2D identity(std::size_t n);
  static Tensor2D diag(std::span<const double> values);
  static Tensor2D from_rows(
      std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) {
    return data_[r * cols_ + c];
  }
  double operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<double> row(std::size_t r) {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  bool same_shape(const Tensor2D& o) const noexcept {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }
  bool all_finite() const noexcept;

  Tensor2D& operator+=(const Tensor2D& o);
  Tensor2D& operator-=(const Tensor2D& o);
  Tensor2D& operator*=(double s);

  // Exact (bitwise for finite values) equality of shape and entries.
  friend bool operator==(const Tensor2D& a, const Tensor2D& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Tensor2D operator+(Tensor2D a, const Tensor2D& b);
Tensor2D operator-(Tensor2D a, const Tensor2D& b);
Tensor2D operator*(double s, Tensor2D a);

// a += s * b
void axpy(double s, const Tensor2D& b, Tensor2D& a);

Tensor2D transpose(const Tensor2D& a);
Tensor2D matmul(const Tensor2D& a, const Tensor2D& b);     // A B
Tensor2D matmul_tn(const Tensor2D& a, const Tensor2D& b);  // A^T B
Tensor2D matmul_nt(const Tensor2D& a, const Tensor2D& b);  // A B^T

double trace(const Tensor2D& a);
double frobenius_dot(const Tensor2D& a, const Tensor2D& b);
double frobenius_norm(const Tensor2D& a);
double max_abs_diff(const Tensor2D& a, const Tensor2D& b);

/// Frobenius cosine Tr(A^T B) / (|A|_F |B|_F). Throws ZeroMatrix when either
/// operand has zero norm.
double frobenius_cos(const Tensor2D& a, const Tensor2D& b);

// --- Symmetric positive-definite factorization and solves ---

/// Lower Cholesky factor of A + jitter_used * I.
struct CholeskyFactor {
  Tensor2D lower;
  double jitter_used = 0.0;
};

/// Factorizes A + jitter * I. If that fails, retries with extra diagonal
/// loading of {1e-10, 1e-8, 1e-6} * trace(A)/d on top of `jitter`. Throws
/// NotPositiveDefinite (carrying the last jitter tried) when every rung fails.
CholeskyFactor cholesky(const Tensor2D& a, double jitter = 0.0);

/// Factorizes A + jitter * I with no escalation. Returns false on a
/// non-positive pivot.
bool try_cholesky(const Tensor2D& a, double jitter, Tensor2D& lower);

// In-place triangular solves on the columns of B using a lower factor L.
void solve_lower(const Tensor2D& lower, Tensor2D& b);    // L X = B
void solve_lower_t(const Tensor2D& lower, Tensor2D& b);  // L^T X = B

struct SpdSolution {
  Tensor2D x;
  double jitter_used = 0.0;
};

/// Solves (A + jitter I) X = B through the jitter ladder of cholesky().
SpdSolution solve_spd(const Tensor2D& a, const Tensor2D& b,
                      double jitter = 0.0);

/// Convenience wrapper over solve_spd returning only X.
Tensor2D cholesky_solve(const Tensor2D& a, const Tensor2D& b,
                        double jitter = 0.0);

/// Relative asymmetry max|A - A^T| / max(1, max|A|).
double asymmetry(const Tensor2D& a);

// --- Sampling ---

/// Draws a matrix whose rows are independent N(mean_row, row_cov):
/// mean + Z L^T with L = chol(row_cov) and Z i.i.d. standard normal drawn
/// row-major from a generator seeded with `seed`.
Tensor2D sample_matrix_gaussian(const Tensor2D& mean, const Tensor2D& row_cov,
                                std::uint64_t seed);

/// Same draw with a precomputed factor of row_cov.
Tensor2D sample_matrix_gaussian_factored(const Tensor2D& mean,
                                         const Tensor2D& row_cov_lower,
                                         std::uint64_t seed);

}  // namespace mergeforge
