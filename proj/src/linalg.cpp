// Copyright 2026 The MergeForge Authors
// SPDX-License-Identifier: Apache-2.0

#include "mergeforge/linalg.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <string>
#include <utility>

#include "mergeforge/errors.hpp"
#include "mergeforge/kernels.hpp"
#include "mergeforge/rng.hpp"

namespace mergeforge {
namespace {

std::string shape_str(const Tensor2D& a) {
  return std::to_string(a.rows()) + "x" + std::to_string(a.cols());
}

void require_same_shape(const Tensor2D& a, const Tensor2D& b,
                        const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionMismatch(std::string(op) + ": " + shape_str(a) + " vs " +
                            shape_str(b));
  }
}

void require_square(const Tensor2D& a, const char* op) {
  if (a.rows() != a.cols()) {
    throw DimensionMismatch(std::string(op) + ": expected square, got " +
                            shape_str(a));
  }
}

}  // namespace

Tensor2D::Tensor2D(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {
  if (!std::isfinite(fill)) throw OutOfRange("non-finite fill value");
}

Tensor2D::Tensor2D(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw DimensionMismatch("data length " + std::to_string(data_.size()) +
                            " != " + std::to_string(rows) + "x" +
                            std::to_string(cols));
  }
  if (!all_finite()) throw OutOfRange("non-finite entry in tensor data");
}

Tensor2D Tensor2D::identity(std::size_t n) {
  Tensor2D t(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

Tensor2D Tensor2D::diag(std::span<const double> values) {
  Tensor2D t(values.size(), values.size());
  for (std::size_t i = 0; i < values.size(); ++i) t(i, i) = values[i];
  return t;
}

Tensor2D Tensor2D::from_rows(
    std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionMismatch("ragged row list");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor2D(r, c, std::move(data));
}

bool Tensor2D::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

Tensor2D& Tensor2D::operator+=(const Tensor2D& o) {
  require_same_shape(*this, o, "add");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

Tensor2D& Tensor2D::operator-=(const Tensor2D& o) {
  require_same_shape(*this, o, "sub");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
  return *this;
}

Tensor2D& Tensor2D::operator*=(double s) {
  for (auto& v : data_) v *= s;
  return *this;
}

Tensor2D operator+(Tensor2D a, const Tensor2D& b) { return a += b; }
Tensor2D operator-(Tensor2D a, const Tensor2D& b) { return a -= b; }
Tensor2D operator*(double s, Tensor2D a) { return a *= s; }

void axpy(double s, const Tensor2D& b, Tensor2D& a) {
  require_same_shape(a, b, "axpy");
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < ad.size(); ++i) ad[i] += s * bd[i];
}

Tensor2D transpose(const Tensor2D& a) {
  Tensor2D t(a.cols(), a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t c = 0; c < a.cols(); ++c) t(c, r) = a(r, c);
  }
  return t;
}

Tensor2D matmul(const Tensor2D& a, const Tensor2D& b) {
  if (a.cols() != b.rows()) {
    throw DimensionMismatch("matmul: " + shape_str(a) + " * " + shape_str(b));
  }
  Tensor2D c(a.rows(), b.cols());
  kernels::gemm({.m = a.rows(), .n = b.cols(), .k = a.cols(),
                 .a = a.data(), .b = b.data(), .c = c.data()});
  return c;
}

Tensor2D matmul_tn(const Tensor2D& a, const Tensor2D& b) {
  if (a.rows() != b.rows()) {
    throw DimensionMismatch("matmul_tn: " + shape_str(a) + "^T * " +
                            shape_str(b));
  }
  Tensor2D c(a.cols(), b.cols());
  kernels::gemm({.trans_a = kernels::Trans::Yes, .m = a.cols(),
                 .n = b.cols(), .k = a.rows(), .a = a.data(), .b = b.data(),
                 .c = c.data()});
  return c;
}

Tensor2D matmul_nt(const Tensor2D& a, const Tensor2D& b) {
  if (a.cols() != b.cols()) {
    throw DimensionMismatch("matmul_nt: " + shape_str(a) + " * " +
                            shape_str(b) + "^T");
  }
  Tensor2D c(a.rows(), b.rows());
  kernels::gemm({.trans_b = kernels::Trans::Yes, .m = a.rows(),
                 .n = b.rows(), .k = a.cols(), .a = a.data(), .b = b.data(),
                 .c = c.data()});
  return c;
}

double trace(const Tensor2D& a) {
  require_square(a, "trace");
  double t = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) t += a(i, i);
  return t;
}

double frobenius_dot(const Tensor2D& a, const Tensor2D& b) {
  require_same_shape(a, b, "frobenius_dot");
  double s = 0.0;
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < ad.size(); ++i) s += ad[i] * bd[i];
  return s;
}

double frobenius_norm(const Tensor2D& a) {
  // Scaled accumulation so tiny covariances (1e-300) do not underflow.
  double scale = 0.0;
  for (double v : a.data()) scale = std::max(scale, std::abs(v));
  if (scale == 0.0) return 0.0;
  double s = 0.0;
  for (double v : a.data()) s += (v / scale) * (v / scale);
  return scale * std::sqrt(s);
}

double max_abs_diff(const Tensor2D& a, const Tensor2D& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < ad.size(); ++i) {
    m = std::max(m, std::abs(ad[i] - bd[i]));
  }
  return m;
}

double frobenius_cos(const Tensor2D& a, const Tensor2D& b) {
  require_same_shape(a, b, "frobenius_cos");
  const double na = frobenius_norm(a);
  const double nb = frobenius_norm(b);
  if (na == 0.0 || nb == 0.0) {
    throw ZeroMatrix("frobenius_cos operand has zero norm");
  }
  // Normalize first to stay in range for very large or small operands.
  double s = 0.0;
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < ad.size(); ++i) s += (ad[i] / na) * (bd[i] / nb);
  return std::clamp(s, -1.0, 1.0);
}

bool try_cholesky(const Tensor2D& a, double jitter, Tensor2D& lower) {
  const std::size_t n = a.rows();
  lower = Tensor2D(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j) + jitter;
    for (std::size_t k = 0; k < j; ++k) d -= lower(j, k) * lower(j, k);
    if (!(d > 0.0) || !std::isfinite(d)) return false;
    const double ljj = std::sqrt(d);
    lower(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= lower(i, k) * lower(j, k);
      lower(i, j) = s / ljj;
    }
  }
  return true;
}

CholeskyFactor cholesky(const Tensor2D& a, double jitter) {
  require_square(a, "cholesky");
  if (!(jitter >= 0.0)) throw OutOfRange("negative jitter");
  const std::size_t n = a.rows();
  const double scale = n == 0 ? 0.0 : trace(a) / static_cast<double>(n);
  constexpr std::array<double, 4> kLadder = {0.0, 1e-10, 1e-8, 1e-6};
  CholeskyFactor f;
  double tried = jitter;
  for (double rung : kLadder) {
    if (rung > 0.0 && !(scale > 0.0)) break;
    tried = jitter + rung * scale;
    if (try_cholesky(a, tried, f.lower)) {
      f.jitter_used = tried;
      return f;
    }
  }
  throw NotPositiveDefinite(
      "factorization failed for " + shape_str(a) + " (last jitter " +
          std::to_string(tried) + ")",
      tried);
}

void solve_lower(const Tensor2D& lower, Tensor2D& b) {
  const std::size_t n = lower.rows();
  if (b.rows() != n) throw DimensionMismatch("solve_lower rhs rows");
  const std::size_t k = b.cols();
  for (std::size_t i = 0; i < n; ++i) {
    auto bi = b.row(i);
    for (std::size_t p = 0; p < i; ++p) {
      const double l = lower(i, p);
      if (l == 0.0) continue;
      auto bp = b.row(p);
      for (std::size_t c = 0; c < k; ++c) bi[c] -= l * bp[c];
    }
    const double inv = 1.0 / lower(i, i);
    for (std::size_t c = 0; c < k; ++c) bi[c] *= inv;
  }
}

void solve_lower_t(const Tensor2D& lower, Tensor2D& b) {
  const std::size_t n = lower.rows();
  if (b.rows() != n) throw DimensionMismatch("solve_lower_t rhs rows");
  const std::size_t k = b.cols();
  for (std::size_t ii = n; ii-- > 0;) {
    auto bi = b.row(ii);
    for (std::size_t p = ii + 1; p < n; ++p) {
      const double l = lower(p, ii);
      if (l == 0.0) continue;
      auto bp = b.row(p);
      for (std::size_t c = 0; c < k; ++c) bi[c] -= l * bp[c];
    }
    const double inv = 1.0 / lower(ii, ii);
    for (std::size_t c = 0; c < k; ++c) bi[c] *= inv;
  }
}

SpdSolution solve_spd(const Tensor2D& a, const Tensor2D& b, double jitter) {
  require_square(a, "solve_spd");
  if (b.rows() != a.rows()) {
    throw DimensionMismatch("solve_spd: " + shape_str(a) + " vs rhs " +
                            shape_str(b));
  }
  auto f = cholesky(a, jitter);
  SpdSolution s{b, f.jitter_used};
  solve_lower(f.lower, s.x);
  solve_lower_t(f.lower, s.x);
  return s;
}

Tensor2D cholesky_solve(const Tensor2D& a, const Tensor2D& b, double jitter) {
  return solve_spd(a, b, jitter).x;
}

double asymmetry(const Tensor2D& a) {
  require_square(a, "asymmetry");
  double diff = 0.0, mag = 1.0;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) {
      diff = std::max(diff, std::abs(a(i, j) - a(j, i)));
      mag = std::max(mag, std::abs(a(i, j)));
    }
  }
  return diff / mag;
}

Tensor2D sample_matrix_gaussian_factored(const Tensor2D& mean,
                                         const Tensor2D& row_cov_lower,
                                         std::uint64_t seed) {
  const std::size_t d = mean.cols();
  if (row_cov_lower.rows() != d || row_cov_lower.cols() != d) {
    throw DimensionMismatch("row covariance " + shape_str(row_cov_lower) +
                            " vs mean " + shape_str(mean));
  }
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor2D out = mean;
  std::vector<double> z(d);
  for (std::size_t r = 0; r < mean.rows(); ++r) {
    for (auto& v : z) v = normal(rng);
    auto row = out.row(r);
    // row += L z
    for (std::size_t i = 0; i < d; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j <= i; ++j) s += row_cov_lower(i, j) * z[j];
      row[i] += s;
    }
  }
  return out;
}

Tensor2D sample_matrix_gaussian(const Tensor2D& mean, const Tensor2D& row_cov,
                                std::uint64_t seed) {
  require_square(row_cov, "sample_matrix_gaussian");
  Tensor2D lower;
  if (!try_cholesky(row_cov, 0.0, lower)) {
    throw NotPositiveDefinite("row covariance is not positive definite", 0.0);
  }
  return sample_matrix_gaussian_factored(mean, lower, seed);
}

}  // namespace mergeforge
