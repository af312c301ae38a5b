// Copyright 2026 The MergeForge Authors
// SPDX-License-Identifier: Apache-2.0

// Independent reference computations for the tests. Nothing here calls into
// the library's solvers; matrices are plain row-major vectors.

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

#include "mergeforge/linalg.hpp"

namespace oracle {

struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> v;

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0.0) {}
  double& operator()(std::size_t r, std::size_t c) { return v[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const {
    return v[r * cols + c];
  }
};

inline Mat from(const mergeforge::Tensor2D& t) {
  Mat m(t.rows(), t.cols());
  for (std::size_t i = 0; i < t.size(); ++i) m.v[i] = t.data()[i];
  return m;
}

inline mergeforge::Tensor2D to_tensor(const Mat& m) {
  return mergeforge::Tensor2D(m.rows, m.cols, m.v);
}

inline Mat mul(const Mat& a, const Mat& b) {
  Mat c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t j = 0; j < b.cols; ++j) {
      long double s = 0.0L;
      for (std::size_t k = 0; k < a.cols; ++k) s += a(i, k) * b(k, j);
      c(i, j) = static_cast<double>(s);
    }
  }
  return c;
}

inline Mat transpose(const Mat& a) {
  Mat t(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
  }
  return t;
}

inline double norm(const Mat& a) {
  long double s = 0.0L;
  for (double x : a.v) s += static_cast<long double>(x) * x;
  return static_cast<double>(std::sqrt(s));
}

inline double diff_norm(const Mat& a, const Mat& b) {
  long double s = 0.0L;
  for (std::size_t i = 0; i < a.v.size(); ++i) {
    const long double d = a.v[i] - b.v[i];
    s += d * d;
  }
  return static_cast<double>(std::sqrt(s));
}

// Gauss-Jordan elimination with partial pivoting, solving A X = B.
inline Mat gauss_solve(Mat a, Mat b) {
  const std::size_t n = a.rows;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::abs(a(r, col)) > std::abs(a(piv, col))) piv = r;
    }
    if (a(piv, col) == 0.0) throw std::runtime_error("singular");
    for (std::size_t c = 0; c < n; ++c) std::swap(a(col, c), a(piv, c));
    for (std::size_t c = 0; c < b.cols; ++c) std::swap(b(col, c), b(piv, c));
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = a(r, col) / a(col, col);
      if (f == 0.0) continue;
      for (std::size_t c = col; c < n; ++c) a(r, c) -= f * a(col, c);
      for (std::size_t c = 0; c < b.cols; ++c) b(r, c) -= f * b(col, c);
    }
  }
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < b.cols; ++c) b(r, c) /= a(r, r);
  }
  return b;
}

// Plain gradient descent on
//   f(U) = tr(U G U^T) - 2 tr(U C^T) + lambda |U - U0|_F^2
// with gradient 2(U G - C) + 2 lambda (U - U0), fixed step
// 1 / (2 (|G|_F + lambda)), stopping once the gradient norm is <= tol.
inline Mat gd_merge(const Mat& g, const Mat& c, const Mat& u0, double lambda,
                    double tol = 1e-10, std::size_t max_iter = 50'000'000) {
  const std::size_t r = c.rows, d = c.cols;
  const double step = 1.0 / (2.0 * (norm(g) + lambda));
  Mat u = u0;
  Mat grad(r, d);
  for (std::size_t it = 0; it < max_iter; ++it) {
    double gn = 0.0;
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) s += u(i, k) * g(k, j);
        const double v = 2.0 * (s - c(i, j)) + 2.0 * lambda * (u(i, j) - u0(i, j));
        grad(i, j) = v;
        gn += v * v;
      }
    }
    if (std::sqrt(gn) <= tol) return u;
    for (std::size_t i = 0; i < u.v.size(); ++i) u.v[i] -= step * grad.v[i];
  }
  throw std::runtime_error("gradient descent did not converge");
}

// Central finite difference of f at x along coordinate i.
inline double central_diff(const std::function<double()>& f, double& x,
                           double h = 1e-5) {
  const double x0 = x;
  x = x0 + h;
  const double fp = f();
  x = x0 - h;
  const double fm = f();
  x = x0;
  return (fp - fm) / (2.0 * h);
}

// Sample covariance of the rows of `draws` (each draw is a length-d row).
inline Mat sample_covariance(const std::vector<std::vector<double>>& draws) {
  const std::size_t n = draws.size(), d = draws.front().size();
  std::vector<double> mean(d, 0.0);
  for (const auto& x : draws) {
    for (std::size_t j = 0; j < d; ++j) mean[j] += x[j];
  }
  for (double& m : mean) m /= static_cast<double>(n);
  Mat cov(d, d);
  for (const auto& x : draws) {
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = 0; b < d; ++b) {
        cov(a, b) += (x[a] - mean[a]) * (x[b] - mean[b]);
      }
    }
  }
  for (double& v : cov.v) v /= static_cast<double>(n - 1);
  return cov;
}

inline Mat random_mat(std::size_t r, std::size_t c, std::mt19937_64& rng,
                      double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Mat m(r, c);
  for (double& x : m.v) x = n(rng);
  return m;
}

// Random SPD matrix M M^T + shift I.
inline Mat random_spd(std::size_t d, std::mt19937_64& rng, double shift = 0.1) {
  const Mat m = random_mat(d, d, rng);
  Mat a = mul(m, transpose(m));
  for (std::size_t i = 0; i < d; ++i) a(i, i) += shift;
  return a;
}

}  // namespace oracle
