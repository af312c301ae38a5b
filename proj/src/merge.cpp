// Copyright 2026 The MergeForge Authors
// SPDX-License-Identifier: Apache-2.0

#include "mergeforge/merge.hpp"

#include <cmath>
#include <exception>
#include <utility>

#include "mergeforge/errors.hpp"
#include "mergeforge/rng.hpp"

namespace mergeforge::merge {
namespace {

void check_shapes(const stats::ModuleStats& s, const Tensor2D& anchor) {
  if (s.gram.rows() != s.gram.cols() || s.cross.cols() != s.gram.cols() ||
      !anchor.same_shape(s.cross)) {
    throw DimensionMismatch("stats/anchor shapes are inconsistent");
  }
}

}  // namespace

Tensor2D map_merge(const stats::ModuleStats& stats,
                   const Tensor2D& anchor_vector, double lambda) {
  check_shapes(stats, anchor_vector);
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw OutOfRange("lambda must be finite and non-negative");
  }
  // (G + lambda I) U^T = (C + lambda U0)^T since G is symmetric.
  Tensor2D rhs = stats.cross;
  axpy(lambda, anchor_vector, rhs);
  return transpose(cholesky_solve(stats.gram, transpose(rhs), lambda));
}

ModuleMap merge_all(const stats::StatsMap& stats, const TaskVectorSet& tvs,
                    const MergeConfig& config) {
  std::vector<std::string> names;
  std::vector<double> lambdas;
  for (const auto& [name, meta] : tvs.meta) {
    if (!stats.count(name)) throw MissingModule("no stats for '" + name + "'");
    if (!tvs.anchor.count(name)) {
      throw MissingModule("no anchor vector for '" + name + "'");
    }
    names.push_back(name);
    lambdas.push_back(config.lambda_for(meta.cell()));
  }

  std::vector<Tensor2D> solved(names.size());
  const auto n = static_cast<std::ptrdiff_t>(names.size());
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    try {
      solved[k] = map_merge(stats.at(names[k]), tvs.anchor.at(names[k]),
                            lambdas[k]);
    } catch (...) {
#pragma omp critical(merge_all_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  ModuleMap out;
  for (std::size_t i = 0; i < names.size(); ++i) {
    out.emplace(names[i], std::move(solved[i]));
  }
  return out;
}

ModulePosterior ModulePosterior::with_beta(double new_beta) const {
  if (!(new_beta > 0.0)) throw OutOfRange("beta must be positive");
  ModulePosterior p = *this;
  p.row_cov *= beta / new_beta;
  p.beta = new_beta;
  return p;
}

ModulePosterior posterior(const stats::ModuleStats& stats,
                          const Tensor2D& anchor_vector, double lambda,
                          double beta) {
  if (!(beta > 0.0) || !std::isfinite(beta)) {
    throw OutOfRange("beta must be positive and finite");
  }
  ModulePosterior p;
  p.map_estimate = map_merge(stats, anchor_vector, lambda);
  const std::size_t d = stats.gram.rows();
  p.row_cov = cholesky_solve(stats.gram, Tensor2D::identity(d), lambda);
  // Symmetrize away round-off so the row covariance factorizes cleanly.
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i + 1; j < d; ++j) {
      const double avg = 0.5 * (p.row_cov(i, j) + p.row_cov(j, i));
      p.row_cov(i, j) = avg;
      p.row_cov(j, i) = avg;
    }
  }
  p.row_cov *= 1.0 / beta;
  p.beta = beta;
  return p;
}

std::vector<ModuleMap> sample_merged(
    const std::map<std::string, ModulePosterior>& posteriors, std::size_t S,
    std::uint64_t seed) {
  if (S == 0) throw OutOfRange("need at least one sample");
  // Factor once per module; draws reuse the factors.
  std::vector<std::pair<const std::string*, const ModulePosterior*>> mods;
  std::vector<Tensor2D> factors;
  for (const auto& [name, post] : posteriors) {
    Tensor2D lower;
    if (!try_cholesky(post.row_cov, 0.0, lower)) {
      throw NotPositiveDefinite("row covariance of '" + name + "'", 0.0);
    }
    mods.emplace_back(&name, &post);
    factors.push_back(std::move(lower));
  }

  std::vector<ModuleMap> samples(S);
  const auto n = static_cast<std::ptrdiff_t>(S);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t s = 0; s < n; ++s) {
    auto& out = samples[static_cast<std::size_t>(s)];
    for (std::size_t m = 0; m < mods.size(); ++m) {
      const auto draw_seed =
          derive_seed(seed, {static_cast<std::uint64_t>(s), m});
      out.emplace(*mods[m].first,
                  sample_matrix_gaussian_factored(mods[m].second->map_estimate,
                                                  factors[m], draw_seed));
    }
  }
  return samples;
}

}  // namespace mergeforge::merge
