// Copyright 2026 The MergeForge Authors
// SPDX-License-Identifier: Apache-2.0

// Closed-form anchor-regularized merging.
//
// For one module the merged offset minimizes
//   |Y - U X|_F^2 + lambda |U - U0|_F^2,
// whose stationary point satisfies U (G + lambda I) = C + lambda U0 with
// G = X X^T and C = Y X^T. The same system with G, C replaced by task-vector
// surrogates gives the data-free estimator. Under Gaussian noise of precision
// beta the rows of U are Gaussian with covariance beta^-1 (G + lambda I)^-1.

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mergeforge/ckpt.hpp"
#include "mergeforge/linalg.hpp"
#include "mergeforge/merge_config.hpp"
#include "mergeforge/stats.hpp"

namespace mergeforge::merge {

using ModuleMap = std::map<std::string, Tensor2D>;

/// Solves U (G + lambda I) = C + lambda U0 with a Cholesky factorization of
/// G + lambda I (jitter ladder applies, so lambda = 0 is accepted).
Tensor2D map_merge(const stats::ModuleStats& stats,
                   const Tensor2D& anchor_vector, double lambda);

/// map_merge for every module with lambda taken from the module's
/// (block, group) cell. Modules are solved in parallel and collected in
/// name order.
ModuleMap merge_all(const stats::StatsMap& stats, const TaskVectorSet& tvs,
                    const MergeConfig& config);

struct ModulePosterior {
  Tensor2D map_estimate;  // d_out x d_in
  Tensor2D row_cov;       // d_in x d_in
  double beta = 1.0;

  /// Same posterior at a different noise precision (row_cov rescaled).
  ModulePosterior with_beta(double new_beta) const;
};

ModulePosterior posterior(const stats::ModuleStats& stats,
                          const Tensor2D& anchor_vector, double lambda,
                          double beta);

/// S independent draws of every module; module m of sample s uses a seed
/// derived from (seed, s, m).
std::vector<ModuleMap> sample_merged(
    const std::map<std::string, ModulePosterior>& posteriors, std::size_t S,
    std::uint64_t seed);

}  // namespace mergeforge::merge
