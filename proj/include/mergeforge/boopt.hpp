// Copyright 2026 The MergeForge Authors
// SPDX-License-Identifier: Apache-2.0

// Outer search over merge hyperparameters: a box search space mapped onto
// the unit cube, an exact GP surrogate with a squared-exponential kernel,
// Expected Improvement, and the sequential search loop.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "mergeforge/errors.hpp"
#include "mergeforge/linalg.hpp"
#include "mergeforge/merge_config.hpp"

namespace mergeforge::boopt {

enum class DimKind { Uniform, LogUniform };

struct Dim {
  enum class Role { Generic, Scale, Lambda, Eps };

  std::string name;
  DimKind kind = DimKind::Uniform;
  double lo = 0.0;
  double hi = 1.0;
  Role role = Role::Generic;
  Cell cell;  // block (Scale) or (block, group) (Lambda)
};

struct MergeRanges {
  double lambda_lo = 1e-4;
  double lambda_hi = 1.0;
  double scale_lo = 1.0;
  double scale_hi = 1.3;
};

class SearchSpace {
 public:
  SearchSpace() = default;
  explicit SearchSpace(std::vector<Dim> dims);

  /// D generic Uniform(0, 1) dimensions.
  static SearchSpace unit_cube(std::size_t dims);

  /// Per block: one scale followed by one lambda per group of that block;
  /// a trailing eps dimension in Mixed mode.
  static SearchSpace for_merge(const std::set<Cell>& cells, StatsMode mode,
                               const MergeRanges& ranges);

  std::size_t size() const { return dims_.size(); }
  const std::vector<Dim>& dims() const { return dims_; }

  /// Unit cube -> dimension values. Throws OutOfRange outside [0, 1]^D.
  std::vector<double> from_unit(std::span<const double> unit) const;
  std::vector<double> to_unit(std::span<const double> values) const;

  MergeConfig to_config(std::span<const double> values) const;
  std::vector<double> to_values(const MergeConfig& config) const;

  MergeConfig decode(std::span<const double> unit) const;
  std::vector<double> encode(const MergeConfig& config) const;

 private:
  std::vector<Dim> dims_;
  StatsMode mode_ = StatsMode::Assisted;
};

// --- Gaussian-process surrogate ---

struct GpHyper {
  double signal_var = 1.0;
  double lengthscale = 0.2;
  double noise_var = 1e-6;
};

struct GpGrid {
  std::vector<double> signal_vars = {0.5, 1.0, 2.0};
  std::vector<double> lengthscales = {0.1, 0.2, 0.5, 1.0};
  double noise_var = 1e-6;
};

struct Prediction {
  double mu = 0.0;
  double sigma = 0.0;
};

/// Exact GP posterior over standardized scores; predictions are reported in
/// the original score units.
class GpModel {
 public:
  Prediction predict(std::span<const double> point) const;

  const GpHyper& hyper() const { return hyper_; }
  double log_marginal_likelihood() const { return lml_; }
  double f_mean() const { return f_mean_; }
  double f_std() const { return f_std_; }
  const std::vector<std::vector<double>>& observed_x() const { return x_; }
  const std::vector<double>& observed_f() const { return f_; }

 private:
  friend GpModel gp_fit(std::vector<std::vector<double>> x,
                        std::vector<double> f, const GpGrid& grid);

  double kernel(std::span<const double> a, std::span<const double> b) const;

  std::vector<std::vector<double>> x_;
  std::vector<double> f_;
  GpHyper hyper_;
  double f_mean_ = 0.0;
  double f_std_ = 1.0;
  double lml_ = 0.0;
  Tensor2D lower_;            // chol(K + noise I)
  std::vector<double> alpha_;  // (K + noise I)^-1 y
};

/// ML-II over the grid of (signal variance, lengthscale). Requires at least
/// two observations.
GpModel gp_fit(std::vector<std::vector<double>> x, std::vector<double> f,
               const GpGrid& grid = {});

/// Maximization-form EI with exploration offset xi.
double expected_improvement(double mu, double sigma, double f_best, double xi);

/// Evaluates EI on `n_candidates` uniform points plus the incumbent
/// perturbed by N(0, 0.05^2) per dimension; returns the argmax (lowest index
/// wins ties). The incumbent candidate comes last.
std::vector<double> propose(const GpModel& model, std::size_t dims,
                            std::uint64_t seed, std::size_t n_candidates,
                            double xi);

// --- Search loop ---

struct Trial {
  std::size_t index = 0;
  std::vector<double> unit;
  std::vector<double> values;
  double score = 0.0;
  double wall_ms = 0.0;
};

struct TrialHistory {
  std::vector<Trial> trials;

  std::size_t size() const { return trials.size(); }
  /// Highest score, earliest trial on ties.
  const Trial& best() const;
};

struct BoOptions {
  std::size_t budget = 60;        // total trials K
  std::size_t n_init = 0;         // 0 selects max(10, 2D)
  std::size_t n_candidates = 2048;
  double xi = 0.01;
  std::uint64_t seed = 0;
  GpGrid grid;
};

std::size_t default_n_init(std::size_t dims);

using Evaluator = std::function<double(std::span<const double> values)>;
using TrialCallback = std::function<void(const Trial&)>;

class EvaluatorFailure : public Error {
 public:
  EvaluatorFailure(const std::string& what, TrialHistory partial)
      : Error(ErrorCategory::Numeric, "EvaluatorFailure: " + what),
        partial_(std::move(partial)) {}
  const TrialHistory& partial() const { return partial_; }

 private:
  TrialHistory partial_;
};

struct BoResult {
  Trial best;
  TrialHistory history;
};

/// Runs trials history.size() .. budget-1. The first n_init trials are
/// uniform in the cube, later ones maximize EI under a GP fitted to all
/// previous trials. Each trial's randomness derives from (seed, index), so a
/// resumed search continues exactly as an uninterrupted one.
BoResult bo_search(const SearchSpace& space, const Evaluator& evaluator,
                   const BoOptions& options, TrialHistory history = {},
                   const TrialCallback& on_trial = {});

// Line-delimited JSON trial log.
std::string trial_to_json(const SearchSpace& space, const Trial& trial);
Trial trial_from_json(const SearchSpace& space, const std::string& line);
TrialHistory read_history(const SearchSpace& space,
                          const std::filesystem::path& path);

}  // namespace mergeforge::boopt
