// Copyright 2026 The MergeForge Authors
// SPDX-License-Identifier: Apache-2.0

// Per-module second moments (G, C) feeding the closed-form merge:
//   assisted:  G = sum_n x_n x_n^T,          C = sum_n (U^(t) x_n) x_n^T
//   data-free: G = sum_t U^(t)^T U^(t),      C = sum_t U^(t) U^(t)^T U^(t)
//   mixed:     eps * assisted + (1 - eps) * data-free (both G and C)

#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mergeforge/ckpt.hpp"
#include "mergeforge/linalg.hpp"
#include "mergeforge/merge_config.hpp"
#include "mergeforge/toynet.hpp"

namespace mergeforge::stats {

struct ModuleStats {
  Tensor2D gram;   // d_in x d_in
  Tensor2D cross;  // d_out x d_in
  std::size_t sample_count = 0;
  StatsMode source = StatsMode::Assisted;
  double eps = 1.0;  // mixing weight when source == Mixed
};

using StatsMap = std::map<std::string, ModuleStats>;

/// Contribution of task `task`: captures every module's input activations on
/// `calib_inputs` (n x d_in rows) through that task's expert.
StatsMap collect_assisted(const toynet::ToyNet& expert,
                          const Tensor2D& calib_inputs,
                          const TaskVectorSet& tvs, std::size_t task);

/// Sum of collect_assisted over all tasks (task order reduction).
StatsMap collect_assisted_all(std::span<const toynet::ToyNet> experts,
                              std::span<const toynet::TaskDataset> calib,
                              const TaskVectorSet& tvs);

void accumulate(StatsMap& into, const StatsMap& add);

StatsMap data_free_stats(const TaskVectorSet& tvs);

/// Throws OutOfRange for eps outside [0, 1].
ModuleStats mix_stats(const ModuleStats& assisted, const ModuleStats& datafree,
                      double eps);
StatsMap mix_stats(const StatsMap& assisted, const StatsMap& datafree,
                   double eps);

struct AlignmentRow {
  std::size_t task = 0;
  std::string module;
  std::optional<double> cos;  // empty when the task vector is exactly zero
};

struct AlignmentReport {
  std::vector<AlignmentRow> rows;
  std::vector<std::optional<double>> task_means;  // over defined rows
};

/// cos_F((1/N) X X^T, U^(t)^T U^(t)) per task and module, with activations
/// taken from each task's expert on its own calibration split.
AlignmentReport alignment_report(std::span<const toynet::ToyNet> experts,
                                 std::span<const toynet::TaskDataset> calib,
                                 const TaskVectorSet& tvs);

// Cache format: "<module>.gram" and "<module>.cross" tensors plus an
// "<module>.info" aux vector {sample_count, source, eps}.
Checkpoint stats_to_checkpoint(const StatsMap& stats);
StatsMap stats_from_checkpoint(const Checkpoint& ckpt);

}  // namespace mergeforge::stats
