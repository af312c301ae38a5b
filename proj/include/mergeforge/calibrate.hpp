// Copyright 2026 The MergeForge Authors
// SPDX-License-Identifier: Apache-2.0

// Posterior-sampling ensembles for uncertainty calibration. Only the final
// linear layer is sampled; every other module keeps its MAP value.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mergeforge/ckpt.hpp"
#include "mergeforge/merge.hpp"
#include "mergeforge/toynet.hpp"

namespace mergeforge::toynet {

struct CalibrationPoint {
  double beta = 0.0;
  double val_accuracy = 0.0;
  double val_ece = 0.0;
};

struct CalibrationReport {
  double best_beta = 0.0;
  bool constraint_met = false;  // some beta kept Val accuracy within tolerance
  double map_val_accuracy = 0.0;
  double map_val_ece = 0.0;
  double map_test_accuracy = 0.0;
  double map_test_ece = 0.0;
  double ensemble_val_accuracy = 0.0;
  double ensemble_val_ece = 0.0;
  double ensemble_test_accuracy = 0.0;
  double ensemble_test_ece = 0.0;
  std::vector<CalibrationPoint> sweep;
};

struct CalibrationInput {
  Checkpoint map_model;      // assembled MAP merge
  Checkpoint pretrained;
  std::string module;        // sampled module, normally the last layer
  merge::ModulePosterior posterior;  // posterior of the module's task vector
  double scale = 1.0;        // block scale applied to sampled task vectors
};

/// 25 log-spaced precisions 10^-4 .. 10^8.
std::vector<double> default_beta_grid();

/// Accuracy is the per-task mean, ECE is computed over the pooled
/// predictions of all tasks. For every beta, S merged models are sampled
/// and ensembled on Val; the chosen beta minimizes Val ECE among those whose
/// Val accuracy is at least MAP Val accuracy - tolerance. When none
/// qualifies the largest beta is used and constraint_met is false.
CalibrationReport calibrate(const CalibrationInput& input,
                            std::span<const double> beta_grid, std::size_t S,
                            std::span<const TaskDataset> val_sets,
                            std::span<const TaskDataset> test_sets,
                            std::uint64_t seed, double tolerance = 0.005,
                            int kappa = 20);

}  // namespace mergeforge::toynet
