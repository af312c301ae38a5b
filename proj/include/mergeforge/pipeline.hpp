// Copyright 2026 The MergeForge Authors
// SPDX-License-Identifier: Apache-2.0

// End-to-end merge experiments on the toy multi-task harness: harness
// construction and persistence, anchors, statistics, the validation-scored
// search, the ablation arms and posterior-sampling calibration.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mergeforge/boopt.hpp"
#include "mergeforge/calibrate.hpp"
#include "mergeforge/ckpt.hpp"
#include "mergeforge/merge.hpp"
#include "mergeforge/merge_config.hpp"
#include "mergeforge/stats.hpp"
#include "mergeforge/toynet.hpp"

namespace mergeforge::pipeline {

namespace fs = std::filesystem;

struct HarnessConfig {
  toynet::TaskGenConfig data;
  std::size_t hidden = 64;
  std::size_t layers = 4;
  int blocks = 2;
  std::size_t pretrain_epochs = 50;
  toynet::TrainConfig train;  // expert fine-tuning; seed is derived per task
  std::uint64_t seed = 0;

  std::vector<std::size_t> widths() const;
};

std::string harness_config_json(const HarnessConfig& config);
HarnessConfig parse_harness_config(const std::string& text);

struct Harness {
  HarnessConfig config;
  std::vector<toynet::TaskData> tasks;
  Checkpoint pretrained;
  std::vector<Checkpoint> experts;

  std::size_t task_count() const { return tasks.size(); }
  std::vector<toynet::TaskDataset> split(toynet::Split s) const;
  std::vector<toynet::ToyNet> expert_nets() const;
  std::string final_module() const;
};

/// Tasks only; models are filled in by train_models.
Harness generate_harness(const HarnessConfig& config);

/// Pretrains on the pooled train splits, then fine-tunes one expert per task
/// (experts train concurrently, each from its own derived seed). A
/// divergence is rethrown with the failing task id.
void train_models(Harness& harness);

Harness build_harness(const HarnessConfig& config);

struct TrainingSummary {
  std::vector<double> pretrained_val;  // per task
  std::vector<double> expert_train;
  std::vector<double> expert_val;
};
TrainingSummary summarize_training(const Harness& harness);

// Directory layout: harness.json, tasks/task_XX/{train,val,test,calib}/,
// pretrained/, experts/expert_XX/.
void save_tasks(const Harness& harness, const fs::path& dir);
void save_models(const Harness& harness, const fs::path& dir);
Harness load_harness(const fs::path& dir, bool with_models = true);

/// {"mode": ..., "eps": ..., "scales": [{"block", "value"}],
///  "lambdas": [{"block", "group", "value"}]}
std::string merge_config_json(const MergeConfig& config);
MergeConfig parse_merge_config(const std::string& text);

// --- Anchors ---

enum class AnchorKind { Pretrained, TaskArithmetic, Path };

struct AnchorSpec {
  AnchorKind kind = AnchorKind::TaskArithmetic;
  fs::path path;
};

/// "pretrained", "ta", or a checkpoint directory.
AnchorSpec parse_anchor(const std::string& text);

struct Anchor {
  Checkpoint ckpt;
  std::string label;
  std::optional<double> alpha;  // task arithmetic only
  double val_score = 0.0;
};

/// Ten points 0.1, 0.2, ..., 1.0.
std::vector<double> ta_alpha_grid();

/// Task arithmetic picks alpha on Val over ta_alpha_grid (earliest on ties).
Anchor build_anchor(const Harness& harness, const AnchorSpec& spec);

// --- Statistics ---

/// Assisted statistics from each expert's calibration split. shots = 0 uses
/// the whole split; otherwise the first `shots` samples of every class.
stats::StatsMap assisted_stats(const Harness& harness,
                               const TaskVectorSet& tvs,
                               std::size_t shots = 0);

toynet::TaskDataset few_shot(const toynet::TaskDataset& data,
                             std::size_t shots);

/// The merge problem the search optimizes: stats, task vectors, Val sets.
class MergeProblem {
 public:
  /// Assisted stats are computed unless mode is DataFree; shots as above.
  /// val_frac keeps the leading fraction of every Val split.
  MergeProblem(const Harness& harness, Anchor anchor, StatsMode mode,
               std::size_t shots = 0, double val_frac = 1.0);

  StatsMode mode() const { return mode_; }
  const Anchor& anchor() const { return anchor_; }
  const TaskVectorSet& task_vectors() const { return tvs_; }
  const Harness& harness() const { return *harness_; }
  std::set<Cell> cells() const;

  /// Statistics the merge uses under `config` (mixed by config.eps).
  stats::StatsMap stats_for(const MergeConfig& config) const;

  Checkpoint merge(const MergeConfig& config) const;
  double val_score(const Checkpoint& merged) const;
  double test_score(const Checkpoint& merged) const;

  /// Every lambda = `lambda`, every scale = 1 (eps = 0.5 when mixed).
  MergeConfig shared_config(double lambda) const;

 private:
  const Harness* harness_;
  Anchor anchor_;
  StatsMode mode_;
  TaskVectorSet tvs_;
  stats::StatsMap assisted_;
  stats::StatsMap datafree_;
  std::vector<toynet::TaskDataset> val_;
  std::vector<toynet::TaskDataset> test_;
};

// --- Search ---

enum class Preset { VitLike, LlamaLike };
Preset parse_preset(const std::string& text);
boopt::MergeRanges preset_ranges(Preset preset);

struct SearchOptions {
  boopt::MergeRanges ranges;
  std::size_t budget = 60;
  std::size_t n_init = 0;  // 0 = max(10, 2D)
  std::uint64_t seed = 0;
  std::optional<fs::path> history_log;
  bool resume = false;
};

struct SearchOutcome {
  MergeConfig best;
  double best_val = 0.0;
  double test = 0.0;
  std::size_t new_trials = 0;
  boopt::TrialHistory history;
  Checkpoint merged;
};

boopt::SearchSpace search_space(const MergeProblem& problem,
                                const boopt::MergeRanges& ranges);

/// Val-only search; Test is scored once on the winning configuration.
SearchOutcome run_search(const MergeProblem& problem,
                         const SearchOptions& options);

struct SharedOutcome {
  double lambda = 0.0;
  double best_val = 0.0;
  double test = 0.0;
  std::size_t evaluated = 0;
};

/// 15-point log grid over the lambda range with all scales fixed to 1.
SharedOutcome run_shared_grid(const MergeProblem& problem,
                              const boopt::MergeRanges& ranges);

// --- Ablation ---

struct ArmScore {
  std::string setting;  // "assisted", "datafree", "1-shot", "1-shot mix", ...
  std::string variant;  // "shared", "random", "bo"
  double val = 0.0;
  double test = 0.0;
};

struct AblateOptions {
  boopt::MergeRanges ranges;
  std::size_t budget = 60;
  std::size_t n_init = 0;
  std::vector<StatsMode> modes = {StatsMode::Assisted, StatsMode::DataFree};
  bool mix_sweep = true;
  std::size_t shots = 1;  // few-shot size for the mix sweep
};

/// Shared/random/BO arms for every mode, and the few-shot mix sweep, on one
/// harness with one search seed.
std::vector<ArmScore> run_ablation(const Harness& harness, const Anchor& anchor,
                                   const AblateOptions& options,
                                   std::uint64_t seed);

// --- Calibration ---

toynet::CalibrationReport run_calibration(const MergeProblem& problem,
                                          const MergeConfig& config,
                                          std::span<const double> beta_grid,
                                          std::size_t S, std::uint64_t seed);

}  // namespace mergeforge::pipeline
