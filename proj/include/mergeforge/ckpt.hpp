// Copyright 2026 The MergeForge Authors
// SPDX-License-Identifier: Apache-2.0

// Checkpoint container, task-vector extraction and merged-model assembly.
//
// On disk a checkpoint is a directory holding `manifest.json` and
// `weights.bin`. The blob is the concatenation of every 2D module (in name
// order) followed by every aux vector, each stored row-major as 64-bit
// little-endian floats at the byte offset recorded in the manifest.

#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mergeforge/linalg.hpp"
#include "mergeforge/merge_config.hpp"

namespace mergeforge {

inline constexpr int kFormatVersion = 1;
inline constexpr const char* kManifestMagic = "mergeforge-ckpt";

struct ModuleMeta {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  int block = 0;
  std::string group;

  Cell cell() const { return {block, group}; }
  friend bool operator==(const ModuleMeta&, const ModuleMeta&) = default;
};

struct Checkpoint {
  std::map<std::string, Tensor2D> modules;
  std::map<std::string, ModuleMeta> meta;
  std::map<std::string, std::vector<double>> aux;
  int format_version = kFormatVersion;

  void add_module(const std::string& name, Tensor2D weight, int block,
                  const std::string& group);
  const Tensor2D& module(const std::string& name) const;
  const std::vector<double>& aux_vector(const std::string& name) const;

  // Throws ShapeError when `modules` and `meta` disagree.
  void validate() const;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

// Throws MetaMismatch unless both checkpoints have identical module meta.
void require_same_meta(const Checkpoint& a, const Checkpoint& b);

/// Module-wise task vectors U^(t) = W^(t) - W_pre for T experts, plus the
/// anchor offset U^(0) = W_anchor - W_pre.
struct TaskVectorSet {
  std::map<std::string, ModuleMeta> meta;
  std::map<std::string, std::vector<Tensor2D>> per_task;
  std::map<std::string, Tensor2D> anchor;

  std::size_t task_count() const;
};

TaskVectorSet task_vectors(const Checkpoint& pretrained,
                           const std::vector<Checkpoint>& finetuned,
                           const Checkpoint& anchor);

/// Task-arithmetic checkpoint theta_pre + alpha * sum_t (theta_t - theta_pre),
/// applied to 2D modules and aux vectors alike.
Checkpoint ta_anchor(const Checkpoint& pretrained,
                     const std::vector<Checkpoint>& finetuned, double alpha);

/// W_merged = W_pre + s_block * U for every 2D module; non-2D parameters
/// are taken from `anchor`.
Checkpoint assemble(const Checkpoint& pretrained,
                    const std::map<std::string, Tensor2D>& merged_vectors,
                    const MergeConfig& config, const Checkpoint& anchor);

}  // namespace mergeforge
