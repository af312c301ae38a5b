// Copyright 2026 The MergeForge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <compare>
#include <map>
#include <optional>
#include <string>
#include <string_view>

namespace mergeforge {

/// Where the per-module moment pair (G, C) comes from.
enum class StatsMode { Assisted, DataFree, Mixed };

std::string_view to_string(StatsMode mode);
StatsMode parse_stats_mode(std::string_view text);

/// A tying cell: all modules with the same (block, group) share one lambda.
struct Cell {
  int block = 0;
  std::string group;
  auto operator<=>(const Cell&) const = default;
};

/// One point of the merge hyperparameter space.
struct MergeConfig {
  std::map<Cell, double> lambdas;
  std::map<int, double> scales;
  std::optional<double> eps;
  StatsMode mode = StatsMode::Assisted;

  double lambda_for(const Cell& cell) const;  // throws MissingConfigCell
  double scale_for(int block) const;          // throws MissingConfigCell
};

}  // namespace mergeforge
