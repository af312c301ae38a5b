// Copyright 2026 The MergeForge Authors
// SPDX-License-Identifier: Apache-2.0

#include "mergeforge/merge_config.hpp"

#include <string>

#include "mergeforge/errors.hpp"

namespace mergeforge {

std::string_view to_string(StatsMode mode) {
  switch (mode) {
    case StatsMode::Assisted:
      return "assisted";
    case StatsMode::DataFree:
      return "datafree";
    case StatsMode::Mixed:
      return "mixed";
  }
  return "unknown";
}

StatsMode parse_stats_mode(std::string_view text) {
  if (text == "assisted") return StatsMode::Assisted;
  if (text == "datafree") return StatsMode::DataFree;
  if (text == "mixed") return StatsMode::Mixed;
  throw OutOfRange("unknown mode '" + std::string(text) + "'");
}

double MergeConfig::lambda_for(const Cell& cell) const {
  auto it = lambdas.find(cell);
  if (it == lambdas.end()) {
    throw MissingConfigCell("no lambda for block " +
                            std::to_string(cell.block) + " group '" +
                            cell.group + "'");
  }
  return it->second;
}

double MergeConfig::scale_for(int block) const {
  auto it = scales.find(block);
  if (it == scales.end()) {
    throw MissingConfigCell("no scale for block " + std::to_string(block));
  }
  return it->second;
}

}  // namespace mergeforge
