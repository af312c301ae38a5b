// Copyright 2026 The MergeForge Authors
// SPDX-License-Identifier: Apache-2.0

#include "mergeforge/stats.hpp"

#include <utility>

#include "mergeforge/errors.hpp"

namespace mergeforge::stats {
namespace {

std::vector<std::string> module_names(const TaskVectorSet& tvs) {
  std::vector<std::string> names;
  names.reserve(tvs.meta.size());
  for (const auto& [name, m] : tvs.meta) names.push_back(name);
  return names;
}

std::size_t layer_index(const std::string& module) {
  // Toy network modules are named "layer<k>.weight".
  const auto dot = module.find('.');
  if (module.rfind("layer", 0) != 0 || dot == std::string::npos) {
    throw MissingModule("not a network layer: '" + module + "'");
  }
  return std::stoul(module.substr(5, dot - 5));
}

}  // namespace

StatsMap collect_assisted(const toynet::ToyNet& expert,
                          const Tensor2D& calib_inputs,
                          const TaskVectorSet& tvs, std::size_t task) {
  if (calib_inputs.rows() == 0) throw EmptyInput("no calibration samples");
  if (task >= tvs.task_count()) throw OutOfRange("task index");
  const auto cap = toynet::forward_capture(expert, calib_inputs);
  StatsMap out;
  for (const auto& [name, meta] : tvs.meta) {
    const std::size_t k = layer_index(name);
    if (k >= cap.layer_inputs.size()) throw MissingModule(name);
    const Tensor2D& x = cap.layer_inputs[k];  // d_in x n
    if (x.rows() != meta.cols) {
      throw ShapeError("activation dim " + std::to_string(x.rows()) +
                       " != d_in " + std::to_string(meta.cols) + " for " +
                       name);
    }
    const Tensor2D& u = tvs.per_task.at(name)[task];
    const Tensor2D y = matmul(u, x);  // d_out x n
    out[name] = ModuleStats{matmul_nt(x, x), matmul_nt(y, x), x.cols(),
                            StatsMode::Assisted, 1.0};
  }
  return out;
}

StatsMap collect_assisted_all(std::span<const toynet::ToyNet> experts,
                              std::span<const toynet::TaskDataset> calib,
                              const TaskVectorSet& tvs) {
  const std::size_t t_count = tvs.task_count();
  if (experts.size() != t_count || calib.size() != t_count) {
    throw OutOfRange("need one expert and one calibration set per task");
  }
  std::vector<StatsMap> parts(t_count);
  const auto n = static_cast<std::ptrdiff_t>(t_count);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t t = 0; t < n; ++t) {
    const auto ti = static_cast<std::size_t>(t);
    parts[ti] = collect_assisted(experts[ti], calib[ti].inputs, tvs, ti);
  }
  for (const auto& c : calib) toynet::SplitAudit::record(c.split, c.size());
  StatsMap total;
  for (const auto& p : parts) accumulate(total, p);
  return total;
}

void accumulate(StatsMap& into, const StatsMap& add) {
  for (const auto& [name, s] : add) {
    auto it = into.find(name);
    if (it == into.end()) {
      into.emplace(name, s);
      continue;
    }
    it->second.gram += s.gram;
    it->second.cross += s.cross;
    it->second.sample_count += s.sample_count;
  }
}

StatsMap data_free_stats(const TaskVectorSet& tvs) {
  if (tvs.task_count() == 0) throw OutOfRange("need at least one task");
  const auto names = module_names(tvs);
  std::vector<ModuleStats> parts(names.size());
  const auto n = static_cast<std::ptrdiff_t>(names.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto& name = names[static_cast<std::size_t>(i)];
    const auto& meta = tvs.meta.at(name);
    ModuleStats s{Tensor2D(meta.cols, meta.cols), Tensor2D(meta.rows, meta.cols),
                  0, StatsMode::DataFree, 0.0};
    for (const auto& u : tvs.per_task.at(name)) {
      const Tensor2D utu = matmul_tn(u, u);
      s.cross += matmul(u, utu);
      s.gram += utu;
    }
    parts[static_cast<std::size_t>(i)] = std::move(s);
  }
  StatsMap out;
  for (std::size_t i = 0; i < names.size(); ++i) {
    out.emplace(names[i], std::move(parts[i]));
  }
  return out;
}

ModuleStats mix_stats(const ModuleStats& assisted, const ModuleStats& datafree,
                      double eps) {
  if (!(eps >= 0.0 && eps <= 1.0)) {
    throw OutOfRange("eps must lie in [0, 1], got " + std::to_string(eps));
  }
  if (!assisted.gram.same_shape(datafree.gram) ||
      !assisted.cross.same_shape(datafree.cross)) {
    throw DimensionMismatch("mix_stats operands differ in shape");
  }
  ModuleStats m;
  // Endpoints reproduce the inputs exactly.
  if (eps == 1.0) {
    m = assisted;
  } else if (eps == 0.0) {
    m = datafree;
  } else {
    m.gram = eps * assisted.gram + (1.0 - eps) * datafree.gram;
    m.cross = eps * assisted.cross + (1.0 - eps) * datafree.cross;
    m.sample_count = assisted.sample_count;
  }
  m.source = StatsMode::Mixed;
  m.eps = eps;
  return m;
}

StatsMap mix_stats(const StatsMap& assisted, const StatsMap& datafree,
                   double eps) {
  StatsMap out;
  for (const auto& [name, a] : assisted) {
    auto it = datafree.find(name);
    if (it == datafree.end()) throw MissingModule(name);
    out.emplace(name, mix_stats(a, it->second, eps));
  }
  return out;
}

AlignmentReport alignment_report(std::span<const toynet::ToyNet> experts,
                                 std::span<const toynet::TaskDataset> calib,
                                 const TaskVectorSet& tvs) {
  const std::size_t t_count = tvs.task_count();
  if (experts.size() != t_count || calib.size() != t_count) {
    throw OutOfRange("need one expert and one calibration set per task");
  }
  AlignmentReport report;
  report.task_means.resize(t_count);
  for (std::size_t t = 0; t < t_count; ++t) {
    if (calib[t].size() == 0) throw EmptyInput("empty calibration set");
    toynet::SplitAudit::record(calib[t].split, calib[t].size());
    const auto cap = toynet::forward_capture(experts[t], calib[t].inputs);
    double sum = 0.0;
    std::size_t defined = 0;
    for (const auto& [name, meta] : tvs.meta) {
      const Tensor2D& x = cap.layer_inputs[layer_index(name)];
      Tensor2D second = matmul_nt(x, x);
      second *= 1.0 / static_cast<double>(x.cols());
      const Tensor2D& u = tvs.per_task.at(name)[t];
      AlignmentRow row{t, name, std::nullopt};
      try {
        row.cos = frobenius_cos(second, matmul_tn(u, u));
        sum += *row.cos;
        ++defined;
      } catch (const ZeroMatrix&) {
        // Reported as an undefined row.
      }
      report.rows.push_back(std::move(row));
    }
    if (defined > 0) report.task_means[t] = sum / static_cast<double>(defined);
  }
  return report;
}

Checkpoint stats_to_checkpoint(const StatsMap& stats) {
  Checkpoint ckpt;
  for (const auto& [name, s] : stats) {
    ckpt.add_module(name + ".gram", s.gram, 0, "gram");
    ckpt.add_module(name + ".cross", s.cross, 0, "cross");
    ckpt.aux[name + ".info"] = {static_cast<double>(s.sample_count),
                                static_cast<double>(s.source), s.eps};
  }
  return ckpt;
}

StatsMap stats_from_checkpoint(const Checkpoint& ckpt) {
  StatsMap out;
  for (const auto& [key, info] : ckpt.aux) {
    const auto suffix = key.rfind(".info");
    if (suffix == std::string::npos || info.size() != 3) {
      throw FormatError("unexpected stats aux entry '" + key + "'");
    }
    const std::string name = key.substr(0, suffix);
    ModuleStats s{ckpt.module(name + ".gram"), ckpt.module(name + ".cross"),
                  static_cast<std::size_t>(info[0]),
                  static_cast<StatsMode>(static_cast<int>(info[1])), info[2]};
    if (s.gram.rows() != s.gram.cols() || s.cross.cols() != s.gram.cols()) {
      throw ShapeError("stats shapes inconsistent for '" + name + "'");
    }
    out.emplace(name, std::move(s));
  }
  return out;
}

}  // namespace mergeforge::stats
