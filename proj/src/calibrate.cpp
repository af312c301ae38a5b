// Copyright 2026 The MergeForge Authors
// SPDX-License-Identifier: Apache-2.0

#include "mergeforge/calibrate.hpp"

#include <cmath>
#include <map>
#include <utility>

#include "mergeforge/errors.hpp"

namespace mergeforge::toynet {
namespace {

struct Eval {
  double accuracy = 0.0;
  double ece = 0.0;
};

// Mean per-task accuracy and pooled ECE of an ensemble (one net = MAP).
Eval evaluate(std::span<const ToyNet> nets, std::span<const TaskDataset> sets,
              int kappa) {
  if (sets.empty()) throw EmptySplit("no evaluation sets");
  std::size_t total = 0;
  for (const auto& s : sets) total += s.size();
  if (total == 0) throw EmptySplit("evaluation sets are empty");

  const std::size_t classes = nets.front().output_dim();
  Tensor2D pooled(total, classes);
  std::vector<int> labels;
  labels.reserve(total);
  double acc = 0.0;
  std::size_t row = 0;
  for (const auto& s : sets) {
    if (s.size() == 0) throw EmptySplit("empty evaluation set");
    SplitAudit::record(s.split, s.size() * nets.size());
    const Tensor2D probs = ensemble_predict(nets, s.inputs);
    acc += accuracy_of(probs, s.labels);
    for (std::size_t i = 0; i < s.size(); ++i, ++row) {
      for (std::size_t c = 0; c < classes; ++c) pooled(row, c) = probs(i, c);
    }
    labels.insert(labels.end(), s.labels.begin(), s.labels.end());
  }
  return {acc / static_cast<double>(sets.size()), ece(pooled, labels, kappa)};
}

std::vector<ToyNet> sample_nets(const CalibrationInput& in, double beta,
                                std::size_t S, std::uint64_t seed) {
  std::map<std::string, merge::ModulePosterior> post;
  post.emplace(in.module, in.posterior.with_beta(beta));
  const auto draws = merge::sample_merged(post, S, seed);
  const Tensor2D& w_pre = in.pretrained.module(in.module);
  std::vector<ToyNet> nets;
  nets.reserve(S);
  for (const auto& d : draws) {
    Checkpoint c = in.map_model;
    Tensor2D w = w_pre;
    axpy(in.scale, d.at(in.module), w);
    c.modules.at(in.module) = std::move(w);
    nets.push_back(from_checkpoint(c));
  }
  return nets;
}

}  // namespace

std::vector<double> default_beta_grid() {
  std::vector<double> g;
  for (int i = -8; i <= 16; ++i) g.push_back(std::pow(10.0, 0.5 * i));
  return g;
}

CalibrationReport calibrate(const CalibrationInput& in,
                            std::span<const double> beta_grid, std::size_t S,
                            std::span<const TaskDataset> val_sets,
                            std::span<const TaskDataset> test_sets,
                            std::uint64_t seed, double tolerance, int kappa) {
  if (beta_grid.empty()) throw EmptyInput("beta grid is empty");
  if (!in.map_model.modules.count(in.module)) {
    throw MissingModule("no module '" + in.module + "' in the MAP model");
  }
  CalibrationReport r;
  const ToyNet map_net = from_checkpoint(in.map_model);
  const std::span<const ToyNet> map_only(&map_net, 1);
  const Eval map_val = evaluate(map_only, val_sets, kappa);
  r.map_val_accuracy = map_val.accuracy;
  r.map_val_ece = map_val.ece;

  std::size_t chosen = 0;
  bool found = false;
  double largest = beta_grid[0];
  for (std::size_t i = 0; i < beta_grid.size(); ++i) {
    const double beta = beta_grid[i];
    const auto nets = sample_nets(in, beta, S, seed);
    const Eval e = evaluate(nets, val_sets, kappa);
    r.sweep.push_back({beta, e.accuracy, e.ece});
    if (beta > largest) largest = beta;
    if (e.accuracy >= map_val.accuracy - tolerance &&
        (!found || e.ece < r.sweep[chosen].val_ece)) {
      chosen = i;
      found = true;
    }
  }
  r.constraint_met = found;
  if (found) {
    r.best_beta = beta_grid[chosen];
  } else {
    r.best_beta = largest;
  }
  for (const auto& p : r.sweep) {
    if (p.beta == r.best_beta) {
      r.ensemble_val_accuracy = p.val_accuracy;
      r.ensemble_val_ece = p.val_ece;
      break;
    }
  }

  // Test is read only for the final report.
  const Eval map_test = evaluate(map_only, test_sets, kappa);
  r.map_test_accuracy = map_test.accuracy;
  r.map_test_ece = map_test.ece;
  const auto nets = sample_nets(in, r.best_beta, S, seed);
  const Eval ens_test = evaluate(nets, test_sets, kappa);
  r.ensemble_test_accuracy = ens_test.accuracy;
  r.ensemble_test_ece = ens_test.ece;
  return r;
}

}  // namespace mergeforge::toynet
