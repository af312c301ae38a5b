// Copyright 2026 The MergeForge Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "mergeforge/errors.hpp"
#include "mergeforge/pipeline.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace mergeforge::pipeline {
namespace {

using toynet::Split;
using toynet::SplitAudit;

HarnessConfig tiny_config(std::uint64_t seed = 0) {
  HarnessConfig c;
  c.data.tasks = 3;
  c.data.classes = 3;
  c.data.input_dim = 8;
  c.data.n_train = 192;
  c.data.n_val = 48;
  c.data.n_test = 48;
  c.data.n_calib = 24;
  c.hidden = 12;
  c.layers = 4;
  c.blocks = 2;
  c.pretrain_epochs = 10;
  c.train.epochs = 25;
  c.seed = seed;
  return c;
}

const Harness& tiny() {
  static const Harness h = build_harness(tiny_config());
  return h;
}

// Same harness cut down to its first task.
Harness single_task(const Harness& h) {
  Harness one = h;
  one.tasks.resize(1);
  one.experts.resize(1);
  return one;
}

TEST(Harness, BuildIsDeterministic) {
  const Harness b = build_harness(tiny_config());
  EXPECT_EQ(b.pretrained, tiny().pretrained);
  ASSERT_EQ(b.experts.size(), 3u);
  for (std::size_t t = 0; t < 3; ++t) EXPECT_EQ(b.experts[t], tiny().experts[t]);
}

TEST(Harness, SaveLoadRoundTrip) {
  const auto dir = testutil::scratch_dir();
  save_tasks(tiny(), dir);
  save_models(tiny(), dir);
  const Harness back = load_harness(dir);
  EXPECT_EQ(back.pretrained, tiny().pretrained);
  EXPECT_EQ(back.experts, tiny().experts);
  ASSERT_EQ(back.tasks.size(), tiny().tasks.size());
  EXPECT_EQ(back.tasks[2].calib.inputs, tiny().tasks[2].calib.inputs);
  EXPECT_EQ(back.tasks[1].test.labels, tiny().tasks[1].test.labels);
  EXPECT_EQ(harness_config_json(back.config), harness_config_json(tiny().config));
  EXPECT_TRUE(fs::exists(dir / "experts" / "expert_02" / "weights.bin"));
}

TEST(Harness, ConfigJsonRejectsGarbage) {
  EXPECT_THROW(parse_harness_config("{]"), FormatError);
}

TEST(Harness, ExpertsBeatPretrainedOnTheirTasks) {
  const auto s = summarize_training(tiny());
  double pre = 0.0, ex = 0.0;
  for (std::size_t t = 0; t < 3; ++t) {
    pre += s.pretrained_val[t];
    ex += s.expert_val[t];
  }
  EXPECT_GT(ex, pre);
}

TEST(MergeConfigJson, RoundTrip) {
  MergeConfig c;
  c.mode = StatsMode::Mixed;
  c.eps = 0.25;
  c.scales = {{0, 1.1}, {1, 1.2}};
  c.lambdas = {{{0, "mlp-in"}, 0.001}, {{1, "mlp-out"}, 3.0}};
  const MergeConfig b = parse_merge_config(merge_config_json(c));
  EXPECT_EQ(b.mode, c.mode);
  EXPECT_EQ(b.eps, c.eps);
  EXPECT_EQ(b.scales, c.scales);
  EXPECT_EQ(b.lambdas, c.lambdas);
  EXPECT_THROW(parse_merge_config(R"({"mode":"mixed","scales":[],"lambdas":[]})"),
               MissingConfigCell);
  EXPECT_THROW(parse_merge_config(R"({"mode":"assisted","eps":0.5,"scales":[],"lambdas":[]})"),
               OutOfRange);
  EXPECT_THROW(parse_merge_config("[1,2"), FormatError);
}

TEST(Anchors, ParseAndBuild) {
  EXPECT_EQ(parse_anchor("pretrained").kind, AnchorKind::Pretrained);
  EXPECT_EQ(parse_anchor("ta").kind, AnchorKind::TaskArithmetic);
  EXPECT_EQ(parse_anchor("/some/dir").kind, AnchorKind::Path);
  EXPECT_EQ(ta_alpha_grid().size(), 10u);

  const Anchor ta = build_anchor(tiny(), {AnchorKind::TaskArithmetic, {}});
  ASSERT_TRUE(ta.alpha.has_value());
  double best = -1.0;
  for (double a : ta_alpha_grid()) {
    best = std::max(best, toynet::score(ta_anchor(tiny().pretrained, tiny().experts, a),
                                        tiny().split(Split::Val)));
  }
  EXPECT_EQ(ta.val_score, best);

  const auto dir = testutil::scratch_dir();
  save_checkpoint(tiny().experts[0], dir);
  const Anchor p = build_anchor(tiny(), {AnchorKind::Path, dir});
  EXPECT_EQ(p.ckpt, tiny().experts[0]);
}

TEST(FewShot, KeepsFirstSamplesOfEachClass) {
  const auto& calib = tiny().tasks[0].calib;
  const auto one = few_shot(calib, 1);
  ASSERT_EQ(one.size(), 3u);
  std::vector<int> seen;
  for (int y : one.labels) seen.push_back(y);
  std::sort(seen.begin(), seen.end());
  EXPECT_EQ(seen, (std::vector<int>{0, 1, 2}));
  EXPECT_EQ(few_shot(calib, 0).size(), calib.size());
}

TEST(Merge, AnchorDominantLimitMatchesPretrained) {
  const MergeProblem p(tiny(), build_anchor(tiny(), {AnchorKind::Pretrained, {}}),
                       StatsMode::Assisted);
  const Checkpoint m = p.merge(p.shared_config(1e12));
  EXPECT_NEAR(p.val_score(m), toynet::score(tiny().pretrained, tiny().split(Split::Val)),
              1e-6);
  for (const auto& [name, w] : m.modules) {
    EXPECT_LE(max_abs_diff(w, tiny().pretrained.modules.at(name)), 1e-8);
  }
}

TEST(Merge, DataFreeSingleExpertRecovery) {
  const Harness one = single_task(tiny());
  const MergeProblem p(one, build_anchor(one, {AnchorKind::Pretrained, {}}),
                       StatsMode::DataFree);
  const Checkpoint m = p.merge(p.shared_config(0.0));
  for (const auto& [name, w] : m.modules) {
    // Exact where U^T U is invertible (d_out >= d_in); wide layers go
    // through the jitter ladder.
    const Tensor2D& ref = one.experts[0].modules.at(name);
    const double tol = w.rows() >= w.cols() ? 1e-8 : 1e-4;
    EXPECT_LE(max_abs_diff(w, ref), tol) << name;
  }
  EXPECT_NEAR(p.val_score(m), toynet::accuracy(toynet::from_checkpoint(one.experts[0]),
                                               one.tasks[0].val),
              1e-12);
}

TEST(Merge, AssistedMatchesHandSolve) {
  const Anchor anchor = build_anchor(tiny(), {AnchorKind::TaskArithmetic, {}});
  const MergeProblem p(tiny(), anchor, StatsMode::Assisted);
  MergeConfig c = p.shared_config(0.05);
  c.lambdas[{1, "mlp-out"}] = 0.7;
  const auto merged = merge::merge_all(p.stats_for(c), p.task_vectors(), c);
  const auto st = p.stats_for(c);
  for (const auto& [name, u] : merged) {
    const double lambda = c.lambda_for(p.task_vectors().meta.at(name).cell());
    oracle::Mat a = oracle::from(st.at(name).gram);
    for (std::size_t i = 0; i < a.rows; ++i) a(i, i) += lambda;
    oracle::Mat rhs = oracle::from(st.at(name).cross);
    const oracle::Mat u0 = oracle::from(p.task_vectors().anchor.at(name));
    for (std::size_t i = 0; i < rhs.v.size(); ++i) rhs.v[i] += lambda * u0.v[i];
    const oracle::Mat ref = oracle::transpose(oracle::gauss_solve(a, oracle::transpose(rhs)));
    EXPECT_LE(oracle::diff_norm(oracle::from(u), ref), 1e-10 * (1 + oracle::norm(ref)))
        << name;
  }
}

TEST(Merge, ModeMismatchAndValFraction) {
  const Anchor anchor = build_anchor(tiny(), {AnchorKind::Pretrained, {}});
  const MergeProblem p(tiny(), anchor, StatsMode::DataFree);
  MergeConfig c = p.shared_config(0.1);
  c.mode = StatsMode::Assisted;
  EXPECT_THROW(p.merge(c), OutOfRange);
  EXPECT_THROW(MergeProblem(tiny(), anchor, StatsMode::DataFree, 0, 0.0), OutOfRange);

  SplitAudit::reset();
  const MergeProblem half(tiny(), anchor, StatsMode::DataFree, 0, 0.5);
  half.val_score(half.merge(half.shared_config(0.1)));
  EXPECT_EQ(SplitAudit::reads(Split::Val), 3u * 24u);
}

TEST(Search, RandomOnlyBudget) {
  const MergeProblem p(tiny(), build_anchor(tiny(), {AnchorKind::Pretrained, {}}),
                       StatsMode::DataFree);
  SearchOptions o;
  o.budget = 10;
  o.n_init = 10;
  const SearchOutcome r = run_search(p, o);
  EXPECT_EQ(r.history.size(), 10u);
  EXPECT_EQ(r.new_trials, 10u);
  EXPECT_EQ(r.best_val, r.history.best().score);
  EXPECT_GT(r.test, 0.0);
}

TEST(Search, ResumeRunsOnlyTheRemainder) {
  const MergeProblem p(tiny(), build_anchor(tiny(), {AnchorKind::Pretrained, {}}),
                       StatsMode::DataFree);
  const auto dir = testutil::scratch_dir();
  SearchOptions o;
  o.budget = 30;
  o.history_log = dir / "history.jsonl";
  run_search(p, o);
  o.budget = 60;
  o.resume = true;
  const SearchOutcome r = run_search(p, o);
  EXPECT_EQ(r.new_trials, 30u);
  EXPECT_EQ(r.history.size(), 60u);

  SearchOptions fresh;
  fresh.budget = 60;
  const SearchOutcome f = run_search(p, fresh);
  EXPECT_EQ(f.best_val, r.best_val);
  EXPECT_EQ(f.best.lambdas, r.best.lambdas);

  const auto space = search_space(p, o.ranges);
  const auto log = boopt::read_history(space, dir / "history.jsonl");
  ASSERT_EQ(log.size(), 60u);
  double best = -1.0;
  for (const auto& t : log.trials) {
    EXPECT_GE(std::max(best, t.score), best);
    best = std::max(best, t.score);
  }
  EXPECT_EQ(best, r.best_val);
}

TEST(Search, NeverReadsTestUntilTheEnd) {
  const MergeProblem p(tiny(), build_anchor(tiny(), {AnchorKind::TaskArithmetic, {}}),
                       StatsMode::Assisted);
  const auto space = search_space(p, {});
  SplitAudit::reset();
  boopt::BoOptions bo;
  bo.budget = 15;
  boopt::bo_search(space, [&](std::span<const double> v) {
    return p.val_score(p.merge(space.to_config(v)));
  }, bo);
  EXPECT_EQ(SplitAudit::reads(Split::Test), 0u);
  EXPECT_GT(SplitAudit::reads(Split::Val), 0u);

  SplitAudit::reset();
  SearchOptions o;
  o.budget = 12;
  run_search(p, o);
  // Exactly one Test pass over every task, for the final report.
  EXPECT_EQ(SplitAudit::reads(Split::Test), 3u * 48u);
}

TEST(Search, PresetRanges) {
  EXPECT_EQ(preset_ranges(Preset::VitLike).lambda_lo, 1e-4);
  EXPECT_EQ(preset_ranges(Preset::LlamaLike).lambda_hi, 100.0);
  EXPECT_EQ(parse_preset("llama-like"), Preset::LlamaLike);
  EXPECT_THROW(parse_preset("gpt"), OutOfRange);
}

TEST(Ablation, SharedGridSizeAndDegenerateArms) {
  const Anchor anchor = build_anchor(tiny(), {AnchorKind::Pretrained, {}});
  const MergeProblem p(tiny(), anchor, StatsMode::DataFree);
  EXPECT_EQ(run_shared_grid(p, {}).evaluated, 15u);

  AblateOptions o;
  o.budget = 10;
  o.n_init = 10;
  const auto rows = run_ablation(tiny(), anchor, o, 3);
  std::vector<std::pair<std::string, std::string>> keys;
  for (const auto& r : rows) keys.emplace_back(r.setting, r.variant);
  const std::vector<std::pair<std::string, std::string>> expect = {
      {"assisted", "shared"}, {"assisted", "random"}, {"assisted", "bo"},
      {"datafree", "shared"}, {"datafree", "random"}, {"datafree", "bo"},
      {"1-shot", "bo"},       {"1-shot mix", "bo"}};
  EXPECT_EQ(keys, expect);
  EXPECT_EQ(rows[1].val, rows[2].val);
  EXPECT_EQ(rows[1].test, rows[2].test);
  EXPECT_EQ(rows[4].val, rows[5].val);
}

TEST(Calibration, RunsOnFinalModule) {
  const MergeProblem p(tiny(), build_anchor(tiny(), {AnchorKind::TaskArithmetic, {}}),
                       StatsMode::Assisted);
  const std::vector<double> grid = {1e12};
  const auto r = run_calibration(p, p.shared_config(0.1), grid, 4, 1);
  EXPECT_LE(std::abs(r.ensemble_test_ece - r.map_test_ece), 1e-3);
  EXPECT_LE(std::abs(r.ensemble_test_accuracy - r.map_test_accuracy), 1e-9);
}

TEST(Alignment, UntrainedExpertsAreUndefined) {
  const Harness& h = tiny();
  const auto tvs = task_vectors(h.pretrained, {h.pretrained, h.pretrained, h.pretrained},
                                h.pretrained);
  const auto nets = h.expert_nets();
  const auto rep = stats::alignment_report(nets, h.split(Split::Calib), tvs);
  ASSERT_FALSE(rep.rows.empty());
  for (const auto& r : rep.rows) EXPECT_FALSE(r.cos.has_value());
}

}  // namespace
}  // namespace mergeforge::pipeline
