// Copyright 2026 The MergeForge Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <vector>

#include "mergeforge/calibrate.hpp"
#include "mergeforge/errors.hpp"
#include "mergeforge/toynet.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace mergeforge::toynet {
namespace {

TaskDataset make_set(Tensor2D x, std::vector<int> y, std::size_t classes,
                     Split split = Split::Val) {
  TaskDataset d;
  d.inputs = std::move(x);
  d.labels = std::move(y);
  d.classes = classes;
  d.split = split;
  return d;
}

TaskGenConfig small_gen() {
  TaskGenConfig c;
  c.tasks = 3;
  c.classes = 4;
  c.input_dim = 32;
  c.n_train = 2048;
  c.n_val = 64;
  c.n_test = 64;
  c.n_calib = 32;
  return c;
}

TEST(GenTasks, DeterministicPerSeed) {
  const auto a = gen_tasks(small_gen(), 5);
  const auto b = gen_tasks(small_gen(), 5);
  ASSERT_EQ(a.size(), 3u);
  for (std::size_t t = 0; t < a.size(); ++t) {
    EXPECT_EQ(a[t].train.inputs, b[t].train.inputs);
    EXPECT_EQ(a[t].test.labels, b[t].test.labels);
  }
  const auto c = gen_tasks(small_gen(), 6);
  EXPECT_FALSE(a[0].train.inputs == c[0].train.inputs);
}

TEST(GenTasks, SplitSizesAndBalancedLabels) {
  const auto cfg = small_gen();
  const auto tasks = gen_tasks(cfg, 1);
  for (const auto& t : tasks) {
    EXPECT_EQ(t.train.size(), cfg.n_train);
    EXPECT_EQ(t.val.size(), cfg.n_val);
    EXPECT_EQ(t.test.size(), cfg.n_test);
    EXPECT_EQ(t.calib.size(), cfg.n_calib);
    EXPECT_EQ(t.train.split, Split::Train);
    EXPECT_EQ(t.calib.split, Split::Calib);
    std::vector<double> hist(cfg.classes, 0.0);
    for (int y : t.train.labels) hist.at(static_cast<std::size_t>(y)) += 1.0;
    const double uniform = static_cast<double>(cfg.n_train) / cfg.classes;
    for (double h : hist) EXPECT_LE(std::abs(h - uniform), 0.1 * uniform);
  }
}

TEST(GenTasks, TasksShareNoInputRow) {
  const auto tasks = gen_tasks(small_gen(), 2);
  std::set<std::vector<double>> rows;
  std::size_t total = 0;
  for (const auto& t : tasks) {
    for (std::size_t i = 0; i < t.train.size(); ++i) {
      const auto r = t.train.inputs.row(i);
      rows.insert(std::vector<double>(r.begin(), r.end()));
      ++total;
    }
  }
  EXPECT_EQ(rows.size(), total);
}

TEST(GenTasks, SplitsAreDisjoint) {
  const auto t = gen_tasks(small_gen(), 3)[0];
  std::set<std::vector<double>> train;
  for (std::size_t i = 0; i < t.train.size(); ++i) {
    const auto r = t.train.inputs.row(i);
    train.insert(std::vector<double>(r.begin(), r.end()));
  }
  for (std::size_t i = 0; i < t.test.size(); ++i) {
    const auto r = t.test.inputs.row(i);
    EXPECT_FALSE(train.count(std::vector<double>(r.begin(), r.end())));
  }
}

TEST(Checkpointing, NetRoundTripAndGrouping) {
  const std::vector<std::size_t> w = {5, 6, 6, 6, 3};
  const ToyNet net = init_net(w, 1);
  const Checkpoint c = to_checkpoint(net, 2);
  EXPECT_EQ(from_checkpoint(c), net);
  EXPECT_EQ(c.meta.at(weight_name(0)).block, 0);
  EXPECT_EQ(c.meta.at(weight_name(0)).group, "mlp-in");
  EXPECT_EQ(c.meta.at(weight_name(1)).group, "mlp-out");
  EXPECT_EQ(c.meta.at(weight_name(2)).block, 1);
  EXPECT_EQ(c.meta.at(weight_name(2)).group, "mlp-in");
  EXPECT_EQ(c.meta.at(weight_name(3)).group, "mlp-out");
  EXPECT_EQ(c.aux.count(bias_name(3)), 1u);
}

TEST(Checkpointing, DatasetRoundTrip) {
  const auto t = gen_tasks(small_gen(), 4)[1];
  const TaskDataset back = dataset_from_checkpoint(dataset_to_checkpoint(t.val));
  EXPECT_EQ(back.inputs, t.val.inputs);
  EXPECT_EQ(back.labels, t.val.labels);
  EXPECT_EQ(back.split, t.val.split);
  EXPECT_EQ(back.classes, t.val.classes);
}

TEST(Forward, IdentityLayer) {
  ToyNet net;
  net.layers.push_back({Tensor2D::identity(3), {0, 0, 0}});
  std::mt19937_64 rng(1);
  const Tensor2D x = testutil::random_tensor(4, 3, rng);
  const Capture cap = forward_capture(net, x);
  EXPECT_EQ(cap.logits, x);
  ASSERT_EQ(cap.layer_inputs.size(), 1u);
  EXPECT_EQ(cap.layer_inputs[0], transpose(x));
}

TEST(Forward, CapturedActivationsChain) {
  const std::vector<std::size_t> w = {4, 7, 5, 3};
  const ToyNet net = init_net(w, 2);
  std::mt19937_64 rng(2);
  const Tensor2D x = testutil::random_tensor(9, 4, rng);
  const Capture cap = forward_capture(net, x);
  ASSERT_EQ(cap.layer_inputs.size(), 3u);
  for (std::size_t k = 0; k + 1 < net.layers.size(); ++k) {
    const Tensor2D& in = cap.layer_inputs[k];
    EXPECT_EQ(in.cols(), 9u);
    const Tensor2D& next = cap.layer_inputs[k + 1];
    const auto& L = net.layers[k];
    for (std::size_t n = 0; n < 9; ++n) {
      for (std::size_t o = 0; o < L.weight.rows(); ++o) {
        double z = L.bias[o];
        for (std::size_t i = 0; i < L.weight.cols(); ++i) {
          z += L.weight(o, i) * in(i, n);
        }
        EXPECT_NEAR(next(o, n), std::tanh(z), 1e-14);
      }
    }
  }
  EXPECT_LE(max_abs_diff(cap.logits, forward(net, x)), 0.0);
  EXPECT_THROW(forward(net, Tensor2D(2, 5)), ShapeError);
}

TEST(Gradients, MatchCentralFiniteDifferences) {
  const std::vector<std::size_t> w = {4, 6, 5, 3};
  ToyNet net = init_net(w, 3);
  std::mt19937_64 rng(3);
  const Tensor2D x = testutil::random_tensor(12, 4, rng);
  std::vector<int> y(12);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<int>(i % 3);
  const Gradients g = loss_and_gradients(net, x, y);
  EXPECT_NEAR(g.loss, mean_cross_entropy(net, x, y), 1e-14);

  std::uniform_int_distribution<std::size_t> layer(0, 2);
  int checked = 0;
  for (int i = 0; i < 5; ++i) {
    const std::size_t k = layer(rng);
    auto& W = net.layers[k].weight;
    std::uniform_int_distribution<std::size_t> idx(0, W.size() - 1);
    const std::size_t p = idx(rng);
    const double fd = oracle::central_diff(
        [&] { return mean_cross_entropy(net, x, y); }, W.data()[p]);
    const double an = g.weights[k].data()[p];
    EXPECT_LE(std::abs(fd - an), 1e-4 * std::max(std::abs(an), 1e-6) + 1e-9)
        << "layer " << k << " index " << p;
    ++checked;
  }
  // Biases too.
  auto& b = net.layers[1].bias;
  const double fd = oracle::central_diff(
      [&] { return mean_cross_entropy(net, x, y); }, b[2]);
  EXPECT_LE(std::abs(fd - g.biases[1][2]), 1e-4 * std::abs(g.biases[1][2]) + 1e-9);
  EXPECT_EQ(checked, 5);
}

TEST(Sgd, ZeroLearningRateIsIdentity) {
  const auto t = gen_tasks(small_gen(), 1)[0];
  const std::vector<std::size_t> w = {32, 8, 4};
  const ToyNet net = init_net(w, 4);
  TrainConfig cfg;
  cfg.eta = 0.0;
  cfg.epochs = 3;
  EXPECT_EQ(sgd_finetune(net, t.train, cfg).net, net);
}

TEST(Sgd, LinearlySeparableTwoClass) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 0.5);
  const std::size_t count = 400;
  Tensor2D x(count, 2);
  std::vector<int> y(count);
  for (std::size_t i = 0; i < count; ++i) {
    const int c = static_cast<int>(i % 2);
    x(i, 0) = (c ? 2.0 : -2.0) + n(rng);
    x(i, 1) = n(rng);
    y[i] = c;
  }
  const TaskDataset d = make_set(x, y, 2, Split::Train);
  const std::vector<std::size_t> w = {2, 2};
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.seed = 1;
  const auto r = sgd_finetune(init_net(w, 6), d, cfg);
  EXPECT_GE(accuracy(r.net, d), 0.99);
  EXPECT_FALSE(r.loss_history.empty());
  EXPECT_LT(r.loss_history.back(), r.loss_history.front());
}

TEST(Sgd, DivergenceIsReported) {
  const auto t = gen_tasks(small_gen(), 1)[0];
  const std::vector<std::size_t> w = {32, 16, 4};
  TrainConfig cfg;
  cfg.eta = 1e200;
  cfg.epochs = 5;
  EXPECT_THROW(sgd_finetune(init_net(w, 7), t.train, cfg), Divergence);
}

TEST(Metrics, ArgmaxTiesGoLow) {
  const Tensor2D m = Tensor2D::from_rows({{1, 1, 0}, {0, 2, 2}});
  EXPECT_EQ(argmax_rows(m), (std::vector<int>{0, 1}));
}

TEST(Metrics, SoftmaxRowsSumToOne) {
  std::mt19937_64 rng(8);
  const Tensor2D p = softmax_rows(testutil::random_tensor(20, 5, rng, 30.0));
  for (std::size_t i = 0; i < p.rows(); ++i) {
    double s = 0.0;
    for (double v : p.row(i)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(Score, SingleExpertAndDuplication) {
  const auto t = gen_tasks(small_gen(), 9)[0];
  const std::vector<std::size_t> w = {32, 8, 4};
  const ToyNet net = init_net(w, 9);
  const std::vector<TaskDataset> one = {t.val};
  EXPECT_EQ(score(net, one), accuracy(net, t.val));
  EXPECT_EQ(score(to_checkpoint(net, 1), one), score(net, one));

  const TaskDataset parts[2] = {t.val, t.val};
  const std::vector<TaskDataset> dup = {concat(parts)};
  EXPECT_DOUBLE_EQ(score(net, dup), score(net, one));
  EXPECT_THROW(score(net, std::vector<TaskDataset>{}), EmptySplit);
}

TEST(Score, ShuffledLabelsNearChance) {
  auto t = gen_tasks(small_gen(), 10)[0].train;
  const std::vector<std::size_t> w = {32, 4};
  TrainConfig cfg;
  cfg.epochs = 20;
  const ToyNet net = sgd_finetune(init_net(w, 10), t, cfg).net;
  std::mt19937_64 rng(10);
  std::uniform_int_distribution<int> lab(0, 3);
  for (int& y : t.labels) y = lab(rng);
  const double c = 4.0, n = static_cast<double>(t.size());
  EXPECT_NEAR(accuracy(net, t), 1.0 / c,
              3.0 * std::sqrt((1.0 / c) * (1.0 - 1.0 / c) / n));
}

TEST(Ensemble, SingletonSymmetricAndMean) {
  std::mt19937_64 rng(11);
  const std::vector<std::size_t> w = {3, 2};
  const Tensor2D x = testutil::random_tensor(5, 3, rng);
  ToyNet a = init_net(w, 1);
  EXPECT_LE(max_abs_diff(ensemble_predict(std::vector<ToyNet>{a}, x),
                         softmax_rows(forward(a, x))),
            0.0);

  ToyNet b = a;
  b.layers[0].weight *= -1.0;
  const Tensor2D half = ensemble_predict(std::vector<ToyNet>{a, b}, x);
  for (double v : half.data()) EXPECT_NEAR(v, 0.5, 1e-15);

  const std::vector<std::size_t> w3 = {3, 4, 2};
  std::vector<ToyNet> nets = {init_net(w3, 2), init_net(w3, 3), init_net(w3, 4)};
  const Tensor2D e = ensemble_predict(nets, x);
  Tensor2D ref(5, 2);
  for (const auto& n : nets) ref += softmax_rows(forward(n, x));
  ref *= 1.0 / 3.0;
  EXPECT_LE(max_abs_diff(e, ref), 1e-15);
  EXPECT_THROW(ensemble_predict(std::vector<ToyNet>{}, x), EmptyInput);
}

TEST(Ece, Examples) {
  const Tensor2D sure = Tensor2D::from_rows({{1, 0}, {0, 1}});
  EXPECT_EQ(ece(sure, std::vector<int>{0, 1}), 0.0);
  EXPECT_EQ(ece(sure, std::vector<int>{1, 0}), 1.0);
  const Tensor2D p = Tensor2D::from_rows({{0.6, 0.4}, {0.6, 0.4}, {0.9, 0.1}, {0.9, 0.1}});
  EXPECT_NEAR(ece(p, std::vector<int>{0, 1, 0, 0}, 20), 0.10, 1e-12);
  EXPECT_THROW(ece(Tensor2D(), std::vector<int>{}), EmptyInput);
}

TEST(Ece, BoundedOnRandomInputs) {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<int> lab(0, 2);
  for (int i = 0; i < 20; ++i) {
    const Tensor2D p = softmax_rows(testutil::random_tensor(30, 3, rng, 3.0));
    std::vector<int> y(30);
    for (int& v : y) v = lab(rng);
    const double e = ece(p, y);
    EXPECT_GE(e, 0.0);
    EXPECT_LE(e, 1.0);
  }
}

TEST(Audit, CountsReads) {
  SplitAudit::reset();
  const auto t = gen_tasks(small_gen(), 13)[0];
  const std::vector<std::size_t> w = {32, 4};
  const ToyNet net = init_net(w, 1);
  accuracy(net, t.val);
  EXPECT_EQ(SplitAudit::reads(Split::Val), t.val.size());
  EXPECT_EQ(SplitAudit::reads(Split::Test), 0u);
  accuracy(net, t.test);
  EXPECT_EQ(SplitAudit::reads(Split::Test), t.test.size());
  SplitAudit::reset();
  EXPECT_EQ(SplitAudit::reads(Split::Test), 0u);
}

TEST(Calibrate, HugeBetaCollapsesToMap) {
  const auto tasks = gen_tasks(small_gen(), 14);
  const std::vector<std::size_t> w = {32, 8, 4};
  const ToyNet pre = init_net(w, 14);
  TrainConfig cfg;
  cfg.epochs = 5;
  const ToyNet map = sgd_finetune(pre, tasks[0].train, cfg).net;
  CalibrationInput in;
  in.map_model = to_checkpoint(map, 1);
  in.pretrained = to_checkpoint(pre, 1);
  in.module = weight_name(1);
  in.posterior.map_estimate =
      in.map_model.module(in.module) - in.pretrained.module(in.module);
  in.posterior.row_cov = Tensor2D::identity(8);
  in.posterior.beta = 1.0;
  std::vector<TaskDataset> val, test;
  for (const auto& t : tasks) {
    val.push_back(t.val);
    test.push_back(t.test);
  }
  const std::vector<double> grid = {1e12};
  const auto r = calibrate(in, grid, 10, val, test, 1);
  EXPECT_EQ(r.best_beta, 1e12);
  EXPECT_LE(std::abs(r.ensemble_test_ece - r.map_test_ece), 1e-3);
  EXPECT_LE(std::abs(r.ensemble_val_ece - r.map_val_ece), 1e-3);
  EXPECT_TRUE(r.constraint_met);
  EXPECT_EQ(default_beta_grid().size(), 25u);
}

}  // namespace
}  // namespace mergeforge::toynet
