// Copyright 2026 The MergeForge Authors
// SPDX-License-Identifier: Apache-2.0

#include "mergeforge/toynet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <utility>

#include "mergeforge/errors.hpp"
#include "mergeforge/kernels.hpp"
#include "mergeforge/rng.hpp"

namespace mergeforge::toynet {
namespace {

constexpr const char* kInputsName = "inputs";
constexpr const char* kLabelsName = "labels";
constexpr const char* kInfoName = "info";

// out(n x o) = in(n x i) W^T + b
Tensor2D affine(const Tensor2D& in, const Layer& layer) {
  if (in.cols() != layer.weight.cols()) {
    throw ShapeError("activation width " + std::to_string(in.cols()) +
                     " != layer input " + std::to_string(layer.weight.cols()));
  }
  Tensor2D out = matmul_nt(in, layer.weight);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += layer.bias[c];
  }
  return out;
}

void tanh_inplace(Tensor2D& t) {
  for (auto& v : t.data()) v = std::tanh(v);
}

Tensor2D gather_rows(const Tensor2D& src, std::span<const std::size_t> idx) {
  Tensor2D out(idx.size(), src.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    auto s = src.row(idx[r]);
    std::copy(s.begin(), s.end(), out.row(r).begin());
  }
  return out;
}

Tensor2D haar_orthogonal(std::size_t d, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  // Columns of q are orthonormalized with modified Gram-Schmidt.
  std::vector<std::vector<double>> cols(d, std::vector<double>(d));
  for (auto& c : cols) {
    for (auto& v : c) v = normal(rng);
  }
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t p = 0; p < j; ++p) {
      double dot = 0.0;
      for (std::size_t i = 0; i < d; ++i) dot += cols[p][i] * cols[j][i];
      for (std::size_t i = 0; i < d; ++i) cols[j][i] -= dot * cols[p][i];
    }
    double nrm = 0.0;
    for (double v : cols[j]) nrm += v * v;
    nrm = std::sqrt(nrm);
    for (auto& v : cols[j]) v /= nrm;
  }
  Tensor2D q(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) q(i, j) = cols[j][i];
  }
  return q;
}

TaskDataset sample_split(const std::vector<std::vector<double>>& means,
                         std::size_t n, double noise, Split split, Rng rng) {
  const std::size_t classes = means.size();
  const std::size_t d = means.front().size();
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % classes);
  std::shuffle(labels.begin(), labels.end(), rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor2D x(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& mu = means[static_cast<std::size_t>(labels[i])];
    auto row = x.row(i);
    for (std::size_t j = 0; j < d; ++j) row[j] = mu[j] + noise * normal(rng);
  }
  return TaskDataset{std::move(x), std::move(labels), split, classes};
}

}  // namespace

std::atomic<std::size_t> SplitAudit::counts_[4] = {0, 0, 0, 0};

void SplitAudit::record(Split split, std::size_t samples) {
  counts_[static_cast<int>(split)].fetch_add(samples,
                                              std::memory_order_relaxed);
}

std::size_t SplitAudit::reads(Split split) {
  return counts_[static_cast<int>(split)].load(std::memory_order_relaxed);
}

void SplitAudit::reset() {
  for (auto& c : counts_) c.store(0, std::memory_order_relaxed);
}

void ToyNet::validate() const {
  if (layers.empty()) throw ShapeError("network has no layers");
  for (std::size_t k = 0; k < layers.size(); ++k) {
    if (layers[k].bias.size() != layers[k].weight.rows()) {
      throw ShapeError("bias length mismatch in layer " + std::to_string(k));
    }
    if (k > 0 && layers[k].weight.cols() != layers[k - 1].weight.rows()) {
      throw ShapeError("layer " + std::to_string(k) +
                       " input does not chain with previous output");
    }
  }
}

ToyNet init_net(std::span<const std::size_t> widths, std::uint64_t seed) {
  if (widths.size() < 2) throw ShapeError("need at least input and output");
  Rng rng(seed);
  ToyNet net;
  for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
    const std::size_t in = widths[k], out = widths[k + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> u(-limit, limit);
    Tensor2D w(out, in);
    for (auto& v : w.data()) v = u(rng);
    net.layers.push_back({std::move(w), std::vector<double>(out, 0.0)});
  }
  return net;
}

std::string weight_name(std::size_t layer) {
  return "layer" + std::to_string(layer) + ".weight";
}

std::string bias_name(std::size_t layer) {
  return "layer" + std::to_string(layer) + ".bias";
}

Checkpoint to_checkpoint(const ToyNet& net, int blocks) {
  net.validate();
  const std::size_t n = net.layers.size();
  if (blocks < 1 || static_cast<std::size_t>(blocks) > n) {
    throw OutOfRange("block count must be in [1, layers]");
  }
  const std::size_t per_block =
      (n + static_cast<std::size_t>(blocks) - 1) / static_cast<std::size_t>(blocks);
  Checkpoint ckpt;
  for (std::size_t k = 0; k < n; ++k) {
    const int block = static_cast<int>(k / per_block);
    const char* group = (k % per_block) % 2 == 0 ? "mlp-in" : "mlp-out";
    ckpt.add_module(weight_name(k), net.layers[k].weight, block, group);
    ckpt.aux[bias_name(k)] = net.layers[k].bias;
  }
  return ckpt;
}

ToyNet from_checkpoint(const Checkpoint& ckpt) {
  ToyNet net;
  for (std::size_t k = 0; k < ckpt.modules.size(); ++k) {
    net.layers.push_back(
        {ckpt.module(weight_name(k)), ckpt.aux_vector(bias_name(k))});
  }
  net.validate();
  return net;
}

Tensor2D forward(const ToyNet& net, const Tensor2D& inputs) {
  Tensor2D h = inputs;
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    h = affine(h, net.layers[k]);
    if (k + 1 < net.layers.size()) tanh_inplace(h);
  }
  return h;
}

Capture forward_capture(const ToyNet& net, const Tensor2D& inputs) {
  Capture cap;
  Tensor2D h = inputs;
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    if (h.cols() != net.layers[k].weight.cols()) {
      throw ShapeError("capture: activation width mismatch at layer " +
                       std::to_string(k));
    }
    cap.layer_inputs.push_back(transpose(h));
    h = affine(h, net.layers[k]);
    if (k + 1 < net.layers.size()) tanh_inplace(h);
  }
  cap.logits = std::move(h);
  return cap;
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::Train:
      return "train";
    case Split::Val:
      return "val";
    case Split::Test:
      return "test";
    case Split::Calib:
      return "calib";
  }
  return "unknown";
}

const TaskDataset& TaskData::get(Split s) const {
  switch (s) {
    case Split::Train:
      return train;
    case Split::Val:
      return val;
    case Split::Test:
      return test;
    case Split::Calib:
      return calib;
  }
  return train;
}

std::vector<TaskData> gen_tasks(const TaskGenConfig& cfg, std::uint64_t seed) {
  if (cfg.tasks < 2) throw OutOfRange("need at least 2 tasks");
  if (cfg.classes < 2) throw OutOfRange("need at least 2 classes");
  const std::size_t d = cfg.input_dim;

  auto trng = make_rng(seed, {0});
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> templ(cfg.classes, std::vector<double>(d));
  for (auto& mu : templ) {
    double nrm = 0.0;
    for (auto& v : mu) {
      v = normal(trng);
      nrm += v * v;
    }
    nrm = std::sqrt(nrm);
    for (auto& v : mu) v *= cfg.class_separation / nrm;
  }

  std::vector<TaskData> tasks;
  tasks.reserve(cfg.tasks);
  for (std::size_t t = 0; t < cfg.tasks; ++t) {
    auto rrng = make_rng(seed, {1, t});
    const Tensor2D q = haar_orthogonal(d, rrng);
    std::vector<std::vector<double>> means(cfg.classes, std::vector<double>(d));
    for (std::size_t c = 0; c < cfg.classes; ++c) {
      for (std::size_t i = 0; i < d; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += q(i, j) * templ[c][j];
        means[c][i] = s;
      }
    }
    auto split = [&](Split s, std::size_t n) {
      return sample_split(means, n, cfg.noise, s,
                          make_rng(seed, {2, t, static_cast<std::uint64_t>(s)}));
    };
    tasks.push_back(TaskData{split(Split::Train, cfg.n_train),
                             split(Split::Val, cfg.n_val),
                             split(Split::Test, cfg.n_test),
                             split(Split::Calib, cfg.n_calib)});
  }
  return tasks;
}

TaskDataset concat(std::span<const TaskDataset> parts) {
  if (parts.empty()) throw EmptyInput("nothing to concatenate");
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.inputs.cols() != parts.front().inputs.cols() ||
        p.classes != parts.front().classes) {
      throw ShapeError("cannot concatenate datasets of different shape");
    }
    rows += p.size();
  }
  std::vector<double> data;
  data.reserve(rows * parts.front().inputs.cols());
  TaskDataset out;
  out.split = parts.front().split;
  out.classes = parts.front().classes;
  for (const auto& p : parts) {
    data.insert(data.end(), p.inputs.data().begin(), p.inputs.data().end());
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
  }
  out.inputs = Tensor2D(rows, parts.front().inputs.cols(), std::move(data));
  return out;
}

Checkpoint dataset_to_checkpoint(const TaskDataset& data) {
  Checkpoint ckpt;
  ckpt.add_module(kInputsName, data.inputs, 0, "data");
  ckpt.aux[kLabelsName] = std::vector<double>(data.labels.begin(),
                                              data.labels.end());
  ckpt.aux[kInfoName] = {static_cast<double>(data.split),
                         static_cast<double>(data.classes)};
  return ckpt;
}

TaskDataset dataset_from_checkpoint(const Checkpoint& ckpt) {
  TaskDataset data;
  data.inputs = ckpt.module(kInputsName);
  const auto& labels = ckpt.aux_vector(kLabelsName);
  const auto& info = ckpt.aux_vector(kInfoName);
  if (info.size() != 2 || labels.size() != data.inputs.rows()) {
    throw ShapeError("dataset container is inconsistent");
  }
  data.split = static_cast<Split>(static_cast<int>(info[0]));
  data.classes = static_cast<std::size_t>(info[1]);
  data.labels.reserve(labels.size());
  for (double v : labels) {
    if (v < 0 || v >= static_cast<double>(data.classes)) {
      throw ShapeError("label out of range");
    }
    data.labels.push_back(static_cast<int>(v));
  }
  return data;
}

Gradients loss_and_gradients(const ToyNet& net, const Tensor2D& inputs,
                             std::span<const int> labels) {
  const std::size_t n = inputs.rows();
  const std::size_t layers = net.layers.size();
  if (labels.size() != n || n == 0) throw ShapeError("label count mismatch");

  std::vector<Tensor2D> acts;  // acts[k] = input to layer k
  acts.reserve(layers);
  acts.push_back(inputs);
  Tensor2D z;
  for (std::size_t k = 0; k < layers; ++k) {
    z = affine(acts.back(), net.layers[k]);
    if (k + 1 < layers) {
      tanh_inplace(z);
      acts.push_back(std::move(z));
    }
  }

  // z holds logits; turn it into dL/dlogits for the mean cross-entropy.
  Gradients g;
  g.weights.resize(layers);
  g.biases.resize(layers);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    auto row = z.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (auto& v : row) {
      v = std::exp(v - mx);
      sum += v;
    }
    const auto y = static_cast<std::size_t>(labels[r]);
    g.loss -= std::log(row[y] / sum);
    for (auto& v : row) v = v / sum * inv_n;
    row[y] -= inv_n;
  }
  g.loss *= inv_n;

  Tensor2D delta = std::move(z);
  for (std::size_t k = layers; k-- > 0;) {
    g.weights[k] = matmul_tn(delta, acts[k]);
    auto& gb = g.biases[k];
    gb.assign(delta.cols(), 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      auto row = delta.row(r);
      for (std::size_t c = 0; c < gb.size(); ++c) gb[c] += row[c];
    }
    if (k == 0) break;
    Tensor2D dh = matmul(delta, net.layers[k].weight);
    auto hd = acts[k].data();
    auto dd = dh.data();
    for (std::size_t i = 0; i < dd.size(); ++i) dd[i] *= 1.0 - hd[i] * hd[i];
    delta = std::move(dh);
  }
  return g;
}

double mean_cross_entropy(const ToyNet& net, const Tensor2D& inputs,
                          std::span<const int> labels) {
  Tensor2D logits = forward(net, inputs);
  double loss = 0.0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double v : row) sum += std::exp(v - mx);
    loss -= row[static_cast<std::size_t>(labels[r])] - mx - std::log(sum);
  }
  return loss / static_cast<double>(logits.rows());
}

TrainResult sgd_finetune(ToyNet net, const TaskDataset& data,
                         const TrainConfig& cfg) {
  net.validate();
  if (data.inputs.cols() != net.input_dim() ||
      data.classes != net.output_dim()) {
    throw ShapeError("network does not match dataset dimensions");
  }
  if (data.size() == 0) throw EmptySplit("training split is empty");
  if (cfg.batch == 0) throw OutOfRange("batch must be positive");
  SplitAudit::record(data.split, data.size());

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<int> batch_labels;

  TrainResult result;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      Tensor2D xb = gather_rows(data.inputs, idx);
      batch_labels.resize(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) {
        batch_labels[i] = data.labels[idx[i]];
      }
      Gradients g = loss_and_gradients(net, xb, batch_labels);
      if (!std::isfinite(g.loss)) {
        throw Divergence("non-finite loss at epoch " + std::to_string(epoch));
      }
      epoch_loss += g.loss * static_cast<double>(idx.size());
      for (std::size_t k = 0; k < net.layers.size(); ++k) {
        auto w = net.layers[k].weight.data();
        auto gw = g.weights[k].data();
        for (std::size_t i = 0; i < w.size(); ++i) {
          w[i] -= cfg.eta * (gw[i] + cfg.rho * w[i]);
        }
        auto& b = net.layers[k].bias;
        for (std::size_t i = 0; i < b.size(); ++i) {
          b[i] -= cfg.eta * g.biases[k][i];
        }
      }
    }
    epoch_loss /= static_cast<double>(order.size());
    if (!std::isfinite(epoch_loss) || !net.layers.front().weight.all_finite()) {
      throw Divergence("non-finite state at epoch " + std::to_string(epoch));
    }
    result.loss_history.push_back(epoch_loss);
    const auto& h = result.loss_history;
    if (cfg.plateau_window > 0 && h.size() > cfg.plateau_window) {
      const double prev = h[h.size() - 1 - cfg.plateau_window];
      if (std::abs(h.back() - prev) <= cfg.plateau_tol * std::abs(prev)) break;
    }
  }
  result.net = std::move(net);
  return result;
}

std::vector<int> argmax_rows(const Tensor2D& m) {
  std::vector<int> out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) -
                              row.begin());
  }
  return out;
}

Tensor2D softmax_rows(const Tensor2D& logits) {
  Tensor2D p = logits;
  for (std::size_t r = 0; r < p.rows(); ++r) {
    auto row = p.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (auto& v : row) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (auto& v : row) v /= sum;
  }
  return p;
}

double accuracy_of(const Tensor2D& scores, std::span<const int> labels) {
  if (scores.rows() != labels.size()) throw ShapeError("label count mismatch");
  if (labels.empty()) throw EmptySplit("no samples");
  const auto pred = argmax_rows(scores);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double accuracy(const ToyNet& net, const TaskDataset& data) {
  if (data.size() == 0) throw EmptySplit(std::string(to_string(data.split)));
  SplitAudit::record(data.split, data.size());
  return accuracy_of(forward(net, data.inputs), data.labels);
}

double score(const ToyNet& net, std::span<const TaskDataset> val_sets) {
  if (val_sets.empty()) throw EmptySplit("no validation sets");
  double s = 0.0;
  for (const auto& v : val_sets) s += accuracy(net, v);
  return s / static_cast<double>(val_sets.size());
}

double score(const Checkpoint& merged, std::span<const TaskDataset> val_sets) {
  return score(from_checkpoint(merged), val_sets);
}

Tensor2D ensemble_predict(std::span<const ToyNet> nets,
                          const Tensor2D& inputs) {
  if (nets.empty()) throw EmptyInput("ensemble has no members");
  Tensor2D mean;
  for (const auto& net : nets) {
    Tensor2D p = softmax_rows(forward(net, inputs));
    if (mean.empty()) {
      mean = std::move(p);
    } else {
      if (!mean.same_shape(p)) throw ShapeError("ensemble output widths differ");
      mean += p;
    }
  }
  mean *= 1.0 / static_cast<double>(nets.size());
  return mean;
}

double ece(const Tensor2D& probs, std::span<const int> labels, int kappa) {
  if (probs.rows() == 0) throw EmptyInput("no predictions");
  if (kappa < 1) throw OutOfRange("kappa must be >= 1");
  if (labels.size() != probs.rows()) throw ShapeError("label count mismatch");
  const auto bins = static_cast<std::size_t>(kappa);
  std::vector<double> conf_sum(bins, 0.0), hit_sum(bins, 0.0);
  std::vector<std::size_t> count(bins, 0);
  const auto pred = argmax_rows(probs);
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    const double conf = probs(r, static_cast<std::size_t>(pred[r]));
    auto b = static_cast<std::size_t>(std::floor(conf * kappa));
    b = std::min(b, bins - 1);
    conf_sum[b] += conf;
    hit_sum[b] += pred[r] == labels[r] ? 1.0 : 0.0;
    ++count[b];
  }
  const double n = static_cast<double>(probs.rows());
  double e = 0.0;
  for (std::size_t b = 0; b < bins; ++b) {
    if (count[b] == 0) continue;
    const double c = static_cast<double>(count[b]);
    e += (c / n) * std::abs(hit_sum[b] / c - conf_sum[b] / c);
  }
  return e;
}

}  // namespace mergeforge::toynet
