// Copyright 2026 The MergeForge Authors
// SPDX-License-Identifier: Apache-2.0

// Small tanh MLP classifier, synthetic multi-task data and the evaluation
// metrics used by the merge search (accuracy score, softmax ensembles, ECE).

#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mergeforge/ckpt.hpp"
#include "mergeforge/linalg.hpp"

namespace mergeforge::toynet {

struct Layer {
  Tensor2D weight;  // out x in
  std::vector<double> bias;
};

/// Linear layers with tanh between them; the last layer emits logits.
struct ToyNet {
  std::vector<Layer> layers;

  std::size_t input_dim() const { return layers.front().weight.cols(); }
  std::size_t output_dim() const { return layers.back().weight.rows(); }
  void validate() const;  // throws ShapeError on a broken layer chain

  friend bool operator==(const ToyNet& a, const ToyNet& b) {
    if (a.layers.size() != b.layers.size()) return false;
    for (std::size_t k = 0; k < a.layers.size(); ++k) {
      if (!(a.layers[k].weight == b.layers[k].weight) ||
          a.layers[k].bias != b.layers[k].bias) {
        return false;
      }
    }
    return true;
  }
};

/// widths = {d_in, h_1, ..., C}; Glorot-uniform weights, zero biases.
ToyNet init_net(std::span<const std::size_t> widths, std::uint64_t seed);

std::string weight_name(std::size_t layer);
std::string bias_name(std::size_t layer);

/// Exports layers as 2D modules. Layers are split into `blocks` consecutive
/// blocks; within a block, layers alternate between the "mlp-in" and
/// "mlp-out" groups.
Checkpoint to_checkpoint(const ToyNet& net, int blocks);
ToyNet from_checkpoint(const Checkpoint& ckpt);

/// Logits (n x C) for row-major inputs (n x d_in).
Tensor2D forward(const ToyNet& net, const Tensor2D& inputs);

struct Capture {
  Tensor2D logits;
  // Per layer, the matrix of that layer's input activations with one
  // column per sample (d_in_k x n).
  std::vector<Tensor2D> layer_inputs;
};
Capture forward_capture(const ToyNet& net, const Tensor2D& inputs);

// --- Data ---

enum class Split { Train = 0, Val = 1, Test = 2, Calib = 3 };
std::string_view to_string(Split split);

struct TaskDataset {
  Tensor2D inputs;  // n x d_in
  std::vector<int> labels;
  Split split = Split::Train;
  std::size_t classes = 0;

  std::size_t size() const { return labels.size(); }
};

struct TaskData {
  TaskDataset train, val, test, calib;
  const TaskDataset& get(Split s) const;
};

struct TaskGenConfig {
  std::size_t tasks = 8;
  std::size_t classes = 4;
  std::size_t input_dim = 32;
  std::size_t n_train = 2048;
  std::size_t n_val = 256;
  std::size_t n_test = 512;
  std::size_t n_calib = 128;
  double class_separation = 4.0;  // norm of each template class mean
  double noise = 1.0;             // isotropic input noise stddev
};

/// Each task is a Gaussian mixture whose class means are a shared template
/// rotated by a task-specific Haar-random orthogonal matrix. Labels are
/// balanced within every split.
std::vector<TaskData> gen_tasks(const TaskGenConfig& config,
                                std::uint64_t seed);

/// Row-wise concatenation; the result takes the split of the first part.
TaskDataset concat(std::span<const TaskDataset> parts);

Checkpoint dataset_to_checkpoint(const TaskDataset& data);
TaskDataset dataset_from_checkpoint(const Checkpoint& ckpt);

/// Per-split read counters; every metric that evaluates a dataset records
/// the number of samples it touched.
class SplitAudit {
 public:
  static void record(Split split, std::size_t samples);
  static std::size_t reads(Split split);
  static void reset();

 private:
  static std::atomic<std::size_t> counts_[4];
};

// --- Training ---

struct TrainConfig {
  double eta = 0.05;
  double rho = 1e-4;
  std::size_t epochs = 300;
  std::size_t batch = 64;
  double plateau_tol = 1e-5;
  std::size_t plateau_window = 10;
  std::uint64_t seed = 0;
};

struct TrainResult {
  ToyNet net;
  std::vector<double> loss_history;  // mean cross-entropy per epoch
};

struct Gradients {
  std::vector<Tensor2D> weights;
  std::vector<std::vector<double>> biases;
  double loss = 0.0;  // mean cross-entropy
};

/// Mean cross-entropy over the batch and its exact gradient.
Gradients loss_and_gradients(const ToyNet& net, const Tensor2D& inputs,
                             std::span<const int> labels);
double mean_cross_entropy(const ToyNet& net, const Tensor2D& inputs,
                          std::span<const int> labels);

/// Minibatch SGD with decoupled L2 on weights:
/// W <- W - eta (grad_W + rho W), b <- b - eta grad_b.
/// Stops early once the epoch loss changes by less than plateau_tol
/// (relative) over plateau_window epochs. Throws Divergence on a non-finite
/// loss.
TrainResult sgd_finetune(ToyNet net, const TaskDataset& data,
                         const TrainConfig& config);

// --- Metrics ---

/// Index of the largest entry of each row; ties go to the lowest index.
std::vector<int> argmax_rows(const Tensor2D& m);
Tensor2D softmax_rows(const Tensor2D& logits);

double accuracy(const ToyNet& net, const TaskDataset& data);
double accuracy_of(const Tensor2D& scores, std::span<const int> labels);

/// Mean accuracy over the given validation sets.
double score(const ToyNet& net, std::span<const TaskDataset> val_sets);
double score(const Checkpoint& merged, std::span<const TaskDataset> val_sets);

/// Mean of per-net softmax probabilities.
Tensor2D ensemble_predict(std::span<const ToyNet> nets, const Tensor2D& inputs);

/// Expected calibration error with `kappa` equal-width confidence bins.
double ece(const Tensor2D& probs, std::span<const int> labels, int kappa = 20);

}  // namespace mergeforge::toynet
