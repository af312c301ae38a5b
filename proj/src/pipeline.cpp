// Copyright 2026 The MergeForge Authors
// SPDX-License-Identifier: Apache-2.0

#include "mergeforge/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <sstream>
#include <utility>

#include "json.hpp"
#include "mergeforge/errors.hpp"
#include "mergeforge/rng.hpp"

namespace mergeforge::pipeline {
namespace {

using nlohmann::json;
using toynet::Split;

constexpr Split kSplits[] = {Split::Train, Split::Val, Split::Test,
                             Split::Calib};

std::string two_digit(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%02zu", i);
  return buf;
}

fs::path task_dir(const fs::path& dir, std::size_t t) {
  return dir / "tasks" / ("task_" + two_digit(t));
}

fs::path expert_dir(const fs::path& dir, std::size_t t) {
  return dir / "experts" / ("expert_" + two_digit(t));
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<double> log_grid(double lo, double hi, std::size_t n) {
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = n == 1 ? 0.0 : static_cast<double>(i) /
                                         static_cast<double>(n - 1);
    g[i] = i == 0 ? lo : i + 1 == n ? hi : lo * std::pow(hi / lo, u);
  }
  return g;
}

}  // namespace

std::vector<std::size_t> HarnessConfig::widths() const {
  if (layers < 1) throw OutOfRange("need at least one layer");
  std::vector<std::size_t> w{data.input_dim};
  for (std::size_t k = 0; k + 1 < layers; ++k) w.push_back(hidden);
  w.push_back(data.classes);
  return w;
}

std::string harness_config_json(const HarnessConfig& c) {
  json j = {
      {"seed", c.seed},
      {"tasks", c.data.tasks},
      {"classes", c.data.classes},
      {"input_dim", c.data.input_dim},
      {"n_train", c.data.n_train},
      {"n_val", c.data.n_val},
      {"n_test", c.data.n_test},
      {"n_calib", c.data.n_calib},
      {"class_separation", c.data.class_separation},
      {"noise", c.data.noise},
      {"hidden", c.hidden},
      {"layers", c.layers},
      {"blocks", c.blocks},
      {"pretrain_epochs", c.pretrain_epochs},
      {"eta", c.train.eta},
      {"rho", c.train.rho},
      {"epochs", c.train.epochs},
      {"batch", c.train.batch},
      {"plateau_tol", c.train.plateau_tol},
      {"plateau_window", c.train.plateau_window},
  };
  return j.dump(2) + "\n";
}

HarnessConfig parse_harness_config(const std::string& text) {
  HarnessConfig c;
  try {
    const json j = json::parse(text);
    c.seed = j.at("seed").get<std::uint64_t>();
    c.data.tasks = j.at("tasks").get<std::size_t>();
    c.data.classes = j.at("classes").get<std::size_t>();
    c.data.input_dim = j.at("input_dim").get<std::size_t>();
    c.data.n_train = j.at("n_train").get<std::size_t>();
    c.data.n_val = j.at("n_val").get<std::size_t>();
    c.data.n_test = j.at("n_test").get<std::size_t>();
    c.data.n_calib = j.at("n_calib").get<std::size_t>();
    c.data.class_separation = j.at("class_separation").get<double>();
    c.data.noise = j.at("noise").get<double>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.layers = j.at("layers").get<std::size_t>();
    c.blocks = j.at("blocks").get<int>();
    c.pretrain_epochs = j.at("pretrain_epochs").get<std::size_t>();
    c.train.eta = j.at("eta").get<double>();
    c.train.rho = j.at("rho").get<double>();
    c.train.epochs = j.at("epochs").get<std::size_t>();
    c.train.batch = j.at("batch").get<std::size_t>();
    c.train.plateau_tol = j.at("plateau_tol").get<double>();
    c.train.plateau_window = j.at("plateau_window").get<std::size_t>();
  } catch (const json::exception& e) {
    throw FormatError("bad harness config: " + std::string(e.what()));
  }
  return c;
}

std::vector<toynet::TaskDataset> Harness::split(Split s) const {
  std::vector<toynet::TaskDataset> out;
  out.reserve(tasks.size());
  for (const auto& t : tasks) out.push_back(t.get(s));
  return out;
}

std::vector<toynet::ToyNet> Harness::expert_nets() const {
  std::vector<toynet::ToyNet> nets;
  nets.reserve(experts.size());
  for (const auto& e : experts) nets.push_back(toynet::from_checkpoint(e));
  return nets;
}

std::string Harness::final_module() const {
  return toynet::weight_name(config.layers - 1);
}

Harness generate_harness(const HarnessConfig& config) {
  if (config.data.tasks < 2 || config.data.classes < 2) {
    throw OutOfRange("need at least two tasks and two classes");
  }
  Harness h;
  h.config = config;
  h.tasks = toynet::gen_tasks(config.data, derive_seed(config.seed, {0}));
  return h;
}

void train_models(Harness& h) {
  const auto& cfg = h.config;
  const auto widths = cfg.widths();
  toynet::ToyNet init = toynet::init_net(widths, derive_seed(cfg.seed, {1}));

  toynet::TrainConfig pre_cfg = cfg.train;
  pre_cfg.epochs = cfg.pretrain_epochs;
  pre_cfg.seed = derive_seed(cfg.seed, {2});
  const auto train_sets = h.split(Split::Train);
  const auto pooled = toynet::concat(train_sets);
  toynet::ToyNet pre;
  try {
    pre = toynet::sgd_finetune(std::move(init), pooled, pre_cfg).net;
  } catch (const Divergence& e) {
    throw Divergence(std::string("pretraining: ") + e.what());
  }
  h.pretrained = toynet::to_checkpoint(pre, cfg.blocks);

  const std::size_t T = h.tasks.size();
  std::vector<toynet::ToyNet> experts(T);
  std::vector<std::exception_ptr> failures(T);
  const auto n = static_cast<std::ptrdiff_t>(T);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto t = static_cast<std::size_t>(i);
    toynet::TrainConfig ec = cfg.train;
    ec.seed = derive_seed(cfg.seed, {3, t});
    try {
      experts[t] = toynet::sgd_finetune(pre, h.tasks[t].train, ec).net;
    } catch (...) {
      failures[t] = std::current_exception();
    }
  }
  for (std::size_t t = 0; t < T; ++t) {
    if (!failures[t]) continue;
    try {
      std::rethrow_exception(failures[t]);
    } catch (const Divergence& e) {
      throw Divergence("task " + std::to_string(t) + ": " + e.what());
    }
  }
  h.experts.clear();
  for (const auto& e : experts) {
    h.experts.push_back(toynet::to_checkpoint(e, cfg.blocks));
  }
}

Harness build_harness(const HarnessConfig& config) {
  Harness h = generate_harness(config);
  train_models(h);
  return h;
}

TrainingSummary summarize_training(const Harness& h) {
  TrainingSummary s;
  const auto pre = toynet::from_checkpoint(h.pretrained);
  const auto nets = h.expert_nets();
  for (std::size_t t = 0; t < h.tasks.size(); ++t) {
    s.pretrained_val.push_back(toynet::accuracy(pre, h.tasks[t].val));
    s.expert_train.push_back(toynet::accuracy(nets[t], h.tasks[t].train));
    s.expert_val.push_back(toynet::accuracy(nets[t], h.tasks[t].val));
  }
  return s;
}

void save_tasks(const Harness& h, const fs::path& dir) {
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "harness.json");
    if (!out) throw IoError("cannot write " + (dir / "harness.json").string());
    out << harness_config_json(h.config);
  }
  for (std::size_t t = 0; t < h.tasks.size(); ++t) {
    for (Split s : kSplits) {
      save_checkpoint(toynet::dataset_to_checkpoint(h.tasks[t].get(s)),
                      task_dir(dir, t) / std::string(toynet::to_string(s)));
    }
  }
}

void save_models(const Harness& h, const fs::path& dir) {
  save_checkpoint(h.pretrained, dir / "pretrained");
  for (std::size_t t = 0; t < h.experts.size(); ++t) {
    save_checkpoint(h.experts[t], expert_dir(dir, t));
  }
}

Harness load_harness(const fs::path& dir, bool with_models) {
  Harness h;
  h.config = parse_harness_config(read_text(dir / "harness.json"));
  for (std::size_t t = 0; t < h.config.data.tasks; ++t) {
    toynet::TaskData d;
    d.train = toynet::dataset_from_checkpoint(
        load_checkpoint(task_dir(dir, t) / "train"));
    d.val = toynet::dataset_from_checkpoint(
        load_checkpoint(task_dir(dir, t) / "val"));
    d.test = toynet::dataset_from_checkpoint(
        load_checkpoint(task_dir(dir, t) / "test"));
    d.calib = toynet::dataset_from_checkpoint(
        load_checkpoint(task_dir(dir, t) / "calib"));
    h.tasks.push_back(std::move(d));
  }
  if (with_models) {
    h.pretrained = load_checkpoint(dir / "pretrained");
    for (std::size_t t = 0; t < h.tasks.size(); ++t) {
      h.experts.push_back(load_checkpoint(expert_dir(dir, t)));
      require_same_meta(h.pretrained, h.experts.back());
    }
  }
  return h;
}

std::string merge_config_json(const MergeConfig& c) {
  json j;
  j["mode"] = std::string(to_string(c.mode));
  j["eps"] = c.eps ? json(*c.eps) : json(nullptr);
  j["scales"] = json::array();
  for (const auto& [block, v] : c.scales) {
    j["scales"].push_back({{"block", block}, {"value", v}});
  }
  j["lambdas"] = json::array();
  for (const auto& [cell, v] : c.lambdas) {
    j["lambdas"].push_back(
        {{"block", cell.block}, {"group", cell.group}, {"value", v}});
  }
  return j.dump(2) + "\n";
}

MergeConfig parse_merge_config(const std::string& text) {
  MergeConfig c;
  try {
    const json j = json::parse(text);
    c.mode = parse_stats_mode(j.at("mode").get<std::string>());
    if (j.contains("eps") && !j.at("eps").is_null()) {
      c.eps = j.at("eps").get<double>();
    }
    for (const auto& e : j.at("scales")) {
      c.scales[e.at("block").get<int>()] = e.at("value").get<double>();
    }
    for (const auto& e : j.at("lambdas")) {
      c.lambdas[{e.at("block").get<int>(), e.at("group").get<std::string>()}] =
          e.at("value").get<double>();
    }
  } catch (const json::exception& e) {
    throw FormatError("bad merge config: " + std::string(e.what()));
  }
  if (c.mode == StatsMode::Mixed && !c.eps) {
    throw MissingConfigCell("mixed mode needs eps");
  }
  if (c.mode != StatsMode::Mixed && c.eps) {
    throw OutOfRange("eps is only valid in mixed mode");
  }
  return c;
}

// --- Anchors ---

AnchorSpec parse_anchor(const std::string& text) {
  if (text == "pretrained") return {AnchorKind::Pretrained, {}};
  if (text == "ta") return {AnchorKind::TaskArithmetic, {}};
  return {AnchorKind::Path, fs::path(text)};
}

std::vector<double> ta_alpha_grid() {
  std::vector<double> g;
  for (int i = 1; i <= 10; ++i) g.push_back(0.1 * i);
  return g;
}

Anchor build_anchor(const Harness& h, const AnchorSpec& spec) {
  const auto val = h.split(Split::Val);
  Anchor a;
  switch (spec.kind) {
    case AnchorKind::Pretrained:
      a.ckpt = h.pretrained;
      a.label = "pretrained";
      break;
    case AnchorKind::Path:
      a.ckpt = load_checkpoint(spec.path);
      require_same_meta(h.pretrained, a.ckpt);
      a.label = spec.path.string();
      break;
    case AnchorKind::TaskArithmetic: {
      a.label = "ta";
      double best = -1.0;
      for (double alpha : ta_alpha_grid()) {
        Checkpoint c = ta_anchor(h.pretrained, h.experts, alpha);
        const double s = toynet::score(c, val);
        if (s > best) {
          best = s;
          a.alpha = alpha;
          a.ckpt = std::move(c);
        }
      }
      a.val_score = best;
      return a;
    }
  }
  a.val_score = toynet::score(a.ckpt, val);
  return a;
}

// --- Statistics ---

toynet::TaskDataset few_shot(const toynet::TaskDataset& data,
                             std::size_t shots) {
  if (shots == 0) return data;
  std::vector<std::size_t> keep;
  std::vector<std::size_t> taken(data.classes, 0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto c = static_cast<std::size_t>(data.labels[i]);
    if (taken[c] < shots) {
      ++taken[c];
      keep.push_back(i);
    }
  }
  toynet::TaskDataset out;
  out.split = data.split;
  out.classes = data.classes;
  out.inputs = Tensor2D(keep.size(), data.inputs.cols());
  for (std::size_t r = 0; r < keep.size(); ++r) {
    const auto src = data.inputs.row(keep[r]);
    std::copy(src.begin(), src.end(), out.inputs.row(r).begin());
    out.labels.push_back(data.labels[keep[r]]);
  }
  if (out.size() == 0) throw EmptySplit("few-shot subset is empty");
  return out;
}

stats::StatsMap assisted_stats(const Harness& h, const TaskVectorSet& tvs,
                               std::size_t shots) {
  std::vector<toynet::TaskDataset> calib;
  for (const auto& t : h.tasks) calib.push_back(few_shot(t.calib, shots));
  const auto nets = h.expert_nets();
  return stats::collect_assisted_all(nets, calib, tvs);
}

MergeProblem::MergeProblem(const Harness& harness, Anchor anchor,
                           StatsMode mode, std::size_t shots, double val_frac)
    : harness_(&harness), anchor_(std::move(anchor)), mode_(mode) {
  if (!(val_frac > 0.0 && val_frac <= 1.0)) {
    throw OutOfRange("val fraction must lie in (0, 1]");
  }
  tvs_ = mergeforge::task_vectors(harness.pretrained, harness.experts,
                                  anchor_.ckpt);
  if (mode != StatsMode::DataFree) {
    assisted_ = assisted_stats(harness, tvs_, shots);
  }
  if (mode != StatsMode::Assisted) datafree_ = stats::data_free_stats(tvs_);
  for (const auto& t : harness.tasks) {
    toynet::TaskDataset v = t.val;
    const auto keep = static_cast<std::size_t>(
        std::ceil(val_frac * static_cast<double>(v.size())));
    if (keep < v.size()) {
      std::vector<std::size_t> first(keep);
      for (std::size_t i = 0; i < keep; ++i) first[i] = i;
      Tensor2D x(keep, v.inputs.cols());
      for (std::size_t i = 0; i < keep; ++i) {
        const auto src = v.inputs.row(i);
        std::copy(src.begin(), src.end(), x.row(i).begin());
      }
      v.inputs = std::move(x);
      v.labels.resize(keep);
    }
    val_.push_back(std::move(v));
    test_.push_back(t.test);
  }
}

std::set<Cell> MergeProblem::cells() const {
  std::set<Cell> out;
  for (const auto& [name, meta] : tvs_.meta) out.insert(meta.cell());
  return out;
}

stats::StatsMap MergeProblem::stats_for(const MergeConfig& config) const {
  switch (mode_) {
    case StatsMode::Assisted:
      return assisted_;
    case StatsMode::DataFree:
      return datafree_;
    case StatsMode::Mixed:
      if (!config.eps) throw MissingConfigCell("eps");
      return stats::mix_stats(assisted_, datafree_, *config.eps);
  }
  throw OutOfRange("unknown stats mode");
}

Checkpoint MergeProblem::merge(const MergeConfig& config) const {
  if (config.mode != mode_) {
    throw OutOfRange("config mode " + std::string(to_string(config.mode)) +
                     " does not match problem mode " +
                     std::string(to_string(mode_)));
  }
  const auto merged = merge::merge_all(stats_for(config), tvs_, config);
  return assemble(harness_->pretrained, merged, config, anchor_.ckpt);
}

double MergeProblem::val_score(const Checkpoint& merged) const {
  return toynet::score(merged, val_);
}

double MergeProblem::test_score(const Checkpoint& merged) const {
  return toynet::score(merged, test_);
}

MergeConfig MergeProblem::shared_config(double lambda) const {
  MergeConfig c;
  c.mode = mode_;
  for (const auto& cell : cells()) {
    c.lambdas[cell] = lambda;
    c.scales[cell.block] = 1.0;
  }
  if (mode_ == StatsMode::Mixed) c.eps = 0.5;
  return c;
}

// --- Search ---

Preset parse_preset(const std::string& text) {
  if (text == "vit-like") return Preset::VitLike;
  if (text == "llama-like") return Preset::LlamaLike;
  throw OutOfRange("unknown preset '" + text + "'");
}

boopt::MergeRanges preset_ranges(Preset preset) {
  boopt::MergeRanges r;
  if (preset == Preset::LlamaLike) {
    r.lambda_lo = 1e-3;
    r.lambda_hi = 100.0;
  }
  return r;
}

boopt::SearchSpace search_space(const MergeProblem& problem,
                                const boopt::MergeRanges& ranges) {
  return boopt::SearchSpace::for_merge(problem.cells(), problem.mode(),
                                       ranges);
}

SearchOutcome run_search(const MergeProblem& problem,
                         const SearchOptions& opt) {
  const auto space = search_space(problem, opt.ranges);
  boopt::TrialHistory prior;
  std::ofstream log;
  if (opt.history_log) {
    if (opt.resume && fs::exists(*opt.history_log)) {
      prior = boopt::read_history(space, *opt.history_log);
      log.open(*opt.history_log, std::ios::app);
    } else {
      if (opt.history_log->has_parent_path()) {
        fs::create_directories(opt.history_log->parent_path());
      }
      log.open(*opt.history_log, std::ios::trunc);
    }
    if (!log) throw IoError("cannot write " + opt.history_log->string());
  }
  const std::size_t before = prior.size();

  boopt::BoOptions bo;
  bo.budget = opt.budget;
  bo.n_init = opt.n_init;
  bo.seed = opt.seed;
  auto evaluator = [&](std::span<const double> values) {
    return problem.val_score(problem.merge(space.to_config(values)));
  };
  auto on_trial = [&](const boopt::Trial& t) {
    if (log.is_open()) {
      log << boopt::trial_to_json(space, t) << '\n';
      log.flush();
    }
  };
  const auto result =
      boopt::bo_search(space, evaluator, bo, std::move(prior), on_trial);

  SearchOutcome out;
  out.best = space.to_config(result.best.values);
  out.best_val = result.best.score;
  out.new_trials = result.history.size() - before;
  out.history = result.history;
  out.merged = problem.merge(out.best);
  out.test = problem.test_score(out.merged);
  return out;
}

SharedOutcome run_shared_grid(const MergeProblem& problem,
                              const boopt::MergeRanges& ranges) {
  SharedOutcome out;
  out.best_val = -1.0;
  Checkpoint best;
  for (double lambda : log_grid(ranges.lambda_lo, ranges.lambda_hi, 15)) {
    Checkpoint merged = problem.merge(problem.shared_config(lambda));
    const double s = problem.val_score(merged);
    ++out.evaluated;
    if (s > out.best_val) {
      out.best_val = s;
      out.lambda = lambda;
      best = std::move(merged);
    }
  }
  out.test = problem.test_score(best);
  return out;
}

// --- Ablation ---

std::vector<ArmScore> run_ablation(const Harness& h, const Anchor& anchor,
                                   const AblateOptions& opt,
                                   std::uint64_t seed) {
  std::vector<ArmScore> rows;
  SearchOptions so;
  so.ranges = opt.ranges;
  so.budget = opt.budget;
  so.seed = seed;

  auto arms = [&](const MergeProblem& p, const std::string& setting,
                  bool shared, bool random) {
    if (shared) {
      const auto s = run_shared_grid(p, opt.ranges);
      rows.push_back({setting, "shared", s.best_val, s.test});
    }
    if (random) {
      SearchOptions r = so;
      r.n_init = opt.budget;
      const auto o = run_search(p, r);
      rows.push_back({setting, "random", o.best_val, o.test});
    }
    SearchOptions b = so;
    b.n_init = opt.n_init;
    const auto o = run_search(p, b);
    rows.push_back({setting, "bo", o.best_val, o.test});
  };

  for (StatsMode mode : opt.modes) {
    MergeProblem p(h, anchor, mode);
    arms(p, std::string(to_string(mode)), true, true);
  }
  if (opt.mix_sweep) {
    const std::string shot = std::to_string(opt.shots) + "-shot";
    arms(MergeProblem(h, anchor, StatsMode::Assisted, opt.shots), shot, false,
         false);
    bool have_df = false;
    for (StatsMode m : opt.modes) have_df = have_df || m == StatsMode::DataFree;
    if (!have_df) {
      arms(MergeProblem(h, anchor, StatsMode::DataFree), "datafree", false,
           false);
    }
    arms(MergeProblem(h, anchor, StatsMode::Mixed, opt.shots), shot + " mix",
         false, false);
  }
  return rows;
}

// --- Calibration ---

toynet::CalibrationReport run_calibration(const MergeProblem& problem,
                                          const MergeConfig& config,
                                          std::span<const double> beta_grid,
                                          std::size_t S, std::uint64_t seed) {
  const auto& h = problem.harness();
  const std::string module = h.final_module();
  const auto& meta = problem.task_vectors().meta.at(module);
  const auto st = problem.stats_for(config);

  toynet::CalibrationInput in;
  in.map_model = problem.merge(config);
  in.pretrained = h.pretrained;
  in.module = module;
  in.posterior = merge::posterior(st.at(module),
                                  problem.task_vectors().anchor.at(module),
                                  config.lambda_for(meta.cell()), 1.0);
  in.scale = config.scale_for(meta.block);
  return toynet::calibrate(in, beta_grid, S, h.split(Split::Val),
                           h.split(Split::Test), seed);
}

}  // namespace mergeforge::pipeline
