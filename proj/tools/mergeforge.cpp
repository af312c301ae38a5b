// Copyright 2026 The MergeForge Authors
// SPDX-License-Identifier: Apache-2.0

// mergeforge: command-line front end for the toy merge harness.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mergeforge/errors.hpp"
#include "mergeforge/kernels.hpp"
#include "mergeforge/pipeline.hpp"

namespace {

namespace fs = std::filesystem;
namespace mf = mergeforge;
namespace pl = mergeforge::pipeline;
using json = nlohmann::json;

struct Globals {
  std::uint64_t seed = 0;
  std::string mode = "assisted";
  std::string anchor = "ta";
  std::string out = "out";
  std::string harness = "harness";
  std::string preset = "vit-like";
  bool resume = false;
  bool force = false;
  double val_frac = 1.0;
};

struct ConfigFlags {
  std::string file;
  std::optional<double> lambda;
  std::optional<double> scale;
  std::optional<double> eps;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw mf::IoError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw mf::IoError("cannot write " + p.string());
  out << text;
  if (!out) throw mf::IoError("write failed: " + p.string());
}

void write_json(const fs::path& p, const json& j) {
  write_file(p, j.dump(2) + "\n");
}

// Refuses to reuse a non-empty directory unless forced.
void prepare_out(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_empty(dir) && !force) {
    throw mf::IoError("output directory " + dir.string() +
                      " is not empty (use --force)");
  }
  fs::create_directories(dir);
}

json config_to_json(const mf::MergeConfig& c) {
  return json::parse(pl::merge_config_json(c));
}

json anchor_json(const pl::Anchor& a) {
  json j;
  j["label"] = a.label;
  j["alpha"] = a.alpha ? json(*a.alpha) : json(nullptr);
  j["val"] = a.val_score;
  return j;
}

pl::Harness load(const Globals& g) { return pl::load_harness(g.harness); }

pl::Anchor anchor_for(const pl::Harness& h, const Globals& g) {
  return pl::build_anchor(h, pl::parse_anchor(g.anchor));
}

// Explicit config: a JSON file, or uniform --lambda / --scale / --eps.
mf::MergeConfig config_from_flags(const pl::MergeProblem& problem,
                                  const ConfigFlags& f) {
  if (!f.file.empty()) {
    if (f.lambda || f.scale || f.eps) {
      throw mf::OutOfRange("--config excludes --lambda/--scale/--eps");
    }
    return pl::parse_merge_config(read_file(f.file));
  }
  if (!f.lambda) throw mf::MissingConfigCell("need --config or --lambda");
  mf::MergeConfig c = problem.shared_config(*f.lambda);
  if (f.scale) {
    for (auto& [block, s] : c.scales) s = *f.scale;
  }
  if (f.eps) {
    if (problem.mode() != mf::StatsMode::Mixed) {
      throw mf::OutOfRange("--eps is only valid with --mode mixed");
    }
    c.eps = *f.eps;
  }
  return c;
}

void add_config_flags(CLI::App* cmd, ConfigFlags& f) {
  cmd->add_option("--config", f.file, "MergeConfig JSON file");
  cmd->add_option("--lambda", f.lambda, "lambda for every cell");
  cmd->add_option("--scale", f.scale, "scale for every block (default 1)");
  cmd->add_option("--eps", f.eps, "mixing weight (mixed mode)");
}

// --- gen-tasks / train-experts ---

void cmd_gen_tasks(const Globals& g, pl::HarnessConfig hc) {
  const fs::path dir = g.harness;
  prepare_out(dir, g.force);
  hc.seed = g.seed;
  const pl::Harness h = pl::generate_harness(hc);
  pl::save_tasks(h, dir);
  std::cout << "wrote " << h.task_count() << " tasks to " << dir.string()
            << "\n";
}

void cmd_train_experts(const Globals& g) {
  const fs::path dir = g.harness;
  if ((fs::exists(dir / "pretrained") || fs::exists(dir / "experts")) &&
      !g.force) {
    throw mf::IoError("models already exist in " + dir.string() +
                      " (use --force)");
  }
  pl::Harness h = pl::load_harness(dir, false);
  pl::train_models(h);
  pl::save_models(h, dir);

  const auto s = pl::summarize_training(h);
  json j;
  j["tasks"] = json::array();
  double pre = 0.0, tr = 0.0, va = 0.0;
  std::ostringstream md;
  md << "| task | pretrained val | expert train | expert val |\n"
     << "|---|---|---|---|\n";
  for (std::size_t t = 0; t < h.task_count(); ++t) {
    j["tasks"].push_back({{"task", t},
                          {"pretrained_val", s.pretrained_val[t]},
                          {"expert_train", s.expert_train[t]},
                          {"expert_val", s.expert_val[t]}});
    md << "| " << t << " | " << fmt(s.pretrained_val[t]) << " | "
       << fmt(s.expert_train[t]) << " | " << fmt(s.expert_val[t]) << " |\n";
    std::cout << "expert " << t << ": train " << fmt(s.expert_train[t])
              << "  val " << fmt(s.expert_val[t]) << "  (pretrained val "
              << fmt(s.pretrained_val[t]) << ")\n";
    pre += s.pretrained_val[t];
    tr += s.expert_train[t];
    va += s.expert_val[t];
  }
  const double n = static_cast<double>(h.task_count());
  j["mean"] = {{"pretrained_val", pre / n},
               {"expert_train", tr / n},
               {"expert_val", va / n}};
  md << "| mean | " << fmt(pre / n) << " | " << fmt(tr / n) << " | "
     << fmt(va / n) << " |\n";
  std::cout << "mean: train " << fmt(tr / n) << "  val " << fmt(va / n)
            << "  (pretrained val " << fmt(pre / n) << ")\n";
  write_json(dir / "training.json", j);
  write_file(dir / "training.md", md.str());
}

// --- merge ---

void cmd_merge(const Globals& g, const ConfigFlags& f) {
  const fs::path out = g.out;
  prepare_out(out, g.force);
  const pl::Harness h = load(g);
  const pl::MergeProblem problem(h, anchor_for(h, g),
                                 mf::parse_stats_mode(g.mode), 0, g.val_frac);
  const mf::MergeConfig config = config_from_flags(problem, f);
  const mf::Checkpoint merged = problem.merge(config);
  const double val = problem.val_score(merged);
  const double test = problem.test_score(merged);
  mf::save_checkpoint(merged, out / "merged");
  write_file(out / "config.json", pl::merge_config_json(config));

  json j;
  j["mode"] = g.mode;
  j["anchor"] = anchor_json(problem.anchor());
  j["config"] = config_to_json(config);
  j["val"] = val;
  j["test"] = test;
  write_json(out / "report.json", j);
  std::ostringstream md;
  md << "# merge\n\n| anchor | mode | val | test |\n|---|---|---|---|\n| "
     << problem.anchor().label << " | " << g.mode << " | " << fmt(val)
     << " | " << fmt(test) << " |\n";
  write_file(out / "report.md", md.str());
  std::cout << "val " << fmt(val) << "  test " << fmt(test) << "\n";
}

// --- search ---

struct SearchFlags {
  std::size_t budget = 60;
  std::size_t n_init = 0;
};

void cmd_search(const Globals& g, const SearchFlags& sf) {
  const fs::path out = g.out;
  if (!g.resume) prepare_out(out, g.force);
  fs::create_directories(out);
  const pl::Harness h = load(g);
  const pl::MergeProblem problem(h, anchor_for(h, g),
                                 mf::parse_stats_mode(g.mode), 0, g.val_frac);
  pl::SearchOptions opt;
  opt.ranges = pl::preset_ranges(pl::parse_preset(g.preset));
  opt.budget = sf.budget;
  opt.n_init = sf.n_init;
  opt.seed = g.seed;
  opt.history_log = out / "history.jsonl";
  opt.resume = g.resume;

  pl::SearchOutcome r;
  try {
    r = pl::run_search(problem, opt);
  } catch (const mergeforge::boopt::EvaluatorFailure& e) {
    std::cerr << "search aborted after " << e.partial().size()
              << " trials; history kept in " << opt.history_log->string()
              << "\n";
    throw;
  }
  mf::save_checkpoint(r.merged, out / "merged");
  write_file(out / "best_config.json", pl::merge_config_json(r.best));

  std::ostringstream csv;
  csv << "trial,score,best_so_far\n";
  double best = -1.0;
  json trials = json::array();
  for (const auto& t : r.history.trials) {
    best = std::max(best, t.score);
    csv << t.index << ',' << fmt(t.score, 6) << ',' << fmt(best, 6) << '\n';
    trials.push_back({{"index", t.index}, {"score", t.score}});
  }
  write_file(out / "trace.csv", csv.str());

  json j;
  j["mode"] = g.mode;
  j["preset"] = g.preset;
  j["anchor"] = anchor_json(problem.anchor());
  j["budget"] = sf.budget;
  j["trials"] = r.history.size();
  j["new_trials"] = r.new_trials;
  j["best_config"] = config_to_json(r.best);
  j["best_val"] = r.best_val;
  j["test"] = r.test;
  j["history"] = trials;
  write_json(out / "report.json", j);

  std::ostringstream md;
  md << "# search\n\n| anchor | mode | trials | best val | test |\n"
     << "|---|---|---|---|---|\n| " << problem.anchor().label << " | "
     << g.mode << " | " << r.history.size() << " | " << fmt(r.best_val)
     << " | " << fmt(r.test) << " |\n\nanchor val "
     << fmt(problem.anchor().val_score) << "\n";
  write_file(out / "report.md", md.str());
  std::cout << "trials " << r.history.size() << " (+" << r.new_trials
            << ")  best val " << fmt(r.best_val) << "  test " << fmt(r.test)
            << "\n";
}

// --- ablate ---

struct AblateFlags {
  std::size_t budget = 60;
  std::size_t n_init = 0;
  std::vector<std::uint64_t> seeds;
  std::size_t shots = 1;
  bool no_mix = false;
};

std::pair<double, double> mean_std(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, v.size() > 1 ? std::sqrt(s / static_cast<double>(v.size() - 1))
                          : 0.0};
}

void cmd_ablate(const Globals& g, const AblateFlags& af) {
  const fs::path out = g.out;
  prepare_out(out, g.force);
  const pl::Harness h = load(g);
  const pl::Anchor anchor = anchor_for(h, g);
  pl::AblateOptions opt;
  opt.ranges = pl::preset_ranges(pl::parse_preset(g.preset));
  opt.budget = af.budget;
  opt.n_init = af.n_init;
  opt.mix_sweep = !af.no_mix;
  opt.shots = af.shots;
  std::vector<std::uint64_t> seeds = af.seeds;
  if (seeds.empty()) seeds.push_back(g.seed);

  // (setting, variant) in first-seen order.
  std::vector<std::pair<std::string, std::string>> order;
  std::map<std::pair<std::string, std::string>, std::vector<pl::ArmScore>> by;
  json per_seed = json::array();
  for (std::uint64_t s : seeds) {
    for (const auto& a : pl::run_ablation(h, anchor, opt, s)) {
      const auto key = std::make_pair(a.setting, a.variant);
      if (!by.count(key)) order.push_back(key);
      by[key].push_back(a);
      per_seed.push_back({{"seed", s},
                          {"setting", a.setting},
                          {"variant", a.variant},
                          {"val", a.val},
                          {"test", a.test}});
    }
  }

  std::ostringstream csv, md;
  csv << "setting,variant,val_mean,val_std,test_mean,test_std\n";
  md << "# ablation\n\nanchor " << anchor.label << ", " << seeds.size()
     << " seed(s), budget " << af.budget << "\n\n"
     << "| setting | variant | val | test |\n|---|---|---|---|\n";
  json rows = json::array();
  for (const auto& key : order) {
    std::vector<double> v, t;
    for (const auto& a : by[key]) {
      v.push_back(a.val);
      t.push_back(a.test);
    }
    const auto [vm, vs] = mean_std(v);
    const auto [tm, ts] = mean_std(t);
    csv << key.first << ',' << key.second << ',' << fmt(vm, 6) << ','
        << fmt(vs, 6) << ',' << fmt(tm, 6) << ',' << fmt(ts, 6) << '\n';
    md << "| " << key.first << " | " << key.second << " | "
       << fmt(100 * vm, 2) << " ± " << fmt(100 * vs, 2) << " | "
       << fmt(100 * tm, 2) << " ± " << fmt(100 * ts, 2) << " |\n";
    rows.push_back({{"setting", key.first},
                    {"variant", key.second},
                    {"val_mean", vm},
                    {"val_std", vs},
                    {"test_mean", tm},
                    {"test_std", ts}});
  }
  json j;
  j["anchor"] = anchor_json(anchor);
  j["preset"] = g.preset;
  j["budget"] = af.budget;
  j["seeds"] = seeds;
  j["rows"] = rows;
  j["runs"] = per_seed;
  write_json(out / "report.json", j);
  write_file(out / "table.csv", csv.str());
  write_file(out / "table.md", md.str());
  std::cout << md.str();
}

// --- align ---

void cmd_align(const Globals& g) {
  const fs::path out = g.out;
  prepare_out(out, g.force);
  const pl::Harness h = load(g);
  const auto tvs = mf::task_vectors(h.pretrained, h.experts, h.pretrained);
  const auto nets = h.expert_nets();
  const auto calib = h.split(mf::toynet::Split::Calib);
  const auto rep = mf::stats::alignment_report(nets, calib, tvs);

  std::ostringstream csv, md;
  csv << "task,module,cos\n";
  json rows = json::array();
  for (const auto& r : rep.rows) {
    csv << r.task << ',' << r.module << ','
        << (r.cos ? fmt(*r.cos, 6) : std::string("undefined")) << '\n';
    rows.push_back({{"task", r.task},
                    {"module", r.module},
                    {"cos", r.cos ? json(*r.cos) : json("undefined")}});
  }
  md << "# alignment\n\n| task | mean cos |\n|---|---|\n";
  json means = json::array();
  for (std::size_t t = 0; t < rep.task_means.size(); ++t) {
    const auto& m = rep.task_means[t];
    md << "| " << t << " | " << (m ? fmt(*m) : std::string("undefined"))
       << " |\n";
    means.push_back(m ? json(*m) : json("undefined"));
  }
  write_json(out / "report.json", {{"rows", rows}, {"task_means", means}});
  write_file(out / "align.csv", csv.str());
  write_file(out / "report.md", md.str());
  std::cout << md.str();
}

// --- calibrate ---

struct CalibrateFlags {
  std::size_t samples = 10;
  std::vector<double> betas;
};

void cmd_calibrate(const Globals& g, const ConfigFlags& f,
                   const CalibrateFlags& cf) {
  const fs::path out = g.out;
  prepare_out(out, g.force);
  const pl::Harness h = load(g);
  const pl::MergeProblem problem(h, anchor_for(h, g),
                                 mf::parse_stats_mode(g.mode), 0, g.val_frac);
  const mf::MergeConfig config = config_from_flags(problem, f);
  const std::vector<double> grid =
      cf.betas.empty() ? mf::toynet::default_beta_grid() : cf.betas;
  const auto r = pl::run_calibration(problem, config, grid, cf.samples, g.seed);

  std::ostringstream csv, md;
  csv << "beta,val_accuracy,val_ece\n";
  json sweep = json::array();
  for (const auto& p : r.sweep) {
    csv << p.beta << ',' << fmt(p.val_accuracy, 6) << ','
        << fmt(p.val_ece, 6) << '\n';
    sweep.push_back({{"beta", p.beta},
                     {"val_accuracy", p.val_accuracy},
                     {"val_ece", p.val_ece}});
  }
  json j;
  j["config"] = config_to_json(config);
  j["samples"] = cf.samples;
  j["best_beta"] = r.best_beta;
  j["constraint_met"] = r.constraint_met;
  j["map"] = {{"val_accuracy", r.map_val_accuracy},
              {"val_ece", r.map_val_ece},
              {"test_accuracy", r.map_test_accuracy},
              {"test_ece", r.map_test_ece}};
  j["ensemble"] = {{"val_accuracy", r.ensemble_val_accuracy},
                   {"val_ece", r.ensemble_val_ece},
                   {"test_accuracy", r.ensemble_test_accuracy},
                   {"test_ece", r.ensemble_test_ece}};
  j["sweep"] = sweep;
  write_json(out / "report.json", j);
  write_file(out / "sweep.csv", csv.str());
  md << "# calibration\n\nbeta " << r.best_beta
     << (r.constraint_met ? "" : " (accuracy constraint not met)")
     << "\n\n| model | test acc | test ECE |\n|---|---|---|\n"
     << "| MAP | " << fmt(r.map_test_accuracy) << " | "
     << fmt(r.map_test_ece) << " |\n| ensemble (S=" << cf.samples << ") | "
     << fmt(r.ensemble_test_accuracy) << " | " << fmt(r.ensemble_test_ece)
     << " |\n";
  write_file(out / "report.md", md.str());
  std::cout << md.str();
}

// --- eval ---

void cmd_eval(const Globals& g, const std::string& ckpt_dir) {
  const fs::path out = g.out;
  prepare_out(out, g.force);
  const pl::Harness h = load(g);
  json j;
  mf::Checkpoint ckpt;
  if (ckpt_dir.empty()) {
    const pl::Anchor a = anchor_for(h, g);
    j["model"] = a.label;
    ckpt = a.ckpt;
  } else {
    j["model"] = ckpt_dir;
    ckpt = mf::load_checkpoint(ckpt_dir);
  }
  mf::require_same_meta(h.pretrained, ckpt);
  const auto net = mf::toynet::from_checkpoint(ckpt);
  std::ostringstream md;
  md << "# eval\n\n| task | val | test |\n|---|---|---|\n";
  json tasks = json::array();
  double sv = 0.0, st = 0.0;
  for (std::size_t t = 0; t < h.task_count(); ++t) {
    const double v = mf::toynet::accuracy(net, h.tasks[t].val);
    const double te = mf::toynet::accuracy(net, h.tasks[t].test);
    sv += v;
    st += te;
    tasks.push_back({{"task", t}, {"val", v}, {"test", te}});
    md << "| " << t << " | " << fmt(v) << " | " << fmt(te) << " |\n";
  }
  const double n = static_cast<double>(h.task_count());
  j["tasks"] = tasks;
  j["val"] = sv / n;
  j["test"] = st / n;
  md << "| mean | " << fmt(sv / n) << " | " << fmt(st / n) << " |\n";
  write_json(out / "report.json", j);
  write_file(out / "report.md", md.str());
  std::cout << md.str();
}

int exit_code(mf::ErrorCategory c) {
  switch (c) {
    case mf::ErrorCategory::Config:
      return 2;
    case mf::ErrorCategory::Numeric:
      return 3;
    case mf::ErrorCategory::Io:
      return 4;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* env = std::getenv("MERGEFORGE_THREADS")) {
    try {
      mf::kernels::set_thread_cap(std::stoi(env));
    } catch (const std::exception&) {
      std::cerr << "error: MERGEFORGE_THREADS must be an integer\n";
      return 2;
    }
  }

  CLI::App app{"Bayesian model merging on a toy multi-task harness"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "root seed");
  app.add_option("--mode", g.mode, "statistics mode")
      ->check(CLI::IsMember({"assisted", "datafree", "mixed"}));
  app.add_option("--anchor", g.anchor, "pretrained, ta or a checkpoint dir");
  app.add_option("--out", g.out, "report directory");
  app.add_option("--harness", g.harness, "harness directory");
  app.add_option("--preset", g.preset, "search ranges")
      ->check(CLI::IsMember({"vit-like", "llama-like"}));
  app.add_flag("--resume", g.resume, "continue a search from its log");
  app.add_flag("--force", g.force, "reuse a non-empty output directory");
  app.add_option("--val-frac", g.val_frac, "fraction of Val used for scoring")
      ->check(CLI::Range(0.0, 1.0));

  pl::HarnessConfig hc;
  auto* gen = app.add_subcommand("gen-tasks", "generate task datasets");
  gen->add_option("--tasks", hc.data.tasks);
  gen->add_option("--classes", hc.data.classes);
  gen->add_option("--input-dim", hc.data.input_dim);
  gen->add_option("--n-train", hc.data.n_train);
  gen->add_option("--n-val", hc.data.n_val);
  gen->add_option("--n-test", hc.data.n_test);
  gen->add_option("--n-calib", hc.data.n_calib);
  gen->add_option("--separation", hc.data.class_separation);
  gen->add_option("--noise", hc.data.noise);
  gen->add_option("--hidden", hc.hidden);
  gen->add_option("--layers", hc.layers);
  gen->add_option("--blocks", hc.blocks);
  gen->add_option("--pretrain-epochs", hc.pretrain_epochs);
  gen->add_option("--epochs", hc.train.epochs, "expert fine-tuning epochs");
  gen->add_option("--eta", hc.train.eta);
  gen->add_option("--rho", hc.train.rho);
  gen->add_option("--batch", hc.train.batch);

  auto* train = app.add_subcommand("train-experts",
                                   "pretrain and fine-tune one expert per task");

  ConfigFlags cfg;
  auto* merge = app.add_subcommand("merge", "merge with an explicit config");
  add_config_flags(merge, cfg);

  SearchFlags sf;
  auto* search = app.add_subcommand("search", "Bayesian-optimized merge");
  search->add_option("--budget", sf.budget, "total trials K");
  search->add_option("--n-init", sf.n_init, "random trials (0 = max(10, 2D))");

  AblateFlags af;
  auto* ablate = app.add_subcommand("ablate", "shared / random / BO arms");
  ablate->add_option("--budget", af.budget);
  ablate->add_option("--n-init", af.n_init);
  ablate->add_option("--seeds", af.seeds, "search seeds")->delimiter(',');
  ablate->add_option("--shots", af.shots, "samples per class, mix sweep");
  ablate->add_flag("--no-mix", af.no_mix, "skip the few-shot mix sweep");

  auto* align = app.add_subcommand("align", "activation/task-vector alignment");

  CalibrateFlags cf;
  auto* calibrate =
      app.add_subcommand("calibrate", "posterior-sampling ensemble");
  add_config_flags(calibrate, cfg);
  calibrate->add_option("--samples", cf.samples, "ensemble size S");
  calibrate->add_option("--beta", cf.betas, "beta grid")->delimiter(',');

  std::string ckpt_dir;
  auto* eval = app.add_subcommand("eval", "score a checkpoint or the anchor");
  eval->add_option("--ckpt", ckpt_dir, "checkpoint directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*gen) cmd_gen_tasks(g, hc);
    else if (*train) cmd_train_experts(g);
    else if (*merge) cmd_merge(g, cfg);
    else if (*search) cmd_search(g, sf);
    else if (*ablate) cmd_ablate(g, af);
    else if (*align) cmd_align(g);
    else if (*calibrate) cmd_calibrate(g, cfg, cf);
    else if (*eval) cmd_eval(g, ckpt_dir);
  } catch (const mf::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.category());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
