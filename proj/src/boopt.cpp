// Copyright 2026 The MergeForge Authors
// SPDX-License-Identifier: Apache-2.0

#include "mergeforge/boopt.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <utility>

#include "json.hpp"
#include "mergeforge/rng.hpp"

namespace mergeforge::boopt {
using nlohmann::json;

SearchSpace::SearchSpace(std::vector<Dim> dims) : dims_(std::move(dims)) {
  for (const auto& d : dims_) {
    if (!(d.hi >= d.lo)) throw OutOfRange("dimension '" + d.name + "' bounds");
    if (d.kind == DimKind::LogUniform && !(d.lo > 0.0)) {
      throw OutOfRange("log-uniform dimension '" + d.name +
                       "' needs positive bounds");
    }
    if (d.role == Dim::Role::Eps) mode_ = StatsMode::Mixed;
  }
}

SearchSpace SearchSpace::unit_cube(std::size_t dims) {
  std::vector<Dim> d;
  for (std::size_t i = 0; i < dims; ++i) {
    d.push_back({"x" + std::to_string(i), DimKind::Uniform, 0.0, 1.0,
                 Dim::Role::Generic, {}});
  }
  return SearchSpace(std::move(d));
}

SearchSpace SearchSpace::for_merge(const std::set<Cell>& cells, StatsMode mode,
                                   const MergeRanges& r) {
  std::vector<Dim> dims;
  int current = std::numeric_limits<int>::min();
  for (const auto& cell : cells) {
    if (cell.block != current) {
      current = cell.block;
      dims.push_back({"s[" + std::to_string(cell.block) + "]",
                      DimKind::Uniform, r.scale_lo, r.scale_hi,
                      Dim::Role::Scale, Cell{cell.block, ""}});
    }
    dims.push_back({"lambda[" + std::to_string(cell.block) + "][" +
                        cell.group + "]",
                    DimKind::LogUniform, r.lambda_lo, r.lambda_hi,
                    Dim::Role::Lambda, cell});
  }
  if (mode == StatsMode::Mixed) {
    dims.push_back({"eps", DimKind::Uniform, 0.0, 1.0, Dim::Role::Eps, {}});
  }
  SearchSpace space(std::move(dims));
  space.mode_ = mode;
  return space;
}

std::vector<double> SearchSpace::from_unit(std::span<const double> unit) const {
  if (unit.size() != dims_.size()) {
    throw OutOfRange("point has " + std::to_string(unit.size()) +
                     " coordinates, space has " +
                     std::to_string(dims_.size()));
  }
  std::vector<double> v(unit.size());
  for (std::size_t i = 0; i < unit.size(); ++i) {
    const double u = unit[i];
    if (!(u >= 0.0 && u <= 1.0)) {
      throw OutOfRange("coordinate " + std::to_string(i) + " = " +
                       std::to_string(u) + " outside [0, 1]");
    }
    const auto& d = dims_[i];
    if (d.kind == DimKind::LogUniform) {
      v[i] = u == 0.0 ? d.lo : u == 1.0 ? d.hi : d.lo * std::pow(d.hi / d.lo, u);
    } else {
      v[i] = d.lo + u * (d.hi - d.lo);
    }
  }
  return v;
}

std::vector<double> SearchSpace::to_unit(std::span<const double> values) const {
  if (values.size() != dims_.size()) throw OutOfRange("value count");
  std::vector<double> u(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto& d = dims_[i];
    if (d.hi == d.lo) {
      u[i] = 0.0;
    } else if (d.kind == DimKind::LogUniform) {
      u[i] = std::log(values[i] / d.lo) / std::log(d.hi / d.lo);
    } else {
      u[i] = (values[i] - d.lo) / (d.hi - d.lo);
    }
  }
  return u;
}

MergeConfig SearchSpace::to_config(std::span<const double> values) const {
  if (values.size() != dims_.size()) throw OutOfRange("value count");
  MergeConfig c;
  c.mode = mode_;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto& d = dims_[i];
    switch (d.role) {
      case Dim::Role::Scale:
        c.scales[d.cell.block] = values[i];
        break;
      case Dim::Role::Lambda:
        c.lambdas[d.cell] = values[i];
        break;
      case Dim::Role::Eps:
        c.eps = values[i];
        break;
      case Dim::Role::Generic:
        throw OutOfRange("dimension '" + d.name + "' has no merge role");
    }
  }
  return c;
}

std::vector<double> SearchSpace::to_values(const MergeConfig& c) const {
  std::vector<double> v(dims_.size());
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    const auto& d = dims_[i];
    switch (d.role) {
      case Dim::Role::Scale:
        v[i] = c.scale_for(d.cell.block);
        break;
      case Dim::Role::Lambda:
        v[i] = c.lambda_for(d.cell);
        break;
      case Dim::Role::Eps:
        if (!c.eps) throw MissingConfigCell("eps");
        v[i] = *c.eps;
        break;
      case Dim::Role::Generic:
        throw OutOfRange("dimension '" + d.name + "' has no merge role");
    }
  }
  return v;
}

MergeConfig SearchSpace::decode(std::span<const double> unit) const {
  return to_config(from_unit(unit));
}

std::vector<double> SearchSpace::encode(const MergeConfig& config) const {
  return to_unit(to_values(config));
}

// --- GP ---

double GpModel::kernel(std::span<const double> a,
                       std::span<const double> b) const {
  double d2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    d2 += d * d;
  }
  return hyper_.signal_var *
         std::exp(-0.5 * d2 / (hyper_.lengthscale * hyper_.lengthscale));
}

GpModel gp_fit(std::vector<std::vector<double>> x, std::vector<double> f,
               const GpGrid& grid) {
  const std::size_t n = x.size();
  if (n < 2 || f.size() != n) {
    throw OutOfRange("gp_fit needs at least two observations");
  }
  GpModel best;
  best.x_ = std::move(x);
  best.f_ = std::move(f);

  double mean = 0.0;
  for (double v : best.f_) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : best.f_) var += (v - mean) * (v - mean);
  double sd = std::sqrt(var / static_cast<double>(n));
  if (!(sd > 1e-12)) sd = 1.0;
  best.f_mean_ = mean;
  best.f_std_ = sd;
  Tensor2D y(n, 1);
  for (std::size_t i = 0; i < n; ++i) y(i, 0) = (best.f_[i] - mean) / sd;

  // Squared distances are shared by every grid point.
  Tensor2D d2(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < best.x_[i].size(); ++k) {
        const double d = best.x_[i][k] - best.x_[j][k];
        s += d * d;
      }
      d2(i, j) = d2(j, i) = s;
    }
  }

  double best_lml = -std::numeric_limits<double>::infinity();
  bool found = false;
  for (double sv : grid.signal_vars) {
    for (double ls : grid.lengthscales) {
      Tensor2D k(n, n);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          k(i, j) = sv * std::exp(-0.5 * d2(i, j) / (ls * ls));
        }
      }
      CholeskyFactor fac;
      try {
        fac = cholesky(k, grid.noise_var);
      } catch (const NotPositiveDefinite&) {
        continue;
      }
      Tensor2D alpha = y;
      solve_lower(fac.lower, alpha);
      double quad = 0.0;
      for (std::size_t i = 0; i < n; ++i) quad += alpha(i, 0) * alpha(i, 0);
      solve_lower_t(fac.lower, alpha);
      double logdet = 0.0;
      for (std::size_t i = 0; i < n; ++i) logdet += std::log(fac.lower(i, i));
      const double lml = -0.5 * quad - logdet -
                         0.5 * static_cast<double>(n) *
                             std::log(2.0 * std::numbers::pi);
      if (lml > best_lml) {
        best_lml = lml;
        found = true;
        best.hyper_ = {sv, ls, fac.jitter_used};
        best.lower_ = std::move(fac.lower);
        best.alpha_.assign(alpha.data().begin(), alpha.data().end());
      }
    }
  }
  if (!found) {
    throw NotPositiveDefinite("no GP hyperparameter on the grid factorizes",
                              grid.noise_var);
  }
  best.lml_ = best_lml;
  return best;
}

Prediction GpModel::predict(std::span<const double> point) const {
  const std::size_t n = x_.size();
  Tensor2D ks(n, 1);
  double mu = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ks(i, 0) = kernel(x_[i], point);
    mu += ks(i, 0) * alpha_[i];
  }
  solve_lower(lower_, ks);
  double vv = 0.0;
  for (std::size_t i = 0; i < n; ++i) vv += ks(i, 0) * ks(i, 0);
  const double var = std::max(0.0, hyper_.signal_var - vv);
  return {f_mean_ + f_std_ * mu, f_std_ * std::sqrt(var)};
}

double expected_improvement(double mu, double sigma, double f_best,
                            double xi) {
  const double imp = mu - f_best - xi;
  if (!(sigma > 0.0)) return std::max(imp, 0.0);
  const double z = imp / sigma;
  const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  return std::max(0.0, imp * cdf + sigma * pdf);
}

std::vector<double> propose(const GpModel& model, std::size_t dims,
                            std::uint64_t seed, std::size_t n_candidates,
                            double xi) {
  if (n_candidates == 0) throw OutOfRange("n_candidates must be >= 1");
  const auto& fx = model.observed_f();
  const auto inc = static_cast<std::size_t>(
      std::max_element(fx.begin(), fx.end()) - fx.begin());
  const double f_best = fx[inc];

  Rng rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> jitter(0.0, 0.05);
  std::vector<double> cand(dims), best_point;
  double best_ei = -1.0;
  for (std::size_t c = 0; c <= n_candidates; ++c) {
    if (c < n_candidates) {
      for (auto& v : cand) v = unif(rng);
    } else {
      const auto& x = model.observed_x()[inc];
      for (std::size_t i = 0; i < dims; ++i) {
        cand[i] = std::clamp(x[i] + jitter(rng), 0.0, 1.0);
      }
    }
    const auto p = model.predict(cand);
    const double ei = expected_improvement(p.mu, p.sigma, f_best, xi);
    if (ei > best_ei) {
      best_ei = ei;
      best_point = cand;
    }
  }
  return best_point;
}

// --- Search loop ---

const Trial& TrialHistory::best() const {
  if (trials.empty()) throw EmptyInput("empty trial history");
  std::size_t b = 0;
  for (std::size_t i = 1; i < trials.size(); ++i) {
    if (trials[i].score > trials[b].score) b = i;
  }
  return trials[b];
}

std::size_t default_n_init(std::size_t dims) {
  return std::max<std::size_t>(10, 2 * dims);
}

BoResult bo_search(const SearchSpace& space, const Evaluator& evaluator,
                   const BoOptions& opt, TrialHistory history,
                   const TrialCallback& on_trial) {
  const std::size_t dims = space.size();
  const std::size_t n_init = opt.n_init == 0 ? default_n_init(dims) : opt.n_init;
  if (n_init < 2 || opt.budget < n_init) {
    throw OutOfRange("need budget >= n_init >= 2");
  }
  if (history.size() > opt.budget) throw OutOfRange("history exceeds budget");

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (std::size_t i = history.size(); i < opt.budget; ++i) {
    Trial trial;
    trial.index = i;
    if (i < n_init) {
      auto rng = make_rng(opt.seed, {i});
      trial.unit.resize(dims);
      for (auto& v : trial.unit) v = unif(rng);
    } else {
      std::vector<std::vector<double>> xs;
      std::vector<double> fs;
      for (const auto& t : history.trials) {
        xs.push_back(t.unit);
        fs.push_back(t.score);
      }
      const auto model = gp_fit(std::move(xs), std::move(fs), opt.grid);
      trial.unit = propose(model, dims, derive_seed(opt.seed, {i, 1}),
                           opt.n_candidates, opt.xi);
    }
    trial.values = space.from_unit(trial.unit);

    const auto t0 = std::chrono::steady_clock::now();
    try {
      trial.score = evaluator(trial.values);
    } catch (const std::exception& e) {
      throw EvaluatorFailure("trial " + std::to_string(i) + ": " + e.what(),
                             std::move(history));
    }
    trial.wall_ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
    if (!std::isfinite(trial.score)) {
      throw EvaluatorFailure("trial " + std::to_string(i) +
                                 " returned a non-finite score",
                             std::move(history));
    }
    history.trials.push_back(trial);
    if (on_trial) on_trial(history.trials.back());
  }
  BoResult r;
  r.best = history.best();
  r.history = std::move(history);
  return r;
}

std::string trial_to_json(const SearchSpace& space, const Trial& trial) {
  json config = json::object();
  for (std::size_t i = 0; i < space.size(); ++i) {
    config[space.dims()[i].name] = trial.values[i];
  }
  json j = {{"index", trial.index},
            {"unit", trial.unit},
            {"config", config},
            {"score", trial.score},
            {"wall_ms", trial.wall_ms}};
  return j.dump();
}

Trial trial_from_json(const SearchSpace& space, const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw FormatError("bad trial record: " + std::string(e.what()));
  }
  Trial t;
  try {
    t.index = j.at("index").get<std::size_t>();
    t.unit = j.at("unit").get<std::vector<double>>();
    t.score = j.at("score").get<double>();
    t.wall_ms = j.value("wall_ms", 0.0);
  } catch (const json::exception& e) {
    throw FormatError("bad trial record: " + std::string(e.what()));
  }
  t.values = space.from_unit(t.unit);
  return t;
}

TrialHistory read_history(const SearchSpace& space,
                          const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  TrialHistory h;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Trial t = trial_from_json(space, line);
    if (t.index != h.size()) {
      throw FormatError("trial log indices are not consecutive");
    }
    h.trials.push_back(std::move(t));
  }
  return h;
}

}  // namespace mergeforge::boopt
