#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "actrial/csv.hpp"
#include "actrial/dataset.hpp"
#include "actrial/rng.hpp"
#include "actrial/scenario.hpp"

namespace actrial {

struct NoConcordantSubjects : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegenerateFraction : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NonPositiveAev : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Monte Carlo value of a rule: the average noiseless mean outcome
/// m0(x) + T0(x, D(x)) over fresh covariate draws.
inline double mc_value(const Rule& rule, const ScenarioSpec& spec, long n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("mc_value: n must be >= 1");
  KahanMean acc;
  for (long i = 0; i < n; ++i) {
    Eigen::VectorXd x = spec.sample_covariate(rng);
    acc.add(spec.baseline_mean(x) + spec.interaction(x, rule(x)));
  }
  return acc.mean();
}

/// Average excess value over a test grid: the interaction-term loss of the
/// rule relative to the optimal rule (0 iff decisions match a.e.).
inline double aev(const Rule& rule, const ScenarioSpec& spec, const Eigen::MatrixXd& test_x) {
  if (test_x.rows() == 0) throw std::invalid_argument("aev: empty test grid");
  KahanMean acc;
  for (long i = 0; i < test_x.rows(); ++i) {
    Eigen::VectorXd x = test_x.row(i).transpose();
    acc.add(spec.interaction(x, spec.optimal_rule(x)) - spec.interaction(x, rule(x)));
  }
  return acc.mean();
}

/// Inverse-probability-weighted value estimate from randomized data.
inline double ipw_value(const Dataset& data, const Rule& rule) {
  if (!(data.propensity > 0.0 && data.propensity < 1.0)) {
    throw std::invalid_argument("ipw_value: propensity must lie in (0,1)");
  }
  KahanMean acc;
  for (const auto& o : data.obs) {
    acc.add(o.arm == rule(o.x) ? o.outcome / data.pi(o.arm) : 0.0);
  }
  return acc.mean();
}

/// Ratio estimator of the mean outcome among rule-concordant subjects,
/// weighted by inverse randomization probability.
inline double weighted_mean_outcome(const Dataset& data, const Rule& rule) {
  double num = 0.0, den = 0.0;
  for (const auto& o : data.obs) {
    if (o.arm == rule(o.x)) {
      double w = 1.0 / data.pi(o.arm);
      num += w * o.outcome;
      den += w;
    }
  }
  if (den <= 0.0) throw NoConcordantSubjects("weighted_mean_outcome: no concordant subjects");
  return num / den;
}

/// Margin exponent: the log-log slope of the empirical fraction
/// P(|f*(X)| <= t) against t over the given grid. The functional form takes
/// an arbitrary sampler/contrast pair (test hooks for shifted or rescaled
/// contrasts).
inline double margin_exponent(const std::function<Eigen::VectorXd(Rng&)>& sampler,
                              const std::function<double(const Eigen::VectorXd&)>& contrast,
                              const std::vector<double>& t_grid, long n, Rng& rng) {
  if (t_grid.size() < 5) throw std::invalid_argument("margin_exponent: need >= 5 grid points");
  for (double t : t_grid) {
    if (!(t > 0.0)) throw std::invalid_argument("margin_exponent: t grid must be positive");
  }
  if (n < 1) throw std::invalid_argument("margin_exponent: n must be >= 1");

  std::vector<double> abs_contrast(n);
  for (long i = 0; i < n; ++i) {
    abs_contrast[i] = std::abs(contrast(sampler(rng)));
  }
  std::sort(abs_contrast.begin(), abs_contrast.end());

  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (double t : t_grid) {
    auto it = std::upper_bound(abs_contrast.begin(), abs_contrast.end(), t);
    double frac = static_cast<double>(it - abs_contrast.begin()) / static_cast<double>(n);
    if (frac <= 0.0) {
      throw DegenerateFraction("margin_exponent: empty margin set at t = " + format_double(t));
    }
    double lx = std::log(t), ly = std::log(frac);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double m = static_cast<double>(t_grid.size());
  return (m * sxy - sx * sy) / (m * sxx - sx * sx);
}

inline double margin_exponent(const ScenarioSpec& spec, const std::vector<double>& t_grid, long n,
                              Rng& rng) {
  return margin_exponent([&spec](Rng& r) { return spec.sample_covariate(r); },
                         [&spec](const Eigen::VectorXd& x) { return spec.contrast(x); }, t_grid, n,
                         rng);
}

/// Log-log OLS fit of AEV against budget, with the rate bound's slope
/// -(1+gamma)/(2+d-gamma) alongside when (d, gamma) are given.
struct RateFit {
  std::vector<std::pair<double, double>> points;  // (log N, log AEV)
  double slope = 0.0;
  double intercept = 0.0;
  double theoretical_slope = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> excluded;  // budgets dropped for non-positive AEV
};

inline RateFit rate_fit(const std::vector<std::pair<double, double>>& budget_aev, int d = 0,
                        double gamma = std::numeric_limits<double>::quiet_NaN()) {
  RateFit fit;
  for (const auto& [n, a] : budget_aev) {
    if (a > 0.0 && n > 0.0) fit.points.emplace_back(std::log(n), std::log(a));
    else fit.excluded.push_back(n);
  }
  if (fit.points.size() < 4) {
    std::string msg = "rate_fit: need >= 4 positive-AEV budgets; excluded:";
    for (double n : fit.excluded) msg += " " + format_double(n);
    throw NonPositiveAev(msg);
  }
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& [lx, ly] : fit.points) {
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double m = static_cast<double>(fit.points.size());
  fit.slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
  fit.intercept = (sy - fit.slope * sx) / m;
  if (d > 0 && std::isfinite(gamma)) {
    fit.theoretical_slope = -(1.0 + gamma) / (2.0 + d - gamma);
  }
  return fit;
}

// ---- cross-validation over a fixed pool ------------------------------------

/// A rule-learning method for the CV harness: given a training pool and an
/// additional-enrollment budget, produce a rule.
struct CvMethod {
  std::string name;
  std::function<Rule(const Dataset& training, int budget, Rng& rng)> learn;
};

struct CvCell {
  std::string method;
  int budget = 0;
  double mean_value = 0.0;
  long evaluations = 0;
};

/// Fold index for every subject; each subject lands in exactly one fold.
inline std::vector<int> cv_fold_assignment(std::size_t n, int folds, Rng& rng) {
  if (folds < 2) throw std::invalid_argument("cv_fold_assignment: folds must be >= 2");
  std::vector<int> assign(n);
  for (std::size_t i = 0; i < n; ++i) assign[i] = static_cast<int>(i % folds);
  rng.shuffle(assign);
  return assign;
}

/// Repeated k-fold CV: mean held-out weighted mean outcome per
/// (method, budget) cell, averaged over folds and repetitions.
inline std::vector<CvCell> cross_validate(const Dataset& pool, int folds,
                                          const std::vector<CvMethod>& methods,
                                          const std::vector<int>& budgets, int reps, Rng& rng) {
  if (folds < 2) throw std::invalid_argument("cross_validate: folds must be >= 2");
  if (pool.size() < static_cast<std::size_t>(folds)) {
    throw std::invalid_argument("cross_validate: pool smaller than fold count");
  }
  std::vector<KahanMean> acc(methods.size() * budgets.size());
  for (int rep = 0; rep < reps; ++rep) {
    Rng rep_rng = rng.child(rep);
    std::vector<int> fold_of = cv_fold_assignment(pool.size(), folds, rep_rng);
    for (int f = 0; f < folds; ++f) {
      Dataset train(pool.dim), valid(pool.dim);
      train.propensity = valid.propensity = pool.propensity;
      train.direction = valid.direction = pool.direction;
      for (std::size_t i = 0; i < pool.size(); ++i) {
        (fold_of[i] == f ? valid : train).add(pool.obs[i]);
      }
      for (std::size_t mi = 0; mi < methods.size(); ++mi) {
        for (std::size_t bi = 0; bi < budgets.size(); ++bi) {
          const std::uint64_t cell =
              (static_cast<std::uint64_t>(f) * methods.size() + mi) * budgets.size() + bi;
          Rng cell_rng = rep_rng.child(1000 + cell);
          Rule rule = methods[mi].learn(train, budgets[bi], cell_rng);
          acc[mi * budgets.size() + bi].add(weighted_mean_outcome(valid, rule));
        }
      }
    }
  }
  std::vector<CvCell> cells;
  for (std::size_t mi = 0; mi < methods.size(); ++mi) {
    for (std::size_t bi = 0; bi < budgets.size(); ++bi) {
      const auto& a = acc[mi * budgets.size() + bi];
      cells.push_back({methods[mi].name, budgets[bi], a.mean(), a.count()});
    }
  }
  return cells;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace actrial
