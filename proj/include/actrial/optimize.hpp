#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

namespace actrial {

struct NonFiniteObjective : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Objective = std::function<double(const Eigen::VectorXd&)>;

struct NelderMeadOptions {
  double xtol = 1e-6;      // stop when the simplex diameter falls below this
  int max_evals = 2000;
  double initial_step = 0.5;
};

struct NelderMeadResult {
  Eigen::VectorXd x;
  double f = std::numeric_limits<double>::quiet_NaN();
  int evals = 0;
  bool converged = false;
};

/// Derivative-free minimization (Nelder-Mead simplex). Non-finite objective
/// values away from the start point are treated as +inf so the simplex
/// retreats from them.
inline NelderMeadResult nelder_mead(const Objective& objective, const Eigen::VectorXd& x0,
                                    const NelderMeadOptions& opts = {}) {
  const int dim = static_cast<int>(x0.size());
  if (dim == 0) throw std::invalid_argument("nelder_mead: empty start point");

  int evals = 0;
  auto eval = [&](const Eigen::VectorXd& x) {
    ++evals;
    double v = objective(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };

  double f0 = objective(x0);
  ++evals;
  if (!std::isfinite(f0)) throw NonFiniteObjective("nelder_mead: objective non-finite at x0");

  std::vector<Eigen::VectorXd> pts(dim + 1, x0);
  std::vector<double> fv(dim + 1, f0);
  for (int i = 0; i < dim; ++i) {
    pts[i + 1](i) += opts.initial_step;
    fv[i + 1] = eval(pts[i + 1]);
  }

  std::vector<int> order(dim + 1);
  auto sort_simplex = [&] {
    for (int i = 0; i <= dim; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) { return fv[a] < fv[b]; });
  };

  const double alpha = 1.0, gamma = 2.0, rho = 0.5, sigma = 0.5;
  while (true) {
    sort_simplex();
    const int best = order[0], worst = order[dim], second_worst = order[dim - 1];

    double diameter = 0.0;
    for (int i = 1; i <= dim; ++i) {
      diameter = std::max(diameter, (pts[order[i]] - pts[best]).cwiseAbs().maxCoeff());
    }
    if (diameter < opts.xtol || evals >= opts.max_evals) {
      return {pts[best], fv[best], evals, diameter < opts.xtol};
    }

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(dim);
    for (int i = 0; i <= dim; ++i) {
      if (i != worst) centroid += pts[i];
    }
    centroid /= dim;

    Eigen::VectorXd reflected = centroid + alpha * (centroid - pts[worst]);
    double fr = eval(reflected);
    if (fr < fv[best]) {
      Eigen::VectorXd expanded = centroid + gamma * (reflected - centroid);
      double fe = eval(expanded);
      if (fe < fr) {
        pts[worst] = expanded;
        fv[worst] = fe;
      } else {
        pts[worst] = reflected;
        fv[worst] = fr;
      }
      continue;
    }
    if (fr < fv[second_worst]) {
      pts[worst] = reflected;
      fv[worst] = fr;
      continue;
    }
    Eigen::VectorXd contracted = centroid + rho * (pts[worst] - centroid);
    double fc = eval(contracted);
    if (fc < fv[worst]) {
      pts[worst] = contracted;
      fv[worst] = fc;
      continue;
    }
    for (int i = 0; i <= dim; ++i) {
      if (i == best) continue;
      pts[i] = pts[best] + sigma * (pts[i] - pts[best]);
      fv[i] = eval(pts[i]);
    }
  }
}

/// Central-difference gradient; the test oracle for analytic gradients.
inline Eigen::VectorXd finite_diff_gradient(const Objective& objective, const Eigen::VectorXd& x,
                                            double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_gradient: h must be positive");
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd p = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    p(i) = x(i) + h;
    double fp = objective(p);
    p(i) = x(i) - h;
    double fm = objective(p);
    p(i) = x(i);
    g(i) = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace actrial
