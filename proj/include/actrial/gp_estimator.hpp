#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "actrial/dataset.hpp"
#include "actrial/estimator.hpp"
#include "actrial/linalg.hpp"
#include "actrial/optimize.hpp"

namespace actrial {

struct AllRestartsFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// ARD squared-exponential hyperparameters; all strictly positive, optimized
/// in log space.
struct GpHyperparams {
  double signal_var = 1.0;            // gamma_0
  Eigen::VectorXd length_scales;      // gamma_l, one per coordinate
  double noise_var = 1.0;             // sigma^2

  Eigen::VectorXd to_log() const {
    Eigen::VectorXd v(length_scales.size() + 2);
    v(0) = std::log(signal_var);
    for (Eigen::Index l = 0; l < length_scales.size(); ++l) v(l + 1) = std::log(length_scales(l));
    v(v.size() - 1) = std::log(noise_var);
    return v;
  }

  static GpHyperparams from_log(const Eigen::VectorXd& v) {
    GpHyperparams hp;
    hp.signal_var = std::exp(v(0));
    hp.length_scales.resize(v.size() - 2);
    for (Eigen::Index l = 0; l < hp.length_scales.size(); ++l) hp.length_scales(l) = std::exp(v(l + 1));
    hp.noise_var = std::exp(v(v.size() - 1));
    return hp;
  }
};

/// k(x, x') = gamma_0 exp(-sum_l (x_l - x'_l)^2 / (2 gamma_l^2)).
inline double se_ard_kernel(const GpHyperparams& hp, const Eigen::VectorXd& x,
                            const Eigen::VectorXd& y) {
  if (x.size() != y.size() || x.size() != hp.length_scales.size()) {
    throw std::invalid_argument("se_ard_kernel: dimension mismatch");
  }
  double e = 0.0;
  for (Eigen::Index l = 0; l < x.size(); ++l) {
    double d = x(l) - y(l);
    e += d * d / (2.0 * hp.length_scales(l) * hp.length_scales(l));
  }
  return hp.signal_var * std::exp(-e);
}

namespace detail {

/// Per-coordinate squared-difference matrices, shared across likelihood
/// evaluations while fitting.
struct SqDiffCache {
  std::vector<Eigen::MatrixXd> d;  // p matrices, n x n

  SqDiffCache() = default;
  explicit SqDiffCache(const Eigen::MatrixXd& x) {
    const Eigen::Index n = x.rows(), p = x.cols();
    d.resize(p);
    for (Eigen::Index l = 0; l < p; ++l) {
      d[l].resize(n, n);
      for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j <= i; ++j) {
          double t = x(i, l) - x(j, l);
          d[l](i, j) = d[l](j, i) = t * t;
        }
      }
    }
  }

  Eigen::MatrixXd gram(const GpHyperparams& hp) const {
    const Eigen::Index n = d.empty() ? 0 : d[0].rows();
    Eigen::MatrixXd e = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t l = 0; l < d.size(); ++l) {
      e -= d[l] * (0.5 / (hp.length_scales(l) * hp.length_scales(l)));
    }
    return hp.signal_var * e.array().exp().matrix();
  }
};

}  // namespace detail

inline Eigen::MatrixXd se_ard_gram(const GpHyperparams& hp, const Eigen::MatrixXd& x) {
  return detail::SqDiffCache(x).gram(hp);
}

/// log p(R | X, Gamma) = -1/2 R^T K_R^{-1} R - 1/2 log det K_R - n/2 log 2pi,
/// with K_R = K_gamma + sigma^2 I evaluated through its Cholesky factor.
inline double log_marginal_likelihood(const GpHyperparams& hp, const Eigen::MatrixXd& x,
                                      const Eigen::VectorXd& r) {
  const Eigen::Index n = x.rows();
  if (n < 1) throw std::invalid_argument("log_marginal_likelihood: need n >= 1");
  Eigen::MatrixXd k = se_ard_gram(hp, x);
  k.diagonal().array() += hp.noise_var;
  CholeskyFactor chol = cholesky(k);
  Eigen::VectorXd alpha = chol.solve(r);
  return -0.5 * r.dot(alpha) - 0.5 * chol.log_det() - 0.5 * n * std::log(2.0 * M_PI);
}

/// Analytic gradient of the marginal log-likelihood in log-hyperparameter
/// space, layout [log gamma_0, log gamma_1..p, log sigma^2]. Check path only;
/// the optimizer itself is derivative-free.
inline Eigen::VectorXd log_marginal_likelihood_gradient(const GpHyperparams& hp,
                                                        const Eigen::MatrixXd& x,
                                                        const Eigen::VectorXd& r) {
  const Eigen::Index n = x.rows(), p = x.cols();
  detail::SqDiffCache cache(x);
  Eigen::MatrixXd kg = cache.gram(hp);
  Eigen::MatrixXd kr = kg;
  kr.diagonal().array() += hp.noise_var;
  CholeskyFactor chol = cholesky(kr);
  Eigen::VectorXd alpha = chol.solve(r);
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd kinv = chol.solve(eye);

  auto half_trace_form = [&](const Eigen::MatrixXd& dk) {
    return 0.5 * (alpha.dot(dk * alpha) - kinv.cwiseProduct(dk).sum());
  };

  Eigen::VectorXd g(p + 2);
  g(0) = half_trace_form(kg);  // d K / d log gamma_0 = K_gamma
  for (Eigen::Index l = 0; l < p; ++l) {
    double inv_ls2 = 1.0 / (hp.length_scales(l) * hp.length_scales(l));
    Eigen::MatrixXd dk = kg.cwiseProduct(cache.d[l]) * inv_ls2;
    g(l + 1) = half_trace_form(dk);
  }
  Eigen::MatrixXd dnoise = hp.noise_var * Eigen::MatrixXd::Identity(n, n);
  g(p + 1) = half_trace_form(dnoise);
  return g;
}

struct GpFitOptions {
  int restarts = 3;
  int max_evals = 200;     // likelihood evaluations per restart
  double xtol = 1e-3;      // simplex tolerance in log space
  double perturb_sd = 0.5; // log-space jitter for restarts beyond the first
};

/// Hyperparameters by local maximization of the marginal log-likelihood,
/// best of `restarts` Nelder-Mead runs. The first start is the moment-based
/// initial point; later starts perturb it in log space.
inline GpHyperparams fit_hyperparameters(const Eigen::MatrixXd& x, const Eigen::VectorXd& r,
                                         const GpFitOptions& opts, Rng& rng) {
  const Eigen::Index n = x.rows(), p = x.cols();
  if (n < 3) throw std::invalid_argument("fit_hyperparameters: need n >= 3");

  double r_mean = r.mean();
  double r_var = (r.array() - r_mean).square().sum() / static_cast<double>(n);
  if (!(r_var > 1e-12)) r_var = 1.0;

  GpHyperparams init;
  init.signal_var = r_var;
  init.noise_var = 0.1 * r_var;
  init.length_scales.resize(p);
  for (Eigen::Index l = 0; l < p; ++l) {
    double m = x.col(l).mean();
    double sd = std::sqrt((x.col(l).array() - m).square().sum() / static_cast<double>(n));
    init.length_scales(l) = sd > 1e-8 ? sd : 1.0;
  }
  const Eigen::VectorXd init_log = init.to_log();

  detail::SqDiffCache cache(x);
  auto objective = [&](const Eigen::VectorXd& logp) -> double {
    Eigen::VectorXd clamped = logp.cwiseMax(-15.0).cwiseMin(15.0);
    GpHyperparams hp = GpHyperparams::from_log(clamped);
    try {
      Eigen::MatrixXd k = cache.gram(hp);
      k.diagonal().array() += hp.noise_var;
      CholeskyFactor chol = cholesky(k);
      Eigen::VectorXd alpha = chol.solve(r);
      double lml = -0.5 * r.dot(alpha) - 0.5 * chol.log_det() -
                   0.5 * static_cast<double>(n) * std::log(2.0 * M_PI);
      return -lml;
    } catch (const NotPositiveDefinite&) {
      return kInfinity;
    }
  };

  NelderMeadOptions nm;
  nm.xtol = opts.xtol;
  nm.max_evals = opts.max_evals;

  bool have_best = false;
  Eigen::VectorXd best_log;
  double best_f = kInfinity;
  for (int s = 0; s < std::max(1, opts.restarts); ++s) {
    Eigen::VectorXd start = init_log;
    if (s > 0) {
      for (Eigen::Index i = 0; i < start.size(); ++i) start(i) += opts.perturb_sd * rng.normal();
    }
    try {
      NelderMeadResult res = nelder_mead(objective, start, nm);
      if (std::isfinite(res.f) && res.f < best_f) {
        best_f = res.f;
        best_log = res.x;
        have_best = true;
      }
    } catch (const NonFiniteObjective&) {
      // restart landed on an infeasible start point; try the next one
    }
  }
  if (!have_best) throw AllRestartsFailed("fit_hyperparameters: no restart reached a finite LML");
  return GpHyperparams::from_log(best_log.cwiseMax(-15.0).cwiseMin(15.0));
}

/// Fitted posterior for one arm. With no training data this is the prior:
/// mean 0, variance gamma_0 everywhere.
class GpPosterior {
 public:
  static GpPosterior prior(GpHyperparams hp) {
    GpPosterior p;
    p.hp_ = std::move(hp);
    return p;
  }

  GpPosterior(Eigen::MatrixXd x, Eigen::VectorXd r, GpHyperparams hp)
      : x_(std::move(x)), r_(std::move(r)), hp_(std::move(hp)) {
    Eigen::MatrixXd k = se_ard_gram(hp_, x_);
    k.diagonal().array() += hp_.noise_var;
    chol_ = std::make_shared<CholeskyFactor>(cholesky(k));
    alpha_ = chol_->solve(r_);
  }

  long size() const { return static_cast<long>(x_.rows()); }
  const GpHyperparams& hyperparams() const { return hp_; }

  /// Posterior (mean, variance) at x0; the variance is clamped at 0.
  std::pair<double, double> predict(const Eigen::VectorXd& x0) const {
    if (x_.rows() == 0) return {0.0, hp_.signal_var};
    Eigen::VectorXd k(x_.rows());
    for (Eigen::Index i = 0; i < x_.rows(); ++i) {
      k(i) = se_ard_kernel(hp_, x0, x_.row(i).transpose());
    }
    double mean = k.dot(alpha_);
    Eigen::VectorXd w = chol_->solve_lower(k);
    double var = hp_.signal_var - w.squaredNorm();
    return {mean, std::max(0.0, var)};
  }

  double mean_at(const Eigen::VectorXd& x0) const {
    if (x_.rows() == 0) return 0.0;
    double mean = 0.0;
    for (Eigen::Index i = 0; i < x_.rows(); ++i) {
      mean += se_ard_kernel(hp_, x0, x_.row(i).transpose()) * alpha_(i);
    }
    return mean;
  }

 private:
  GpPosterior() = default;

  Eigen::MatrixXd x_;
  Eigen::VectorXd r_;
  GpHyperparams hp_;
  std::shared_ptr<CholeskyFactor> chol_;
  Eigen::VectorXd alpha_;
};

struct GpConfig {
  GpFitOptions fit{};
  double multiplier = 3.0;       // delta_j = multiplier * posterior sd
  double prior_signal_var = 1.0; // prior gamma_0 used when an arm has no data
  int min_fit_size = 3;          // below this (but > 0) the arm is a sentinel
};

/// AL-GP backend: one ARD squared-exponential GP per arm, hyperparameters
/// refit from scratch at every stage; delta = multiplier * (sd_+ + sd_-).
/// An arm with some data but fewer than min_fit_size observations yields the
/// +inf sentinel; an arm with no data at all falls back to the prior.
class GpContrastEstimator : public ContrastEstimator {
 public:
  explicit GpContrastEstimator(GpConfig cfg = {}) : cfg_(cfg) {}

  void fit(const Dataset& data, Rng& rng) override {
    // both arms draw restart perturbations from identically seeded streams so
    // that mirror-identical arm data yields a bitwise-symmetric fit
    const std::uint64_t key = rng.next_u64();
    Rng plus_rng = rng.child(key);
    Rng minus_rng = rng.child(key);
    fit_arm(data, Arm::plus, plus_, plus_rng);
    fit_arm(data, Arm::minus, minus_, minus_rng);
  }

  ContrastEstimate estimate(const Eigen::VectorXd& x0) const override {
    ContrastEstimate est;
    if (plus_.sentinel || minus_.sentinel) {
      est.f_hat = 0.0;
      est.delta = kInfinity;
      est.plus.n = plus_.n;
      est.minus.n = minus_.n;
      return est;
    }
    auto [mp, vp] = plus_.post.predict(x0);
    auto [mm, vm] = minus_.post.predict(x0);
    est.f_hat = mp - mm;
    est.delta = cfg_.multiplier * (std::sqrt(vp) + std::sqrt(vm));
    est.plus = {std::sqrt(vp), plus_.n};
    est.minus = {std::sqrt(vm), minus_.n};
    return est;
  }

  std::string name() const override { return "AL-GP"; }
  const GpConfig& config() const { return cfg_; }

  /// Rule evaluation only needs posterior means; skips the variance solves.
  double contrast_point(const Eigen::VectorXd& x0) const override {
    if (plus_.sentinel || minus_.sentinel) return 0.0;
    return plus_.post.mean_at(x0) - minus_.post.mean_at(x0);
  }

  const GpPosterior& posterior(Arm a) const { return a == Arm::plus ? plus_.post : minus_.post; }

 private:
  struct ArmState {
    GpPosterior post = GpPosterior::prior(GpHyperparams{});
    bool sentinel = false;
    long n = 0;
  };

  void fit_arm(const Dataset& data, Arm arm, ArmState& state, Rng& rng) {
    std::vector<const Observation*> rows;
    for (const auto& o : data.obs) {
      if (o.arm == arm) rows.push_back(&o);
    }
    state.n = static_cast<long>(rows.size());
    state.sentinel = false;
    if (rows.empty()) {
      GpHyperparams hp;
      hp.signal_var = cfg_.prior_signal_var;
      hp.length_scales = Eigen::VectorXd::Ones(std::max(1, data.dim));
      hp.noise_var = 1.0;
      state.post = GpPosterior::prior(hp);
      return;
    }
    if (state.n < cfg_.min_fit_size) {
      state.sentinel = true;
      return;
    }
    Eigen::MatrixXd x(rows.size(), data.dim);
    Eigen::VectorXd r(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      x.row(i) = rows[i]->x;
      r(i) = rows[i]->outcome;
    }
    GpHyperparams hp = fit_hyperparameters(x, r, cfg_.fit, rng);
    state.post = GpPosterior(std::move(x), std::move(r), std::move(hp));
  }

  GpConfig cfg_;
  ArmState plus_;
  ArmState minus_;
};

}  // namespace actrial
