#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "actrial/gp_estimator.hpp"
#include "actrial/optimize.hpp"
#include "actrial/scenario.hpp"

using namespace actrial;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

GpHyperparams unit_hp(int p) {
  GpHyperparams hp;
  hp.signal_var = 1.0;
  hp.length_scales = VectorXd::Ones(p);
  hp.noise_var = 1.0;
  return hp;
}

/// Draws a latent function from the GP prior at the given inputs.
VectorXd sample_gp_function(const GpHyperparams& hp, const MatrixXd& x, Rng& rng) {
  MatrixXd k = se_ard_gram(hp, x);
  k.diagonal().array() += 1e-10;
  CholeskyFactor chol = cholesky(k);
  VectorXd z(x.rows());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
  return chol.lower() * z;
}

}  // namespace

TEST_CASE("ARD kernel basics") {
  GpHyperparams hp = unit_hp(2);
  hp.signal_var = 1.7;
  VectorXd x(2), y(2);
  x << 0.3, -0.4;
  CHECK(se_ard_kernel(hp, x, x) == Catch::Approx(1.7));

  hp.signal_var = 1.0;
  y << 0.3 + 1.0, -0.4 + 1.0;  // squared distance 2, unit length scales
  CHECK(se_ard_kernel(hp, x, y) == Catch::Approx(std::exp(-1.0)));

  Rng rng(42);
  for (int i = 0; i < 50; ++i) {
    VectorXd a(2), b(2);
    a << rng.normal(), rng.normal();
    b << rng.normal(), rng.normal();
    REQUIRE(se_ard_kernel(hp, a, b) == se_ard_kernel(hp, b, a));
    REQUIRE(se_ard_kernel(hp, a, b) > 0.0);
    REQUIRE(se_ard_kernel(hp, a, b) <= hp.signal_var);
  }

  VectorXd wrong(3);
  wrong.setZero();
  CHECK_THROWS_AS(se_ard_kernel(hp, x, wrong), std::invalid_argument);
}

TEST_CASE("marginal log-likelihood closed forms at n = 1") {
  GpHyperparams hp = unit_hp(1);
  MatrixXd x(1, 1);
  x << 0.0;
  VectorXd r(1);

  r << 0.0;  // K_R = [2], quadratic term 0
  CHECK(log_marginal_likelihood(hp, x, r) ==
        Catch::Approx(-0.5 * std::log(2.0) - 0.5 * std::log(2.0 * M_PI)));

  r << 2.0;  // adds -(1/2) * 4/2 = -1
  CHECK(log_marginal_likelihood(hp, x, r) ==
        Catch::Approx(-1.0 - 0.5 * std::log(2.0) - 0.5 * std::log(2.0 * M_PI)));
}

TEST_CASE("analytic LML gradient matches central differences") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 20;
    const int p = 1 + static_cast<int>(rng.below(3));
    MatrixXd x(n, p);
    VectorXd r(n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < p; ++j) x(i, j) = rng.uniform(-2, 2);
      r(i) = rng.normal();
    }
    VectorXd logp(p + 2);
    for (int j = 0; j < p + 2; ++j) logp(j) = rng.uniform(-1.0, 1.0);
    GpHyperparams hp = GpHyperparams::from_log(logp);

    VectorXd analytic = log_marginal_likelihood_gradient(hp, x, r);
    auto f = [&](const VectorXd& lp) {
      return log_marginal_likelihood(GpHyperparams::from_log(lp), x, r);
    };
    VectorXd numeric = finite_diff_gradient(f, logp, 1e-5);
    double rel = (analytic - numeric).norm() / std::max(1e-8, analytic.norm());
    REQUIRE(rel < 1e-5);
  }
}

TEST_CASE("hyperparameter fitting recovers a known generator") {
  GpHyperparams truth;
  truth.signal_var = 2.0;
  truth.length_scales = VectorXd::Constant(1, 0.7);
  truth.noise_var = 0.3;

  std::vector<double> err0, err1, err2;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed * 101);
    const int n = 200;
    MatrixXd x(n, 1);
    // several independent correlation lengths, else gamma_0 is barely
    // identified at this sample size
    for (int i = 0; i < n; ++i) x(i, 0) = rng.uniform(-4, 4);
    VectorXd f = sample_gp_function(truth, x, rng);
    VectorXd y = f;
    for (int i = 0; i < n; ++i) y(i) += std::sqrt(truth.noise_var) * rng.normal();

    GpFitOptions opts;
    opts.max_evals = 400;
    Rng fit_rng(seed);
    GpHyperparams hat = fit_hyperparameters(x, y, opts, fit_rng);
    err0.push_back(std::abs(std::log(hat.signal_var) - std::log(truth.signal_var)));
    err1.push_back(std::abs(std::log(hat.length_scales(0)) - std::log(truth.length_scales(0))));
    err2.push_back(std::abs(std::log(hat.noise_var) - std::log(truth.noise_var)));
  }
  auto med = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  CHECK(med(err0) < 0.5);
  CHECK(med(err1) < 0.5);
  CHECK(med(err2) < 0.5);
}

TEST_CASE("fitting pure noise never ends below the initial likelihood") {
  Rng rng(88);
  const int n = 60;
  MatrixXd x(n, 2);
  VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = rng.uniform(-1, 1);
    x(i, 1) = rng.uniform(-1, 1);
    y(i) = rng.normal();  // independent of x
  }

  double y_var = (y.array() - y.mean()).square().mean();
  GpHyperparams init;
  init.signal_var = y_var;
  init.noise_var = 0.1 * y_var;
  init.length_scales.resize(2);
  for (int j = 0; j < 2; ++j) {
    init.length_scales(j) = std::sqrt((x.col(j).array() - x.col(j).mean()).square().mean());
  }

  GpFitOptions opts;
  Rng fit_rng(3);
  GpHyperparams hat = fit_hyperparameters(x, y, opts, fit_rng);
  CHECK(log_marginal_likelihood(hat, x, y) >= log_marginal_likelihood(init, x, y) - 1e-9);

  // noise-dominated data: either the length scales drift far beyond the data
  // spread or the signal-to-noise ratio collapses
  const double spread = 2.0;
  bool long_scales = hat.length_scales.minCoeff() >= 10.0 * spread;
  bool small_signal = hat.signal_var <= hat.noise_var;
  CHECK((long_scales || small_signal));
}

TEST_CASE("duplicating every observation does not inflate the noise estimate") {
  std::vector<double> orig, dup;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed * 13);
    const int n = 60;
    MatrixXd x(n, 1);
    VectorXd y(n);
    for (int i = 0; i < n; ++i) {
      x(i, 0) = rng.uniform(-2, 2);
      y(i) = std::sin(2.0 * x(i, 0)) + 0.4 * rng.normal();
    }
    MatrixXd x2(2 * n, 1);
    VectorXd y2(2 * n);
    x2 << x, x;
    y2 << y, y;

    GpFitOptions opts;
    Rng f1(seed), f2(seed);
    orig.push_back(fit_hyperparameters(x, y, opts, f1).noise_var);
    dup.push_back(fit_hyperparameters(x2, y2, opts, f2).noise_var);
  }
  auto med = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  CHECK(med(dup) <= med(orig) + 1e-9);
}

TEST_CASE("fitting reports failure when no restart reaches a finite likelihood") {
  MatrixXd x(3, 1);
  x << 0.0, 1.0, 2.0;
  VectorXd r(3);
  r << 1.0, std::numeric_limits<double>::quiet_NaN(), 2.0;
  GpFitOptions opts;
  Rng rng(1);
  CHECK_THROWS_AS(fit_hyperparameters(x, r, opts, rng), AllRestartsFailed);

  MatrixXd tiny(2, 1);
  tiny << 0.0, 1.0;
  VectorXd rt(2);
  rt << 1.0, 2.0;
  CHECK_THROWS_AS(fit_hyperparameters(tiny, rt, opts, rng), std::invalid_argument);
}

TEST_CASE("posterior closed forms") {
  GpHyperparams hp = unit_hp(1);

  GpPosterior empty = GpPosterior::prior(hp);
  VectorXd x0(1);
  x0 << 0.4;
  auto [m0, v0] = empty.predict(x0);
  CHECK(m0 == 0.0);
  CHECK(v0 == Catch::Approx(1.0));

  // one training point at x0 with r = 3: k = 1, K_R = 2
  MatrixXd x(1, 1);
  x << 0.4;
  VectorXd r(1);
  r << 3.0;
  GpPosterior post(x, r, hp);
  auto [m1, v1] = post.predict(x0);
  CHECK(m1 == Catch::Approx(1.5));
  CHECK(v1 == Catch::Approx(0.5));

  // far extrapolation reverts to the prior
  VectorXd far(1);
  far << 1000.0;
  auto [mf, vf] = post.predict(far);
  CHECK(std::abs(mf) < 1e-6);
  CHECK(std::abs(vf - hp.signal_var) < 1e-6);
}

TEST_CASE("posterior variance is bounded by the prior and shrinks with data") {
  GpHyperparams hp = unit_hp(2);
  hp.signal_var = 1.3;
  hp.noise_var = 0.2;
  Rng rng(17);
  const int n = 30;
  MatrixXd x(n, 2);
  VectorXd r(n);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = rng.uniform(-1, 1);
    x(i, 1) = rng.uniform(-1, 1);
    r(i) = rng.normal();
  }
  GpPosterior post(x.topRows(n - 1), r.head(n - 1), hp);
  GpPosterior bigger(x, r, hp);
  for (int q = 0; q < 100; ++q) {
    VectorXd x0(2);
    x0 << rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5);
    auto [m_small, v_small] = post.predict(x0);
    auto [m_big, v_big] = bigger.predict(x0);
    REQUIRE(v_small <= hp.signal_var + 1e-8);
    REQUIRE(v_big <= v_small + 1e-9);  // extra training point never hurts
  }
}

TEST_CASE("posterior interpolates as the noise vanishes") {
  GpHyperparams hp = unit_hp(1);
  hp.noise_var = 1e-8;
  const int n = 10;
  MatrixXd x(n, 1);
  VectorXd r(n);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = -2.0 + 4.0 * i / (n - 1);
    r(i) = std::sin(x(i, 0));
  }
  GpPosterior post(x, r, hp);
  for (int i = 0; i < n; ++i) {
    auto [m, v] = post.predict(x.row(i).transpose());
    REQUIRE(std::abs(m - r(i)) < 1e-4);
  }
}

TEST_CASE("well-specified posterior bands cover the truth") {
  GpHyperparams truth;
  truth.signal_var = 1.5;
  truth.length_scales = VectorXd::Constant(2, 0.8);
  truth.noise_var = 0.2;

  int seeds_passing = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed * 7 + 1);
    const int n_train = 100, n_test = 200, n = n_train + n_test;
    MatrixXd x(n, 2);
    for (int i = 0; i < n; ++i) {
      x(i, 0) = rng.uniform(-1.5, 1.5);
      x(i, 1) = rng.uniform(-1.5, 1.5);
    }
    VectorXd f = sample_gp_function(truth, x, rng);
    VectorXd y_train = f.head(n_train);
    for (int i = 0; i < n_train; ++i) y_train(i) += std::sqrt(truth.noise_var) * rng.normal();

    GpPosterior post(x.topRows(n_train), y_train, truth);
    int covered = 0;
    for (int i = 0; i < n_test; ++i) {
      auto [m, v] = post.predict(x.row(n_train + i).transpose());
      if (std::abs(f(n_train + i) - m) <= 3.0 * std::sqrt(v)) ++covered;
    }
    if (covered >= static_cast<int>(0.95 * n_test)) ++seeds_passing;
  }
  CHECK(seeds_passing >= 4);
}

TEST_CASE("GP contrast CI on symmetric and degenerate data") {
  GpConfig cfg;
  Rng rng(23);

  Dataset mirrored(2);
  for (int i = 0; i < 12; ++i) {
    VectorXd x(2);
    x << rng.uniform(-1, 1), rng.uniform(-1, 1);
    double r = rng.normal();
    mirrored.add({x, Arm::plus, r});
    mirrored.add({x, Arm::minus, r});
  }
  GpContrastEstimator est(cfg);
  Rng fit_rng(5);
  est.fit(mirrored, fit_rng);
  VectorXd q(2);
  q << 0.1, -0.2;
  ContrastEstimate ce = est.estimate(q);
  CHECK(ce.f_hat == Catch::Approx(0.0).margin(1e-9));
  CHECK(std::isfinite(ce.delta));

  // no data at all: prior bands 3*sqrt(gamma0) per arm
  Dataset empty(2);
  GpContrastEstimator prior_est(cfg);
  prior_est.fit(empty, fit_rng);
  ContrastEstimate pe = prior_est.estimate(q);
  CHECK(pe.f_hat == 0.0);
  CHECK(pe.delta == Catch::Approx(6.0 * std::sqrt(cfg.prior_signal_var)));

  // an arm with some data but fewer than three points is a sentinel
  Dataset thin(2);
  thin.add({q, Arm::plus, 1.0});
  thin.add({q, Arm::minus, 1.0});
  thin.add({q, Arm::minus, 2.0});
  thin.add({q, Arm::minus, 3.0});
  GpContrastEstimator thin_est(cfg);
  thin_est.fit(thin, fit_rng);
  ContrastEstimate te = thin_est.estimate(q);
  CHECK(std::isinf(te.delta));
  CHECK(te.f_hat == 0.0);
  CHECK(te.contains_zero());
}

TEST_CASE("GP contrast tracks the scenario 1 oracle") {
  auto spec = ScenarioSpec::by_id(1);
  GpConfig cfg;
  cfg.fit.restarts = 1;
  cfg.fit.max_evals = 80;
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    Rng rng(seed);
    Dataset d = sample_rct(spec, 2000, rng);
    GpContrastEstimator est(cfg);
    Rng fit_rng(seed + 100);
    est.fit(d, fit_rng);
    double total = 0.0;
    int count = 0;
    for (int i = 0; i < 10; ++i) {
      for (int j = 0; j < 10; ++j) {
        VectorXd x(2);
        x << -0.9 + 0.2 * i, -0.9 + 0.2 * j;
        total += std::abs(est.contrast_point(x) - spec.contrast(x));
        ++count;
      }
    }
    CHECK(total / count < 0.25);
  }
}
