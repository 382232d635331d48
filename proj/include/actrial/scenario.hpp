#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

#include "actrial/dataset.hpp"
#include "actrial/rng.hpp"

namespace actrial {

enum class CovariateLaw { uniform_pm1, sphere3, std_normal };

// Synthetic data-generating processes. Outcomes follow
// R = m0(X) + T0(X, A) + noise, with T0 of the form c(X) * A, so the
// contrast f*(x) = T0(x,+1) - T0(x,-1) = 2 c(x).
class ScenarioSpec {
 public:
  static ScenarioSpec by_id(int id) {
    switch (id) {
      case 1: return ScenarioSpec(1, 2, CovariateLaw::uniform_pm1);
      case 2: return ScenarioSpec(2, 2, CovariateLaw::uniform_pm1);
      case 3: return ScenarioSpec(3, 3, CovariateLaw::sphere3);
      case 4: return ScenarioSpec(4, 8, CovariateLaw::uniform_pm1);
      case 5: return ScenarioSpec(5, 2, CovariateLaw::std_normal);
      case 6: return ScenarioSpec(6, 2, CovariateLaw::std_normal);
      default: throw std::invalid_argument("scenario id must be 1..6, got " + std::to_string(id));
    }
  }

  int id() const { return id_; }
  int dim() const { return dim_; }
  CovariateLaw law() const { return law_; }
  double noise_sd() const { return noise_sd_; }

  double baseline_mean(const Eigen::VectorXd& x) const {
    check_dim(x);
    switch (id_) {
      case 1:
      case 2: return 1.0 + 2.0 * x(0) + x(1);
      case 3:
      case 4: return 1.0 + 2.0 * x(0) + x(1) - x(2);
      case 5: return 1.0 + 2.0 * x(0);
      case 6: return 1.0 + 2.0 * x(0) * x(0) + x(1);
    }
    return 0.0;
  }

  /// Interaction term T0(x, a) = c(x) * a.
  double interaction(const Eigen::VectorXd& x, Arm a) const {
    return interaction_coefficient(x) * arm_value(a);
  }

  /// Contrast f*(x) = E[R|A=+1,x] - E[R|A=-1,x] = 2 c(x).
  double contrast(const Eigen::VectorXd& x) const { return 2.0 * interaction_coefficient(x); }

  /// Optimal rule sign(f*); exact zero maps to the + arm.
  Arm optimal_rule(const Eigen::VectorXd& x) const { return sign_rule(contrast(x)); }

  Eigen::VectorXd sample_covariate(Rng& rng) const {
    Eigen::VectorXd x(dim_);
    switch (law_) {
      case CovariateLaw::uniform_pm1:
        for (int l = 0; l < dim_; ++l) x(l) = rng.uniform(-1.0, 1.0);
        break;
      case CovariateLaw::sphere3: {
        // Rejection sampling in the unit ball, then projection to the sphere.
        double s = 0.0;
        do {
          for (int l = 0; l < 3; ++l) x(l) = rng.uniform(-1.0, 1.0);
          s = x.squaredNorm();
        } while (s > 1.0 || s == 0.0);
        x /= std::sqrt(s);
        break;
      }
      case CovariateLaw::std_normal:
        for (int l = 0; l < dim_; ++l) x(l) = rng.normal();
        break;
    }
    return x;
  }

  Eigen::MatrixXd sample_covariates(int n, Rng& rng) const {
    if (n < 1) throw std::invalid_argument("sample_covariates: n must be >= 1");
    Eigen::MatrixXd m(n, dim_);
    for (int i = 0; i < n; ++i) m.row(i) = sample_covariate(rng);
    return m;
  }

  double sample_outcome(const Eigen::VectorXd& x, Arm a, Rng& rng) const {
    return baseline_mean(x) + interaction(x, a) + noise_sd_ * rng.normal();
  }

 private:
  ScenarioSpec(int id, int dim, CovariateLaw law) : id_(id), dim_(dim), law_(law) {}

  void check_dim(const Eigen::VectorXd& x) const {
    if (static_cast<int>(x.size()) != dim_) {
      throw std::invalid_argument("scenario " + std::to_string(id_) + ": covariate dimension " +
                                  std::to_string(x.size()) + " != " + std::to_string(dim_));
    }
  }

  // c(x) with T0(x, a) = c(x) * a.
  double interaction_coefficient(const Eigen::VectorXd& x) const {
    check_dim(x);
    switch (id_) {
      case 1: return 0.5 * (1.0 - x(0) - x(1));
      case 2: {
        // Written so the contrast 1 - 2(1-r^2)^2 crosses zero on the stated
        // optimal-rule boundary r^2 in {1 -/+ sqrt(2)/2}.
        double r2 = x(0) * x(0) + x(1) * x(1);
        return 0.5 - (1.0 - r2) * (1.0 - r2);
      }
      case 3: return 1.5 * x(0) * x(1) * (1.0 + x(2));
      case 4: {
        double even = 0.0, odd = 0.0;  // 1-based coordinate indexing
        for (int l = 0; l < 8; ++l) {
          if ((l + 1) % 2 == 0) even += x(l);
          else odd += x(l);
        }
        return 0.2 * (even - odd);
      }
      case 5: return 0.5 * (x(0) * x(0) - 0.25);
      case 6: {
        double g = std::log(std::abs(x(1))) + std::sqrt(std::abs(x(0))) - 1.0;
        // x2 = 0 makes the contrast -inf; clamp it to -1e10.
        if (!std::isfinite(g) || g < -2.5e9) g = -2.5e9;
        return 2.0 * g;
      }
    }
    return 0.0;
  }

  int id_;
  int dim_;
  CovariateLaw law_;
  double noise_sd_ = 1.0;
};

/// Plain randomized sample of n subjects (the passive-trial data source).
inline Dataset sample_rct(const ScenarioSpec& spec, int n, Rng& rng) {
  Dataset data(spec.dim());
  data.obs.reserve(n);
  for (int i = 0; i < n; ++i) {
    Observation o;
    o.x = spec.sample_covariate(rng);
    o.arm = rng.bernoulli(0.5) ? Arm::plus : Arm::minus;
    o.outcome = spec.sample_outcome(o.x, o.arm, rng);
    data.add(std::move(o));
  }
  return data;
}

/// The scenario's optimal rule as a Rule handle.
inline Rule oracle_rule(const ScenarioSpec& spec) {
  return [spec](const Eigen::VectorXd& x) { return spec.optimal_rule(x); };
}

}  // namespace actrial
