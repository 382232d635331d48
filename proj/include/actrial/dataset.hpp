#pragma once

#include <Eigen/Dense>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace actrial {

enum class Arm : int { minus = -1, plus = +1 };

inline int arm_value(Arm a) { return static_cast<int>(a); }
inline Arm other_arm(Arm a) { return a == Arm::plus ? Arm::minus : Arm::plus; }

inline Arm arm_from_int(int v) {
  if (v == 1) return Arm::plus;
  if (v == -1) return Arm::minus;
  throw std::invalid_argument("arm value must be -1 or 1, got " + std::to_string(v));
}

/// Sign convention used throughout: an exact zero maps to the + arm.
inline Arm sign_rule(double v) { return v >= 0.0 ? Arm::plus : Arm::minus; }

/// An enrolled subject: covariates, assigned arm, observed outcome.
struct Observation {
  Eigen::VectorXd x;
  Arm arm = Arm::plus;
  double outcome = 0.0;
};

enum class OutcomeDirection { maximize, minimize };

struct Dataset {
  std::vector<Observation> obs;
  int dim = 0;
  double propensity = 0.5;  // P(arm == plus), constant randomization
  OutcomeDirection direction = OutcomeDirection::maximize;

  Dataset() = default;
  explicit Dataset(int p) : dim(p) {}

  std::size_t size() const { return obs.size(); }
  bool empty() const { return obs.empty(); }

  void add(Observation o) {
    if (dim == 0 && obs.empty()) dim = static_cast<int>(o.x.size());
    if (static_cast<int>(o.x.size()) != dim) {
      throw std::invalid_argument("Dataset::add: covariate dimension mismatch");
    }
    obs.push_back(std::move(o));
  }

  /// Probability of the given arm under the randomization scheme.
  double pi(Arm a) const { return a == Arm::plus ? propensity : 1.0 - propensity; }

  std::size_t arm_count(Arm a) const {
    std::size_t c = 0;
    for (const auto& o : obs) c += (o.arm == a);
    return c;
  }
};

/// A treatment rule: covariates -> arm.
using Rule = std::function<Arm(const Eigen::VectorXd&)>;

inline Rule constant_rule(Arm a) {
  return [a](const Eigen::VectorXd&) { return a; };
}

}  // namespace actrial
