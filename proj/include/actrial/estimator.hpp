#pragma once

#include <Eigen/Dense>
#include <limits>
#include <memory>
#include <string>

#include "actrial/dataset.hpp"
#include "actrial/rng.hpp"

namespace actrial {

constexpr double kInfinity = std::numeric_limits<double>::infinity();

struct ArmDiagnostic {
  double scale = std::numeric_limits<double>::quiet_NaN();  // bandwidth or posterior sd
  long n = 0;  // neighbors within bandwidth / training size
};

/// Pointwise contrast estimate with confidence radius; the screening
/// primitive. delta = +inf is the sentinel for "no information yet" and
/// forces enrollment.
struct ContrastEstimate {
  double f_hat = 0.0;
  double delta = kInfinity;
  ArmDiagnostic plus;
  ArmDiagnostic minus;

  double lower() const { return f_hat - delta; }
  double upper() const { return f_hat + delta; }
  bool contains_zero() const { return lower() <= 0.0 && 0.0 <= upper(); }
};

enum class EstimatorKind { al_bv, al_gp };

inline std::string estimator_name(EstimatorKind k) {
  return k == EstimatorKind::al_bv ? "AL-BV" : "AL-GP";
}

/// Common surface of the two confidence-interval backends. `fit` is called on
/// the cumulative enrolled sample at stage boundaries; `estimate` must be
/// pure and safe for concurrent use afterwards.
class ContrastEstimator {
 public:
  virtual ~ContrastEstimator() = default;
  virtual void fit(const Dataset& data, Rng& rng) = 0;
  virtual ContrastEstimate estimate(const Eigen::VectorXd& x0) const = 0;
  virtual std::string name() const = 0;

  /// Point estimate only; backends override when that is cheaper than a full
  /// interval (rule evaluation on large test grids).
  virtual double contrast_point(const Eigen::VectorXd& x0) const { return estimate(x0).f_hat; }
};

}  // namespace actrial
