#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>

namespace actrial {

struct NotPositiveDefinite : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Diagonal jitter ladder for near-singular Gram matrices: eps * mean(diag)
// added to the diagonal, eps escalating by `factor` from `initial` to `max`.
struct JitterPolicy {
  double initial = 1e-10;
  double max = 1e-4;
  double factor = 10.0;
};

class CholeskyFactor {
 public:
  CholeskyFactor(Eigen::MatrixXd lower, double jitter)
      : lower_(std::move(lower)), jitter_(jitter) {}

  const Eigen::MatrixXd& lower() const { return lower_; }
  double jitter_used() const { return jitter_; }
  Eigen::Index size() const { return lower_.rows(); }

  double log_det() const {
    double s = 0.0;
    for (Eigen::Index i = 0; i < lower_.rows(); ++i) s += std::log(lower_(i, i));
    return 2.0 * s;
  }

  /// Solves (L L^T) z = b.
  Eigen::VectorXd solve(const Eigen::VectorXd& b) const {
    Eigen::VectorXd y = lower_.triangularView<Eigen::Lower>().solve(b);
    return lower_.transpose().triangularView<Eigen::Upper>().solve(y);
  }

  Eigen::MatrixXd solve(const Eigen::MatrixXd& b) const {
    Eigen::MatrixXd y = lower_.triangularView<Eigen::Lower>().solve(b);
    return lower_.transpose().triangularView<Eigen::Upper>().solve(y);
  }

  /// Solves L y = b only (useful for ||L^{-1} k||^2 terms).
  Eigen::VectorXd solve_lower(const Eigen::VectorXd& b) const {
    return lower_.triangularView<Eigen::Lower>().solve(b);
  }

 private:
  Eigen::MatrixXd lower_;
  double jitter_;
};

/// Cholesky factorization of a symmetric positive definite matrix.
/// Symmetry is required up to 1e-10 relative to the largest entry; positive
/// definiteness may be rescued by the jitter ladder. Throws
/// NotPositiveDefinite once the ladder is exhausted.
inline CholeskyFactor cholesky(const Eigen::MatrixXd& m, const JitterPolicy& policy = {}) {
  if (m.rows() != m.cols()) throw std::invalid_argument("cholesky: matrix must be square");
  const Eigen::Index n = m.rows();
  if (n == 0) return CholeskyFactor(Eigen::MatrixXd(0, 0), 0.0);

  const double scale = std::max(m.cwiseAbs().maxCoeff(), 1e-300);
  const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-10 * std::max(scale, 1.0)) {
    throw std::invalid_argument("cholesky: matrix not symmetric (asymmetry " +
                                std::to_string(asym) + ")");
  }

  double diag_scale = m.diagonal().cwiseAbs().mean();
  if (!(diag_scale > 0.0)) diag_scale = 1.0;

  double eps = 0.0;
  while (true) {
    Eigen::MatrixXd k = m;
    if (eps > 0.0) k.diagonal().array() += eps * diag_scale;
    Eigen::LLT<Eigen::MatrixXd> llt(k);
    if (llt.info() == Eigen::Success) {
      return CholeskyFactor(llt.matrixL(), eps * diag_scale);
    }
    if (eps == 0.0) {
      eps = policy.initial;
    } else if (eps * policy.factor <= policy.max * (1.0 + 1e-12)) {
      eps *= policy.factor;
    } else {
      throw NotPositiveDefinite("cholesky: pivot <= 0 after max jitter " +
                                std::to_string(policy.max));
    }
  }
}

}  // namespace actrial
