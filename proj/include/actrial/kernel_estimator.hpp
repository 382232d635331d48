#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "actrial/dataset.hpp"
#include "actrial/estimator.hpp"

namespace actrial {

struct NoArmData : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ZeroDenominator : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TooFewPoints : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Kernel shape as a function of the scaled distance s = ||x0 - x||/h.
/// The default K(u) = max(0, 2 - ||u||) is nonnegative, has support radius 2,
/// Lipschitz constant 1, and is >= 1 on the unit ball.
struct KernelShape {
  double support_radius = 2.0;   // R_K
  double lipschitz = 1.0;        // L_K
  double unit_ball_floor = 1.0;  // l_K
  double (*eval)(double) = nullptr;

  double operator()(double s) const { return eval ? eval(s) : (s < 2.0 ? 2.0 - s : 0.0); }
};

struct KernelConfig {
  double lipschitz = 1.0;  // L, Lipschitz bound on the arm means
  double c1 = 1.0;         // bandwidth constant C1(K, P)
  double t = 0.5;          // confidence parameter in delta = t * L * h
  KernelShape kernel{};
  bool standardize = false;  // z-score covariates before distances
};

namespace detail {

/// Smallest h with L^2 h^2 >= C1 / count(h), where count(h) is the number of
/// sorted distances <= h. The count is a step function, so between steps the
/// minimal feasible h is sqrt(C1/count)/L clipped to the step's interval; the
/// first step holding a feasible point gives the infimum (which is attained).
inline double bandwidth_from_sorted_distances(const std::vector<double>& dist, double lipschitz,
                                              double c1) {
  const std::size_t m = dist.size();
  if (m == 0) throw NoArmData("no observations for this arm");
  std::size_t i = 0;
  while (i < m) {
    std::size_t j = i;
    while (j + 1 < m && dist[j + 1] == dist[i]) ++j;
    const double count = static_cast<double>(j + 1);
    const double h_required = std::sqrt(c1 / count) / lipschitz;
    const double h_candidate = std::max(dist[i], h_required);
    const double next = (j + 1 < m) ? dist[j + 1] : kInfinity;
    if (h_candidate < next) return h_candidate;
    i = j + 1;
  }
  return dist.back();  // unreachable: the last interval is unbounded
}

inline double nw_from_pairs(const std::vector<std::pair<double, double>>& dist_value, double h,
                            const KernelShape& shape) {
  if (!(h > 0.0)) throw std::invalid_argument("nw_estimate: bandwidth must be positive");
  double num = 0.0, den = 0.0;
  for (const auto& [d, v] : dist_value) {
    double w = shape(d / h);
    num += w * v;
    den += w;
  }
  if (den <= 0.0) {
    throw ZeroDenominator("no observation within kernel support radius " +
                          std::to_string(shape.support_radius * h));
  }
  return num / den;
}

}  // namespace detail

/// Adaptive local bandwidth for one arm at x0 (the bias-variance matching
/// rule). Throws NoArmData when the arm has no observations; the caller
/// treats the radius as +inf, which forces enrollment.
inline double local_bandwidth(const Dataset& data, const Eigen::VectorXd& x0, Arm arm,
                              const KernelConfig& cfg) {
  std::vector<double> dist;
  dist.reserve(data.size());
  for (const auto& o : data.obs) {
    if (o.arm == arm) dist.push_back((o.x - x0).norm());
  }
  std::sort(dist.begin(), dist.end());
  return detail::bandwidth_from_sorted_distances(dist, cfg.lipschitz, cfg.c1);
}

/// Nadaraya-Watson estimate of the arm mean at x0 with bandwidth h.
inline double nw_estimate(const Dataset& data, const Eigen::VectorXd& x0, Arm arm, double h,
                          const KernelShape& shape = {}) {
  std::vector<std::pair<double, double>> pairs;
  pairs.reserve(data.size());
  for (const auto& o : data.obs) {
    if (o.arm == arm) pairs.emplace_back((o.x - x0).norm(), o.outcome);
  }
  return detail::nw_from_pairs(pairs, h, shape);
}

/// Contrast estimate with confidence radius delta = t * L * max(h+, h-),
/// each arm smoothed at its own local bandwidth.
inline ContrastEstimate contrast_ci(const Dataset& data, const Eigen::VectorXd& x0,
                                    const KernelConfig& cfg) {
  ContrastEstimate est;
  double h[2], mean[2];
  long count[2];
  const Arm arms[2] = {Arm::plus, Arm::minus};
  for (int k = 0; k < 2; ++k) {
    std::vector<std::pair<double, double>> pairs;
    for (const auto& o : data.obs) {
      if (o.arm == arms[k]) pairs.emplace_back((o.x - x0).norm(), o.outcome);
    }
    if (pairs.empty()) {
      est.f_hat = 0.0;
      est.delta = kInfinity;
      est.plus.n = static_cast<long>(data.arm_count(Arm::plus));
      est.minus.n = static_cast<long>(data.arm_count(Arm::minus));
      return est;
    }
    std::vector<double> dist(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) dist[i] = pairs[i].first;
    std::sort(dist.begin(), dist.end());
    h[k] = detail::bandwidth_from_sorted_distances(dist, cfg.lipschitz, cfg.c1);
    mean[k] = detail::nw_from_pairs(pairs, h[k], cfg.kernel);
    count[k] = static_cast<long>(std::upper_bound(dist.begin(), dist.end(), h[k]) - dist.begin());
  }
  est.f_hat = mean[0] - mean[1];
  est.delta = cfg.t * cfg.lipschitz * std::max(h[0], h[1]);
  est.plus = {h[0], count[0]};
  est.minus = {h[1], count[1]};
  return est;
}

/// Theoretical stage bandwidth h_k = [(log(N/a) + d log(N_k)) / N_k]^{1/(d+2)}
/// and band size delta_k = 4 C h_k.
struct StagedBandwidth {
  double h_k = 0.0;
  double delta_k = 0.0;
  long stage_n = 0;
  int d = 0;
  long total_n = 0;
  double alpha = 0.0;
  double c = 0.0;
};

inline StagedBandwidth staged_bandwidth(long n_k, int d, long n, double alpha, double c) {
  if (n_k < 2) throw std::invalid_argument("staged_bandwidth: N_k must be >= 2");
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("staged_bandwidth: alpha in (0,1)");
  if (d < 1) throw std::invalid_argument("staged_bandwidth: d must be >= 1");
  StagedBandwidth out;
  out.stage_n = n_k;
  out.d = d;
  out.total_n = n;
  out.alpha = alpha;
  out.c = c;
  const double nk = static_cast<double>(n_k);
  out.h_k = std::pow((std::log(static_cast<double>(n) / alpha) + d * std::log(nk)) / nk,
                     1.0 / (d + 2));
  out.delta_k = 4.0 * c * out.h_k;
  return out;
}

/// Intrinsic dimension by local SVD: for each anchor, SVD of the centered
/// cloud of its k nearest neighbors; the estimate is the median count of
/// singular values above `sv_fraction` of the largest.
inline int intrinsic_dimension(const Eigen::MatrixXd& points, int k_neighbors,
                               int max_anchors = 100, double sv_fraction = 0.1) {
  const long n = points.rows();
  const int p = static_cast<int>(points.cols());
  if (k_neighbors < p + 1) {
    throw std::invalid_argument("intrinsic_dimension: k_neighbors must be >= dimension+1");
  }
  if (n < k_neighbors + 1) throw TooFewPoints("intrinsic_dimension: need >= k_neighbors+1 points");

  const int m = static_cast<int>(std::min<long>(max_anchors, n));
  std::vector<int> counts;
  counts.reserve(m);
  std::vector<std::pair<double, long>> dist(n);
  for (int a = 0; a < m; ++a) {
    const long anchor = static_cast<long>((static_cast<double>(a) * n) / m);
    for (long i = 0; i < n; ++i) {
      dist[i] = {(points.row(i) - points.row(anchor)).norm(), i};
    }
    std::nth_element(dist.begin(), dist.begin() + k_neighbors, dist.end());
    Eigen::MatrixXd cloud(k_neighbors + 1, p);
    for (int i = 0; i <= k_neighbors; ++i) cloud.row(i) = points.row(dist[i].second);
    cloud.rowwise() -= cloud.colwise().mean();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(cloud);
    const auto& sv = svd.singularValues();
    int c = 0;
    if (sv.size() > 0 && sv(0) > 0.0) {
      for (Eigen::Index i = 0; i < sv.size(); ++i) c += (sv(i) > sv_fraction * sv(0));
    }
    counts.push_back(c);
  }
  std::nth_element(counts.begin(), counts.begin() + counts.size() / 2, counts.end());
  return counts[counts.size() / 2];
}

/// AL-BV backend: screening intervals from per-arm Nadaraya-Watson estimates
/// with adaptive local bandwidths. Fitting only snapshots (and optionally
/// standardizes) the cumulative sample; all work happens per query.
class KernelContrastEstimator : public ContrastEstimator {
 public:
  explicit KernelContrastEstimator(KernelConfig cfg = {}) : cfg_(cfg) {}

  void fit(const Dataset& data, Rng&) override {
    data_ = data;
    if (cfg_.standardize && !data.empty()) {
      mean_.resize(data.dim);
      scale_.resize(data.dim);
      Eigen::VectorXd sum = Eigen::VectorXd::Zero(data.dim);
      for (const auto& o : data.obs) sum += o.x;
      mean_ = sum / static_cast<double>(data.size());
      Eigen::VectorXd ss = Eigen::VectorXd::Zero(data.dim);
      for (const auto& o : data.obs) ss += (o.x - mean_).cwiseAbs2();
      for (int j = 0; j < data.dim; ++j) {
        double sd = std::sqrt(ss(j) / static_cast<double>(data.size()));
        scale_(j) = sd > 1e-12 ? sd : 1.0;
      }
      for (auto& o : data_.obs) o.x = (o.x - mean_).cwiseQuotient(scale_);
    }
  }

  ContrastEstimate estimate(const Eigen::VectorXd& x0) const override {
    if (data_.empty()) return ContrastEstimate{};
    Eigen::VectorXd q = x0;
    if (cfg_.standardize && mean_.size() == x0.size()) {
      q = (x0 - mean_).cwiseQuotient(scale_);
    }
    return contrast_ci(data_, q, cfg_);
  }

  std::string name() const override { return "AL-BV"; }
  const KernelConfig& config() const { return cfg_; }

 private:
  KernelConfig cfg_;
  Dataset data_;
  Eigen::VectorXd mean_, scale_;
};

}  // namespace actrial
