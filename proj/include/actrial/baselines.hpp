#pragma once

#include <Eigen/Dense>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "actrial/csv.hpp"
#include "actrial/dataset.hpp"
#include "actrial/kernel_estimator.hpp"
#include "actrial/pool.hpp"

namespace actrial {

struct RankDeficient : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// OLS working model R ~ (1, X, A, XA). The induced rule is the sign of the
/// predicted contrast 2 (beta_A + x . beta_XA).
struct LinearItr {
  double intercept = 0.0;
  Eigen::VectorXd beta_x;
  double beta_arm = 0.0;
  Eigen::VectorXd beta_interaction;

  double predict(const Eigen::VectorXd& x, Arm a) const {
    double v = arm_value(a);
    return intercept + beta_x.dot(x) + beta_arm * v + beta_interaction.dot(x) * v;
  }

  double predicted_contrast(const Eigen::VectorXd& x) const {
    return 2.0 * (beta_arm + beta_interaction.dot(x));
  }

  Arm rule(const Eigen::VectorXd& x) const { return sign_rule(predicted_contrast(x)); }

  Rule as_rule() const {
    LinearItr copy = *this;
    return [copy](const Eigen::VectorXd& x) { return copy.rule(x); };
  }
};

inline LinearItr fit_ols_itr(const Dataset& data) {
  const int p = data.dim;
  const long n = static_cast<long>(data.size());
  const int cols = 2 * p + 2;
  if (n < cols) {
    throw std::invalid_argument("fit_ols_itr: need at least 2p+2 = " + std::to_string(cols) +
                                " observations, got " + std::to_string(n));
  }
  Eigen::MatrixXd design(n, cols);
  Eigen::VectorXd r(n);
  for (long i = 0; i < n; ++i) {
    const Observation& o = data.obs[i];
    const double a = arm_value(o.arm);
    design(i, 0) = 1.0;
    design.row(i).segment(1, p) = o.x.transpose();
    design(i, p + 1) = a;
    design.row(i).segment(p + 2, p) = a * o.x.transpose();
    r(i) = o.outcome;
  }

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  Eigen::VectorXd beta;
  if (qr.rank() == cols) {
    beta = qr.solve(r);
  } else {
    // rank-deficient design: ridge fallback
    Eigen::MatrixXd gram = design.transpose() * design;
    gram.diagonal().array() += 1e-8;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
    if (ldlt.info() != Eigen::Success) throw RankDeficient("fit_ols_itr: ridge fallback failed");
    beta = ldlt.solve(design.transpose() * r);
  }
  if (!beta.allFinite()) throw RankDeficient("fit_ols_itr: non-finite coefficients");

  LinearItr itr;
  itr.intercept = beta(0);
  itr.beta_x = beta.segment(1, p);
  itr.beta_arm = beta(p + 1);
  itr.beta_interaction = beta.segment(p + 2, p);
  return itr;
}

// ---- doubly robust (AIPWE) pieces ------------------------------------------

enum class QModelKind { linear, kernel };

/// Fitted working model for Q(x, a) = E[R | X=x, A=a].
class QModel {
 public:
  static QModel fit(const Dataset& data, QModelKind kind, const KernelConfig& kcfg = {}) {
    QModel q;
    q.kind_ = kind;
    q.kcfg_ = kcfg;
    if (kind == QModelKind::linear) {
      q.linear_ = fit_ols_itr(data);
    } else {
      q.data_ = data;
    }
    return q;
  }

  /// A constant-zero working model (the degenerate pure-IPW case).
  static QModel zero() {
    QModel q;
    q.kind_ = QModelKind::linear;
    q.linear_ = LinearItr{};
    q.linear_.beta_x = Eigen::VectorXd::Zero(0);
    q.linear_.beta_interaction = Eigen::VectorXd::Zero(0);
    q.zero_ = true;
    return q;
  }

  double operator()(const Eigen::VectorXd& x, Arm a) const {
    if (zero_) return 0.0;
    if (kind_ == QModelKind::linear) return linear_.predict(x, a);
    try {
      double h = local_bandwidth(data_, x, a, kcfg_);
      return nw_estimate(data_, x, a, h, kcfg_.kernel);
    } catch (const NoArmData&) {
      return 0.0;
    } catch (const ZeroDenominator&) {
      return 0.0;
    }
  }

  QModelKind kind() const { return kind_; }
  const KernelConfig& kernel_config() const { return kcfg_; }

 private:
  QModelKind kind_ = QModelKind::linear;
  LinearItr linear_;
  Dataset data_;
  KernelConfig kcfg_;
  bool zero_ = false;
};

struct AipweContrast {
  std::vector<double> w_plus;    // per-subject AIPWE targets, arm +1
  std::vector<double> w_minus;   // per-subject AIPWE targets, arm -1
  std::vector<double> contrast;  // smoothed E[W+|x] - E[W-|x] on the grid
};

namespace detail {

inline double regress_at(const std::vector<Eigen::VectorXd>& xs, const std::vector<double>& ys,
                         const Eigen::VectorXd& x0, QModelKind kind, const KernelConfig& kcfg) {
  const long n = static_cast<long>(xs.size());
  const int p = static_cast<int>(x0.size());
  if (kind == QModelKind::linear) {
    Eigen::MatrixXd design(n, p + 1);
    Eigen::VectorXd y(n);
    for (long i = 0; i < n; ++i) {
      design(i, 0) = 1.0;
      design.row(i).tail(p) = xs[i].transpose();
      y(i) = ys[i];
    }
    Eigen::MatrixXd gram = design.transpose() * design;
    gram.diagonal().array() += 1e-10 * std::max(1.0, gram.diagonal().maxCoeff());
    Eigen::VectorXd beta = Eigen::LDLT<Eigen::MatrixXd>(gram).solve(design.transpose() * y);
    Eigen::VectorXd q(p + 1);
    q(0) = 1.0;
    q.tail(p) = x0;
    return beta.dot(q);
  }
  // kernel regression of W on X over all subjects
  std::vector<std::pair<double, double>> pairs(n);
  std::vector<double> dist(n);
  for (long i = 0; i < n; ++i) {
    double d = (xs[i] - x0).norm();
    pairs[i] = {d, ys[i]};
    dist[i] = d;
  }
  std::sort(dist.begin(), dist.end());
  double h = detail::bandwidth_from_sorted_distances(dist, kcfg.lipschitz, kcfg.c1);
  return detail::nw_from_pairs(pairs, h, kcfg.kernel);
}

}  // namespace detail

/// Per-subject AIPWE contrast targets W_a = I(A=a)(R - Q(X,a))/pi(a) + Q(X,a)
/// and the smoothed pointwise contrast on a grid.
inline AipweContrast aipwe_contrast(const Dataset& data, const QModel& q,
                                    const Eigen::MatrixXd& x_grid) {
  AipweContrast out;
  const long n = static_cast<long>(data.size());
  out.w_plus.resize(n);
  out.w_minus.resize(n);
  std::vector<Eigen::VectorXd> xs(n);
  for (long i = 0; i < n; ++i) {
    const Observation& o = data.obs[i];
    xs[i] = o.x;
    double qp = q(o.x, Arm::plus);
    double qm = q(o.x, Arm::minus);
    out.w_plus[i] = (o.arm == Arm::plus ? (o.outcome - qp) / data.pi(Arm::plus) : 0.0) + qp;
    out.w_minus[i] = (o.arm == Arm::minus ? (o.outcome - qm) / data.pi(Arm::minus) : 0.0) + qm;
  }
  out.contrast.resize(x_grid.rows());
  for (long g = 0; g < x_grid.rows(); ++g) {
    Eigen::VectorXd x0 = x_grid.row(g).transpose();
    double ep = detail::regress_at(xs, out.w_plus, x0, q.kind(), q.kernel_config());
    double em = detail::regress_at(xs, out.w_minus, x0, q.kind(), q.kernel_config());
    out.contrast[g] = ep - em;
  }
  return out;
}

/// Doubly robust value estimate of a rule.
inline double aipwe_value(const Dataset& data, const Rule& rule, const QModel& q) {
  KahanMean acc;
  for (const auto& o : data.obs) {
    Arm d = rule(o.x);
    double concordant = (o.arm == d) ? 1.0 : 0.0;
    double pi_realized = data.pi(o.arm);
    double pi_recommended = data.pi(d);
    double qv = q(o.x, d);
    acc.add(o.outcome * concordant / pi_realized -
            (concordant - pi_recommended) / pi_recommended * qv);
  }
  return acc.mean();
}

/// External-rule import: CSV with covariate columns and an `arm` column; the
/// resulting rule answers with the arm of the nearest listed point.
inline Rule load_external_rule(std::istream& in) {
  std::string line;
  long line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty() || line[0] == '#') continue;
    header = split_csv_line(line);
    break;
  }
  if (header.empty()) throw EmptyPool("external rule file has no header");
  int arm_col = -1;
  std::vector<int> cov_cols;
  for (int i = 0; i < static_cast<int>(header.size()); ++i) {
    if (trim(header[i]) == "arm") arm_col = i;
    else cov_cols.push_back(i);
  }
  if (arm_col < 0) throw MalformedRow(line_no, "missing column 'arm'");

  auto points = std::make_shared<std::vector<std::pair<Eigen::VectorXd, Arm>>>();
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty() || line[0] == '#') continue;
    auto fields = split_csv_line(line);
    if (fields.size() != header.size()) throw MalformedRow(line_no, "wrong field count");
    Eigen::VectorXd x(cov_cols.size());
    for (std::size_t j = 0; j < cov_cols.size(); ++j) {
      auto v = parse_double(fields[cov_cols[j]]);
      if (!v) throw MalformedRow(line_no, "bad covariate '" + fields[cov_cols[j]] + "'");
      x(j) = *v;
    }
    auto a = parse_double(fields[arm_col]);
    if (!a || (*a != 1.0 && *a != -1.0)) throw UnknownArmValue(line_no, fields[arm_col]);
    points->emplace_back(std::move(x), *a == 1.0 ? Arm::plus : Arm::minus);
  }
  if (points->empty()) throw EmptyPool("external rule file has no rows");

  return [points](const Eigen::VectorXd& x) {
    double best = kInfinity;
    Arm arm = Arm::plus;
    for (const auto& [px, pa] : *points) {
      double d = (px - x).squaredNorm();
      if (d < best) {
        best = d;
        arm = pa;
      }
    }
    return arm;
  };
}

inline Rule load_external_rule(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open external rule file: " + path);
  return load_external_rule(in);
}

}  // namespace actrial
