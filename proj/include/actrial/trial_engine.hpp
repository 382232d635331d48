#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "actrial/csv.hpp"
#include "actrial/dataset.hpp"
#include "actrial/estimator.hpp"
#include "actrial/gp_estimator.hpp"
#include "actrial/kernel_estimator.hpp"
#include "actrial/pool.hpp"
#include "actrial/scenario.hpp"

namespace actrial {

struct TrialConfig {
  int total_budget = 100;      // N, total randomization budget
  int initial_size = 0;        // N0; 0 derives 2 * floor(sqrt(N))
  double alpha = 0.05;
  EstimatorKind estimator = EstimatorKind::al_gp;
  KernelConfig kernel{};
  GpConfig gp{};
  long max_screened = 0;       // 0: 100 * N in scenario mode, pool size in replay
  std::uint64_t seed = 0;
  bool stage_only_fit = false; // fit each stage on its own enrollees only

  int derived_initial() const {
    int n0 = initial_size > 0
                 ? initial_size
                 : 2 * static_cast<int>(std::floor(std::sqrt(static_cast<double>(total_budget))));
    return std::min(n0, total_budget);
  }
};

struct StageRecord {
  int stage = 0;
  long quota = 0;     // candidates examined in this stage (doubles per stage)
  long enrolled = 0;
  long rejected = 0;
  long budget_left = 0;
  int estimator_version = -1;  // version used while screening this stage

  long screened() const { return enrolled + rejected; }
};

struct AuditRow {
  int stage = 0;
  long index = 0;  // running candidate index across the trial
  Eigen::VectorXd x;
  double f_hat = 0.0;
  double delta = kInfinity;
  bool enrolled = false;
  int arm = 0;  // 0 when the candidate was never randomized
  double outcome = std::numeric_limits<double>::quiet_NaN();
};

enum class StopReason { budget_exhausted, empty_active_set, source_exhausted, screen_cap_reached };

inline std::string stop_reason_name(StopReason r) {
  switch (r) {
    case StopReason::budget_exhausted: return "budget_exhausted";
    case StopReason::empty_active_set: return "empty_active_set";
    case StopReason::source_exhausted: return "source_exhausted";
    case StopReason::screen_cap_reached: return "screen_cap_reached";
  }
  return "unknown";
}

struct TrialResult {
  TrialConfig config;
  std::vector<StageRecord> stages;
  Dataset enrolled_data;
  std::shared_ptr<ContrastEstimator> estimator;
  long total_screened = 0;
  long total_enrolled = 0;
  long total_rejected = 0;
  std::vector<AuditRow> audit;
  StopReason reason = StopReason::budget_exhausted;
  int final_estimator_version = -1;

  /// The learned rule: sign of the final contrast estimate, ties to +1.
  Rule rule() const {
    auto est = estimator;
    return [est](const Eigen::VectorXd& x) { return sign_rule(est->contrast_point(x)); };
  }
};

enum class Decision { enroll, reject };

/// Screening test of the practical sequential step: enroll whenever the
/// confidence interval for the contrast still contains zero.
inline std::pair<Decision, ContrastEstimate> screen_candidate(const ContrastEstimator& estimator,
                                                              const Eigen::VectorXd& x) {
  ContrastEstimate est = estimator.estimate(x);
  return {est.contains_zero() ? Decision::enroll : Decision::reject, est};
}

inline std::unique_ptr<ContrastEstimator> make_estimator(const TrialConfig& cfg) {
  if (cfg.estimator == EstimatorKind::al_bv) {
    return std::make_unique<KernelContrastEstimator>(cfg.kernel);
  }
  return std::make_unique<GpContrastEstimator>(cfg.gp);
}

/// Unconditional initial stage: N0 subjects recruited from the scenario,
/// randomized with equal probability, outcomes observed.
inline std::pair<Dataset, StageRecord> run_initial_stage(const TrialConfig& cfg,
                                                         const ScenarioSpec& spec, Rng& rng) {
  const int n0 = cfg.derived_initial();
  Dataset s0(spec.dim());
  for (int i = 0; i < n0; ++i) {
    Observation o;
    o.x = spec.sample_covariate(rng);
    o.arm = rng.bernoulli(0.5) ? Arm::plus : Arm::minus;
    o.outcome = spec.sample_outcome(o.x, o.arm, rng);
    s0.add(std::move(o));
  }
  StageRecord rec;
  rec.stage = 0;
  rec.quota = n0;
  rec.enrolled = n0;
  rec.rejected = 0;
  rec.budget_left = cfg.total_budget - n0;
  rec.estimator_version = -1;
  return {std::move(s0), rec};
}

namespace detail {

struct Candidate {
  Eigen::VectorXd x;
  bool fixed = false;  // pool candidates carry their realized arm/outcome
  Arm arm = Arm::plus;
  double outcome = 0.0;
};

class CandidateSource {
 public:
  virtual ~CandidateSource() = default;
  virtual std::optional<Candidate> next() = 0;
  virtual double realize_outcome(const Eigen::VectorXd& x, Arm a) = 0;
  virtual bool infinite() const = 0;
};

class ScenarioSource : public CandidateSource {
 public:
  ScenarioSource(const ScenarioSpec& spec, Rng rng) : spec_(spec), rng_(rng) {}
  std::optional<Candidate> next() override {
    Candidate c;
    c.x = spec_.sample_covariate(rng_);
    return c;
  }
  double realize_outcome(const Eigen::VectorXd& x, Arm a) override {
    return spec_.sample_outcome(x, a, rng_);
  }
  bool infinite() const override { return true; }

 private:
  ScenarioSpec spec_;
  Rng rng_;
};

class PoolSource : public CandidateSource {
 public:
  PoolSource(const Dataset& pool, std::vector<std::size_t> order)
      : pool_(pool), order_(std::move(order)) {}
  std::optional<Candidate> next() override {
    if (pos_ >= order_.size()) return std::nullopt;
    const Observation& o = pool_.obs[order_[pos_++]];
    Candidate c;
    c.x = o.x;
    c.fixed = true;
    c.arm = o.arm;
    c.outcome = o.outcome;
    return c;
  }
  double realize_outcome(const Eigen::VectorXd&, Arm) override {
    throw std::logic_error("pool candidates carry fixed outcomes");
  }
  bool infinite() const override { return false; }

 private:
  const Dataset& pool_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

/// Staged screening loop shared by scenario trials and pool replay. Stage
/// quotas are candidates examined and double each stage; the budget counts
/// enrollments. In scenario mode a stage whose quota produced no enrollment
/// keeps screening up to 4x quota; if still nothing enrolls, the active set
/// is treated as empty and the trial stops.
inline TrialResult run_engine(const TrialConfig& cfg, CandidateSource& source, Dataset initial,
                              std::vector<AuditRow> audit, Rng& arm_rng, Rng& fit_rng,
                              long max_screened) {
  TrialResult result;
  result.config = cfg;

  Dataset sample = std::move(initial);
  const long n0 = static_cast<long>(sample.size());
  long budget_left = cfg.total_budget - n0;
  long total_screened = n0;
  long audit_index = n0;

  StageRecord initial_rec;
  initial_rec.stage = 0;
  initial_rec.quota = cfg.derived_initial();
  initial_rec.enrolled = n0;
  initial_rec.rejected = 0;
  initial_rec.budget_left = budget_left;
  initial_rec.estimator_version = -1;
  result.stages.push_back(initial_rec);

  std::shared_ptr<ContrastEstimator> estimator = make_estimator(cfg);
  int version = -1;
  auto refit = [&](const Dataset& d) {
    if (!d.empty()) {
      estimator->fit(d, fit_rng);
      ++version;
    }
  };
  refit(sample);

  std::optional<StopReason> stop;
  long quota = std::max<long>(1, cfg.derived_initial());
  int stage = 0;
  while (budget_left > 0) {
    ++stage;
    quota *= 2;
    long stage_enrolled = 0, stage_rejected = 0, stage_screened = 0;
    Dataset stage_data(sample.dim);
    const int version_used = version;

    while (true) {
      if (budget_left <= 0) break;
      const bool quota_met = stage_screened >= quota;
      if (quota_met && (stage_enrolled > 0 || !source.infinite())) break;
      if (stage_screened >= 4 * quota) break;
      if (max_screened > 0 && total_screened >= max_screened) {
        stop = StopReason::screen_cap_reached;
        break;
      }
      std::optional<Candidate> c = source.next();
      if (!c) {
        stop = StopReason::source_exhausted;
        break;
      }
      ++stage_screened;
      ++total_screened;
      ContrastEstimate ce = estimator->estimate(c->x);
      AuditRow row;
      row.stage = stage;
      row.index = audit_index++;
      row.x = c->x;
      row.f_hat = ce.f_hat;
      row.delta = ce.delta;
      row.enrolled = ce.contains_zero();
      if (row.enrolled) {
        Arm a = c->fixed ? c->arm : (arm_rng.bernoulli(0.5) ? Arm::plus : Arm::minus);
        double r = c->fixed ? c->outcome : source.realize_outcome(c->x, a);
        row.arm = arm_value(a);
        row.outcome = r;
        sample.add({c->x, a, r});
        stage_data.add({c->x, a, r});
        ++stage_enrolled;
        --budget_left;
      } else {
        ++stage_rejected;
      }
      audit.push_back(std::move(row));
    }

    StageRecord rec;
    rec.stage = stage;
    rec.quota = quota;
    rec.enrolled = stage_enrolled;
    rec.rejected = stage_rejected;
    rec.budget_left = budget_left;
    rec.estimator_version = version_used;
    result.stages.push_back(rec);

    if (!stop && source.infinite() && stage_enrolled == 0 && stage_screened >= 4 * quota) {
      stop = StopReason::empty_active_set;
    }
    refit(cfg.stage_only_fit ? stage_data : sample);
    if (stop) break;
  }

  result.enrolled_data = std::move(sample);
  result.estimator = estimator;
  result.total_enrolled = static_cast<long>(result.enrolled_data.size());
  result.total_screened = total_screened;
  result.total_rejected = total_screened - result.total_enrolled;
  result.audit = std::move(audit);
  result.reason = stop.value_or(StopReason::budget_exhausted);
  result.final_estimator_version = version;
  return result;
}

}  // namespace detail

/// Full active trial against a synthetic scenario (Algorithm 1 realized as
/// the sequential accept/reject loop).
inline TrialResult run_active_trial(const TrialConfig& cfg, const ScenarioSpec& spec) {
  Rng root(cfg.seed);
  Rng cov_rng = root.child(1);
  Rng arm_rng = root.child(2);
  Rng fit_rng = root.child(3);

  detail::ScenarioSource source(spec, cov_rng);
  const int n0 = cfg.derived_initial();
  Dataset s0(spec.dim());
  std::vector<AuditRow> audit;
  for (int i = 0; i < n0; ++i) {
    auto c = source.next();
    Arm a = arm_rng.bernoulli(0.5) ? Arm::plus : Arm::minus;
    double r = source.realize_outcome(c->x, a);
    s0.add({c->x, a, r});
    AuditRow row;
    row.stage = 0;
    row.index = i;
    row.x = c->x;
    row.f_hat = 0.0;
    row.delta = kInfinity;
    row.enrolled = true;
    row.arm = arm_value(a);
    row.outcome = r;
    audit.push_back(std::move(row));
  }
  long cap = cfg.max_screened > 0 ? cfg.max_screened : 100L * cfg.total_budget;
  return detail::run_engine(cfg, source, std::move(s0), std::move(audit), arm_rng, fit_rng, cap);
}

/// Finite-pool replay: a uniform random subset of size min(N0, pool) forms
/// the initial sample; the remaining subjects are examined in file order and
/// enrolled with their recorded arm and outcome until the budget is spent or
/// the pool ends.
inline TrialResult replay_pool(const TrialConfig& cfg, const Dataset& pool) {
  if (pool.empty()) throw EmptyPool("replay_pool: empty pool");
  Rng root(cfg.seed);
  Rng subset_rng = root.child(1);
  Rng arm_rng = root.child(2);  // unused draws are kept for stream symmetry
  Rng fit_rng = root.child(3);

  const std::size_t n0 = std::min<std::size_t>(cfg.derived_initial(), pool.size());
  std::vector<std::size_t> chosen = subset_rng.sample_without_replacement(pool.size(), n0);
  std::vector<bool> taken(pool.size(), false);
  Dataset s0(pool.dim);
  s0.propensity = pool.propensity;
  s0.direction = pool.direction;
  std::vector<AuditRow> audit;
  long idx = 0;
  for (std::size_t i : chosen) {
    taken[i] = true;
    const Observation& o = pool.obs[i];
    s0.add(o);
    AuditRow row;
    row.stage = 0;
    row.index = idx++;
    row.x = o.x;
    row.f_hat = 0.0;
    row.delta = kInfinity;
    row.enrolled = true;
    row.arm = arm_value(o.arm);
    row.outcome = o.outcome;
    audit.push_back(std::move(row));
  }
  std::vector<std::size_t> order;
  order.reserve(pool.size() - n0);
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (!taken[i]) order.push_back(i);
  }
  detail::PoolSource source(pool, std::move(order));
  // the pool itself caps screening; an explicit max_screened still applies
  TrialResult result = detail::run_engine(cfg, source, std::move(s0), std::move(audit), arm_rng,
                                          fit_rng, cfg.max_screened);
  result.enrolled_data.propensity = pool.propensity;
  result.enrolled_data.direction = pool.direction;
  return result;
}

// ---- canonical serialization ----------------------------------------------

inline nlohmann::ordered_json config_json(const TrialConfig& cfg) {
  nlohmann::ordered_json j;
  j["total_budget"] = cfg.total_budget;
  j["initial_size"] = cfg.derived_initial();
  j["alpha"] = cfg.alpha;
  j["estimator"] = estimator_name(cfg.estimator);
  j["max_screened"] = cfg.max_screened;
  j["stage_only_fit"] = cfg.stage_only_fit;
  j["seed"] = cfg.seed;
  if (cfg.estimator == EstimatorKind::al_bv) {
    j["kernel"] = {{"L", cfg.kernel.lipschitz},
                   {"C1", cfg.kernel.c1},
                   {"t", cfg.kernel.t},
                   {"standardize", cfg.kernel.standardize}};
  } else {
    j["gp"] = {{"restarts", cfg.gp.fit.restarts},
               {"max_evals", cfg.gp.fit.max_evals},
               {"multiplier", cfg.gp.multiplier}};
  }
  return j;
}

/// Audit log CSV: one row per examined candidate, stage 0 included.
inline std::string audit_csv(const TrialResult& result) {
  std::ostringstream out;
  const int p = result.enrolled_data.dim;
  out << "stage,candidate";
  for (int j = 1; j <= p; ++j) out << ",x_" << j;
  out << ",f_hat,delta,decision,arm,outcome\n";
  for (const auto& row : result.audit) {
    out << row.stage << "," << row.index;
    for (int j = 0; j < p; ++j) out << "," << format_double(row.x(j));
    out << "," << format_double(row.f_hat) << "," << format_double(row.delta) << ","
        << (row.enrolled ? "enroll" : "reject") << ",";
    if (row.arm != 0) out << row.arm;
    out << ",";
    if (row.arm != 0) out << format_double(row.outcome);
    out << "\n";
  }
  return out.str();
}

inline nlohmann::ordered_json summary_json(const TrialResult& result) {
  nlohmann::ordered_json j;
  j["seed"] = result.config.seed;
  j["config"] = config_json(result.config);
  j["totals"] = {{"screened", result.total_screened},
                 {"enrolled", result.total_enrolled},
                 {"rejected", result.total_rejected}};
  j["stop_reason"] = stop_reason_name(result.reason);
  j["final_estimator_version"] = result.final_estimator_version;
  j["stages"] = nlohmann::ordered_json::array();
  for (const auto& s : result.stages) {
    j["stages"].push_back({{"stage", s.stage},
                           {"quota", s.quota},
                           {"enrolled", s.enrolled},
                           {"rejected", s.rejected},
                           {"budget_left", s.budget_left},
                           {"estimator_version", s.estimator_version}});
  }
  return j;
}

/// Canonical byte form used by the determinism checks.
inline std::string canonical_serialization(const TrialResult& result) {
  return summary_json(result).dump(2) + "\n" + audit_csv(result);
}

}  // namespace actrial
