#pragma once

#include <atomic>
#include <cmath>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "actrial/baselines.hpp"
#include "actrial/csv.hpp"
#include "actrial/evaluation.hpp"
#include "actrial/trial_engine.hpp"

namespace actrial {

/// Runs fn(0..n_jobs) on up to n_threads workers. Each job must be
/// self-contained; results keyed by job index stay deterministic regardless
/// of scheduling.
inline void parallel_for_jobs(long n_jobs, int n_threads,
                              const std::function<void(long)>& fn) {
  n_threads = std::max(1, n_threads);
  if (n_threads == 1 || n_jobs <= 1) {
    for (long i = 0; i < n_jobs; ++i) fn(i);
    return;
  }
  std::atomic<long> next{0};
  auto worker = [&] {
    while (true) {
      long i = next.fetch_add(1);
      if (i >= n_jobs) return;
      fn(i);
    }
  };
  std::vector<std::thread> threads;
  const int spawn = static_cast<int>(std::min<long>(n_threads, n_jobs));
  threads.reserve(spawn);
  for (int t = 0; t < spawn; ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
}

struct SimMethod {
  std::string name;  // AL-GP | AL-BV | OLS | external:<label>
  enum class Kind { al_gp, al_bv, ols, external } kind = Kind::al_gp;
  Rule external_rule;  // only for Kind::external
};

inline SimMethod sim_method_from_name(const std::string& name) {
  SimMethod m;
  m.name = name;
  if (name == "AL-GP") m.kind = SimMethod::Kind::al_gp;
  else if (name == "AL-BV") m.kind = SimMethod::Kind::al_bv;
  else if (name == "OLS") m.kind = SimMethod::Kind::ols;
  else if (name.rfind("external:", 0) == 0) {
    m.kind = SimMethod::Kind::external;
    m.external_rule = load_external_rule(name.substr(9));
  } else {
    throw std::invalid_argument("unknown method '" + name +
                                "' (expected AL-GP, AL-BV, OLS, or external:<path>)");
  }
  return m;
}

struct SimulateSpec {
  int scenario_id = 1;
  std::vector<SimMethod> methods;
  std::vector<int> budgets;  // total budgets N
  int initial_size = 0;      // N0, 0 derives 2*floor(sqrt(N))
  double alpha = 0.05;
  int replications = 1;
  std::uint64_t seed = 0;
  int jobs = 1;
  int test_size = 10000;
  KernelConfig kernel{};
  GpConfig gp{};
  bool stage_only_fit = false;
  // observer for every trial the grid runs (invoked under a lock)
  std::function<void(const TrialResult&)> on_trial;
};

struct SimRow {
  std::string method;
  int budget = 0;
  int replication = 0;
  double aev = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t seed = 0;
  std::string error;  // nonempty when the cell failed
};

/// The replication grid behind `simulate`: for each (method, budget, rep),
/// learn a rule (active trial or passive fit) and score its AEV on a fresh
/// 10^4-point test set shared by all methods within the replication.
inline std::vector<SimRow> run_simulation(const SimulateSpec& spec) {
  const ScenarioSpec scenario = ScenarioSpec::by_id(spec.scenario_id);
  const long n_methods = static_cast<long>(spec.methods.size());
  const long n_budgets = static_cast<long>(spec.budgets.size());
  const long n_jobs = n_methods * n_budgets * spec.replications;
  std::vector<SimRow> rows(n_jobs);

  Rng root(spec.seed);
  std::mutex observer_mutex;
  parallel_for_jobs(n_jobs, spec.jobs, [&](long job) {
    const long mi = job / (n_budgets * spec.replications);
    const long bi = (job / spec.replications) % n_budgets;
    const int rep = static_cast<int>(job % spec.replications);
    const SimMethod& method = spec.methods[mi];
    const int budget = spec.budgets[bi];

    SimRow& row = rows[job];
    row.method = method.name;
    row.budget = budget;
    row.replication = rep;

    // test grid depends only on the replication so methods share it
    Rng test_rng = root.child(1000000 + rep);
    // trial stream keyed by the full cell
    Rng cell_rng = root.child(job + 1);
    row.seed = cell_rng.next_u64();

    try {
      Eigen::MatrixXd test_x = scenario.sample_covariates(spec.test_size, test_rng);
      Rule rule;
      switch (method.kind) {
        case SimMethod::Kind::al_gp:
        case SimMethod::Kind::al_bv: {
          TrialConfig cfg;
          cfg.total_budget = budget;
          cfg.initial_size = spec.initial_size;
          cfg.alpha = spec.alpha;
          cfg.estimator = method.kind == SimMethod::Kind::al_gp ? EstimatorKind::al_gp
                                                                : EstimatorKind::al_bv;
          cfg.kernel = spec.kernel;
          cfg.gp = spec.gp;
          cfg.stage_only_fit = spec.stage_only_fit;
          cfg.seed = row.seed;
          TrialResult result = run_active_trial(cfg, scenario);
          if (spec.on_trial) {
            std::lock_guard<std::mutex> lock(observer_mutex);
            spec.on_trial(result);
          }
          rule = result.rule();
          break;
        }
        case SimMethod::Kind::ols: {
          Rng fit_rng(row.seed);
          Dataset data = sample_rct(scenario, budget, fit_rng);
          rule = fit_ols_itr(data).as_rule();
          break;
        }
        case SimMethod::Kind::external:
          rule = method.external_rule;
          break;
      }
      row.aev = aev(rule, scenario, test_x);
    } catch (const std::exception& e) {
      row.error = e.what();
    }
  });
  return rows;
}

/// CV method backed by the active-trial replay: N0 initial subjects plus
/// `budget` additional enrollments from the training pool.
inline CvMethod cv_method_trial(const std::string& name, EstimatorKind kind, TrialConfig base) {
  return {name, [kind, base](const Dataset& training, int budget, Rng& rng) {
            TrialConfig cfg = base;
            cfg.estimator = kind;
            cfg.total_budget = base.derived_initial() + budget;
            cfg.seed = rng.next_u64();
            return replay_pool(cfg, training).rule();
          }};
}

/// Passive CV method: OLS on a random subset of n0 + budget training subjects.
inline CvMethod cv_method_passive_ols(int n0) {
  return {"OLS", [n0](const Dataset& training, int budget, Rng& rng) {
            const std::size_t size =
                std::min<std::size_t>(training.size(), static_cast<std::size_t>(n0 + budget));
            auto idx = rng.sample_without_replacement(training.size(), size);
            Dataset sub(training.dim);
            sub.propensity = training.propensity;
            sub.direction = training.direction;
            for (auto i : idx) sub.add(training.obs[i]);
            return fit_ols_itr(sub).as_rule();
          }};
}

struct AevSummary {
  std::string method;
  int budget = 0;
  double mean_aev = 0.0;
  double median_aev = 0.0;
  long replications = 0;
};

inline std::vector<AevSummary> summarize_aev(const std::vector<SimRow>& rows) {
  std::map<std::pair<std::string, int>, std::vector<double>> groups;
  for (const auto& r : rows) {
    if (r.error.empty() && std::isfinite(r.aev)) groups[{r.method, r.budget}].push_back(r.aev);
  }
  std::vector<AevSummary> out;
  for (const auto& [key, values] : groups) {
    KahanMean acc;
    for (double v : values) acc.add(v);
    out.push_back({key.first, key.second, acc.mean(), median(values),
                   static_cast<long>(values.size())});
  }
  return out;
}

inline std::string results_csv(const std::vector<SimRow>& rows,
                               const std::string& header_comment = "") {
  std::ostringstream out;
  if (!header_comment.empty()) out << header_comment;
  out << "method,budget,replication,aev,seed\n";
  for (const auto& r : rows) {
    if (!r.error.empty()) continue;
    out << r.method << "," << r.budget << "," << r.replication << "," << format_double(r.aev)
        << "," << r.seed << "\n";
  }
  return out.str();
}

/// Log-log plot data (natural logs of budget and mean AEV).
inline std::string plot_csv(const std::vector<SimRow>& rows,
                            const std::string& header_comment = "") {
  std::ostringstream out;
  if (!header_comment.empty()) out << header_comment;
  out << "method,log_budget,log_mean_aev\n";
  for (const auto& s : summarize_aev(rows)) {
    out << s.method << "," << format_double(std::log(static_cast<double>(s.budget))) << ","
        << format_double(std::log(s.mean_aev)) << "\n";
  }
  return out.str();
}

}  // namespace actrial
