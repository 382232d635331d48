#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "actrial/csv.hpp"
#include "actrial/evaluation.hpp"
#include "actrial/trial_engine.hpp"

namespace actrial {

struct TargetUnreachable : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Rate exponent beta = (1+gamma)/(2+d-gamma) of the risk bound.
inline double rate_exponent(int d, double gamma) { return (1.0 + gamma) / (2.0 + d - gamma); }

/// Log exponent theta = (4+2d-gamma)(1+gamma) / ((2+d)(2+d-gamma)).
inline double theta_exponent(int d, double gamma) {
  if (d < 1) throw std::invalid_argument("theta_exponent: d must be >= 1");
  if (!(gamma >= 0.0) || gamma > static_cast<double>(d)) {
    throw std::invalid_argument("theta_exponent: gamma must lie in [0, d]");
  }
  return (4.0 + 2.0 * d - gamma) * (1.0 + gamma) / ((2.0 + d) * (2.0 + d - gamma));
}

struct SampleSizeInputs {
  int d = 3;               // intrinsic dimension
  double gamma = 1.0;      // margin exponent
  double alpha = 0.2;      // confidence level
  double c_tilde = 1.0;    // bound constant
  double rho = 0.15;       // relative improvement target
  double v0 = 10.0;        // standard-care value
  double epsilon = 1.0;    // absolute closeness target
  int n0 = 50;             // initial stage size the plan conditions on

  double target() const { return std::min(rho * v0, epsilon); }
};

/// Bound value C~ N^{-beta} (log(N/alpha))^{theta}. Requires N/alpha > 1.
inline double bound_value(double n, const SampleSizeInputs& in) {
  if (!(n / in.alpha > 1.0)) throw std::invalid_argument("bound_value: need N/alpha > 1");
  const double beta = rate_exponent(in.d, in.gamma);
  const double theta = theta_exponent(in.d, in.gamma);
  return in.c_tilde * std::pow(n, -beta) * std::pow(std::log(n / in.alpha), theta);
}

/// C~ that makes bound_value(n) hit `target` exactly.
inline double calibrate_ctilde(long n, double target, SampleSizeInputs in) {
  in.c_tilde = 1.0;
  return target / bound_value(static_cast<double>(n), in);
}

/// Smallest integer N on the decreasing branch of the bound with
/// bound(N) <= min(rho V0, epsilon); doubling then bisection.
inline long invert_bound(const SampleSizeInputs& in) {
  const double target = in.target();
  if (!(target > 0.0)) throw std::invalid_argument("invert_bound: target must be positive");
  constexpr long kCap = 1000000000L;

  const double beta = rate_exponent(in.d, in.gamma);
  const double theta = theta_exponent(in.d, in.gamma);
  // the bound peaks at log(N/alpha) = theta/beta; search the branch past it
  const double peak = in.alpha * std::exp(theta / beta);
  long lo = std::max<long>({static_cast<long>(in.n0),
                            static_cast<long>(std::ceil(M_E * in.alpha)) + 1,
                            static_cast<long>(std::ceil(peak))});
  // a hair of slack so a calibrated target is matched despite rounding
  auto ok = [&](long n) {
    return bound_value(static_cast<double>(n), in) <= target * (1.0 + 1e-12);
  };

  long hi = lo;
  while (!ok(hi)) {
    if (hi > kCap) {
      throw TargetUnreachable("invert_bound: target " + format_double(target) +
                              " not reached below N = 1e9");
    }
    hi *= 2;
  }
  while (lo < hi) {
    long mid = lo + (hi - lo) / 2;
    if (ok(mid)) hi = mid;
    else lo = mid + 1;
  }
  return lo;
}

struct BootstrapCtilde {
  double c_tilde = 0.0;
  double diff_hat = 0.0;
  int used = 0;     // bootstrap replicates that produced a value
  int dropped = 0;  // replicates whose trial or fit failed
};

/// Bootstrap estimate of the bound constant: B resamples of the pool, an
/// active replay per resample, each learned rule valued on the original pool;
/// DiffHat is the 80th percentile of |V_k - V_k*| and
/// C~ = N^{beta} (log(N/alpha))^{-theta} * DiffHat.
inline BootstrapCtilde bootstrap_ctilde(
    const Dataset& pool, const TrialConfig& trial_cfg, const SampleSizeInputs& in, int B, Rng& rng,
    const std::function<Rule(const Dataset&, Rng&)>& learner = nullptr) {
  if (B < 1) throw std::invalid_argument("bootstrap_ctilde: B must be >= 1");
  BootstrapCtilde out;
  std::vector<double> values;
  values.reserve(B);
  for (int b = 0; b < B; ++b) {
    Rng brng = rng.child(b);
    Dataset resample(pool.dim);
    resample.propensity = pool.propensity;
    resample.direction = pool.direction;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      resample.add(pool.obs[brng.below(pool.size())]);
    }
    try {
      Rule rule;
      if (learner) {
        rule = learner(resample, brng);
      } else {
        TrialConfig cfg = trial_cfg;
        cfg.seed = brng.next_u64();
        rule = replay_pool(cfg, resample).rule();
      }
      values.push_back(weighted_mean_outcome(pool, rule));
    } catch (const std::exception&) {
      ++out.dropped;
    }
  }
  if (values.empty()) throw TargetUnreachable("bootstrap_ctilde: every replicate failed");
  out.used = static_cast<int>(values.size());

  // V_k* is the best value; lower is better for minimize-direction outcomes
  std::size_t best = 0;
  for (std::size_t k = 1; k < values.size(); ++k) {
    const bool better = pool.direction == OutcomeDirection::minimize ? values[k] < values[best]
                                                                     : values[k] > values[best];
    if (better) best = k;
  }
  std::vector<double> diffs;
  diffs.reserve(values.size() - 1);
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (k != best) diffs.push_back(std::abs(values[k] - values[best]));
  }
  if (diffs.empty()) {
    out.diff_hat = 0.0;
  } else {
    std::sort(diffs.begin(), diffs.end());
    std::size_t rank = static_cast<std::size_t>(std::ceil(0.8 * diffs.size()));
    out.diff_hat = diffs[std::min(diffs.size() - 1, rank == 0 ? 0 : rank - 1)];
  }

  const double n = static_cast<double>(trial_cfg.total_budget);
  const double beta = rate_exponent(in.d, in.gamma);
  const double theta = theta_exponent(in.d, in.gamma);
  out.c_tilde = std::pow(n, beta) * std::pow(std::log(n / in.alpha), -theta) * out.diff_hat;
  return out;
}

// ---- planning table ---------------------------------------------------------

struct SampleSizeGrid {
  int d = 3;
  double alpha = 0.2;
  double rho = 0.15;
  double v0 = 10.0;
  double n_ref = 150.0;   // trial size behind DiffHat (bootstrap N)
  double diff_hat = 1.0;  // shared DiffHat; C~ is recomputed per gamma
  std::vector<double> gammas;
  std::vector<double> epsilons;
  int n0 = 50;
};

struct SampleSizeTable {
  SampleSizeGrid grid;
  std::vector<double> c_tilde_per_gamma;
  // cells[ei][gi]; empty when the target was unreachable
  std::vector<std::vector<std::optional<long>>> cells;
};

inline SampleSizeTable sample_size_table(const SampleSizeGrid& grid) {
  if (grid.gammas.empty() || grid.epsilons.empty()) {
    throw std::invalid_argument("sample_size_table: empty grid");
  }
  SampleSizeTable table;
  table.grid = grid;
  for (double gamma : grid.gammas) {
    const double beta = rate_exponent(grid.d, gamma);
    const double theta = theta_exponent(grid.d, gamma);
    table.c_tilde_per_gamma.push_back(std::pow(grid.n_ref, beta) *
                                      std::pow(std::log(grid.n_ref / grid.alpha), -theta) *
                                      grid.diff_hat);
  }
  for (double eps : grid.epsilons) {
    std::vector<std::optional<long>> row;
    for (std::size_t gi = 0; gi < grid.gammas.size(); ++gi) {
      SampleSizeInputs in;
      in.d = grid.d;
      in.gamma = grid.gammas[gi];
      in.alpha = grid.alpha;
      in.c_tilde = table.c_tilde_per_gamma[gi];
      in.rho = grid.rho;
      in.v0 = grid.v0;
      in.epsilon = eps;
      in.n0 = grid.n0;
      try {
        row.push_back(invert_bound(in));
      } catch (const TargetUnreachable&) {
        row.push_back(std::nullopt);
      }
    }
    table.cells.push_back(std::move(row));
  }
  return table;
}

/// Table CSV: rows epsilon, columns gamma, cells N*.
inline std::string sample_size_csv(const SampleSizeTable& table) {
  std::ostringstream out;
  out << "epsilon";
  for (double g : table.grid.gammas) out << ",gamma=" << format_double(g);
  out << "\n";
  for (std::size_t ei = 0; ei < table.grid.epsilons.size(); ++ei) {
    out << format_double(table.grid.epsilons[ei]);
    for (const auto& cell : table.cells[ei]) {
      out << ",";
      if (cell) out << *cell;
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace actrial
