// actrial: active clinical trial simulator and planning CLI.
//
// Subcommands: simulate | replay | samplesize | margin | ratecheck.
// Each subcommand reads its options from the command line and, via --config,
// from the matching [section] of a TOML file; command-line flags win. Every
// output file starts with a comment header echoing the resolved options.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "actrial/experiments.hpp"
#include "actrial/sample_size.hpp"

namespace fs = std::filesystem;
using namespace actrial;

namespace {

struct CommonOpts {
  std::uint64_t seed = 0;
  int jobs = 1;
  std::string out = "results";
};

void add_common(CLI::App* cmd, CommonOpts& c, bool with_jobs = true) {
  cmd->add_option("--seed", c.seed, "master RNG seed")->capture_default_str();
  if (with_jobs) {
    cmd->add_option("--jobs", c.jobs, "worker threads for replications")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
  }
  cmd->add_option("--out", c.out, "output directory")->capture_default_str();
}

struct EstimatorOpts {
  double kernel_l = 1.0;
  double kernel_c1 = 1.0;
  double kernel_t = 0.5;
  bool kernel_standardize = false;
  int gp_restarts = 3;
  int gp_max_evals = 200;
  double gp_multiplier = 3.0;

  KernelConfig kernel() const {
    KernelConfig k;
    k.lipschitz = kernel_l;
    k.c1 = kernel_c1;
    k.t = kernel_t;
    k.standardize = kernel_standardize;
    return k;
  }
  GpConfig gp() const {
    GpConfig g;
    g.fit.restarts = gp_restarts;
    g.fit.max_evals = gp_max_evals;
    g.multiplier = gp_multiplier;
    return g;
  }
};

void add_estimator(CLI::App* cmd, EstimatorOpts& e) {
  cmd->add_option("--kernel-l", e.kernel_l, "Lipschitz bound L (AL-BV)")->capture_default_str();
  cmd->add_option("--kernel-c1", e.kernel_c1, "bandwidth constant C1 (AL-BV)")
      ->capture_default_str();
  cmd->add_option("--kernel-t", e.kernel_t, "confidence parameter t (AL-BV)")
      ->capture_default_str();
  cmd->add_flag("--kernel-standardize,!--no-kernel-standardize", e.kernel_standardize,
                "z-score covariates before distances (AL-BV)");
  cmd->add_option("--gp-restarts", e.gp_restarts, "LML optimizer restarts (AL-GP)")
      ->capture_default_str();
  cmd->add_option("--gp-max-evals", e.gp_max_evals, "LML evaluations per restart (AL-GP)")
      ->capture_default_str();
  cmd->add_option("--gp-multiplier", e.gp_multiplier, "posterior-sd multiplier (AL-GP)")
      ->capture_default_str();
}

/// "# key=value" echo of the resolved options of one subcommand.
std::string config_echo(CLI::App* cmd) {
  std::string raw = cmd->get_config_formatter()->to_config(cmd, true, false, "");
  std::istringstream in(raw);
  std::ostringstream out;
  out << "# command=" << cmd->get_name() << "\n";
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out << "# " << line << "\n";
  }
  return out.str();
}

void write_file(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

// ---- simulate ---------------------------------------------------------------

int cmd_simulate(CLI::App* cmd, const CommonOpts& common, const EstimatorOpts& est, int scenario,
                 const std::vector<std::string>& method_names, const std::vector<int>& budgets,
                 int n0, double alpha, int replications, int test_size, bool stage_only) {
  SimulateSpec spec;
  spec.scenario_id = scenario;
  for (const auto& name : method_names) spec.methods.push_back(sim_method_from_name(name));
  spec.budgets = budgets;
  spec.initial_size = n0;
  spec.alpha = alpha;
  spec.replications = replications;
  spec.seed = common.seed;
  spec.jobs = common.jobs;
  spec.test_size = test_size;
  spec.kernel = est.kernel();
  spec.gp = est.gp();
  spec.stage_only_fit = stage_only;

  std::vector<SimRow> rows = run_simulation(spec);
  const std::string echo = config_echo(cmd);
  write_file(fs::path(common.out) / "results.csv", results_csv(rows, echo));
  write_file(fs::path(common.out) / "plot_aev.csv", plot_csv(rows, echo));

  int failures = 0;
  for (const auto& r : rows) {
    if (!r.error.empty()) {
      ++failures;
      std::cerr << "failed cell method=" << r.method << " budget=" << r.budget
                << " replication=" << r.replication << ": " << r.error << "\n";
    }
  }
  std::cout << "simulate: wrote " << (rows.size() - failures) << " rows to " << common.out
            << "/results.csv\n";
  return failures == 0 ? 0 : 2;
}

// ---- replay -----------------------------------------------------------------

int cmd_replay(CLI::App* cmd, const CommonOpts& common, const EstimatorOpts& est,
               const std::string& pool_path, const std::vector<std::string>& method_names, int n0,
               int additional) {
  Dataset pool = load_pool(pool_path);
  const std::string echo = config_echo(cmd);

  std::ostringstream summary;
  summary << echo << "method,screened,enrolled,rejected,value\n";
  int failures = 0;
  for (const auto& name : method_names) {
    try {
      Rule rule;
      long screened = 0, enrolled = 0, rejected = 0;
      if (name == "OLS") {
        rule = fit_ols_itr(pool).as_rule();
        screened = enrolled = static_cast<long>(pool.size());
      } else if (name == "AL-BV" || name == "AL-GP") {
        TrialConfig cfg;
        cfg.total_budget = n0 + additional;
        cfg.initial_size = n0;
        cfg.estimator = name == "AL-BV" ? EstimatorKind::al_bv : EstimatorKind::al_gp;
        cfg.kernel = est.kernel();
        cfg.gp = est.gp();
        cfg.seed = common.seed;
        TrialResult result = replay_pool(cfg, pool);
        rule = result.rule();
        screened = result.total_screened;
        enrolled = result.total_enrolled;
        rejected = result.total_rejected;
        std::string tag = name == "AL-BV" ? "albv" : "algp";
        write_file(fs::path(common.out) / ("audit_" + tag + ".csv"), echo + audit_csv(result));
        write_file(fs::path(common.out) / ("summary_" + tag + ".json"),
                   summary_json(result).dump(2) + "\n");
      } else {
        throw std::invalid_argument("unknown replay method '" + name +
                                    "' (expected AL-BV, AL-GP, or OLS)");
      }
      double value = weighted_mean_outcome(pool, rule);
      summary << name << "," << screened << "," << enrolled << "," << rejected << ","
              << format_double(value) << "\n";
    } catch (const std::exception& e) {
      ++failures;
      std::cerr << "replay method " << name << " failed: " << e.what() << "\n";
    }
  }
  write_file(fs::path(common.out) / "replay_summary.csv", summary.str());
  std::cout << "replay: wrote " << common.out << "/replay_summary.csv\n";
  return failures == 0 ? 0 : 2;
}

// ---- samplesize -------------------------------------------------------------

int cmd_samplesize(CLI::App* cmd, const CommonOpts& common, const EstimatorOpts& est, int d,
                   double alpha, double rho, double v0, std::vector<double> gammas,
                   std::vector<double> epsilons, double n_ref, int n0, double diff_hat,
                   long calibrate_n, double calibrate_gamma, double calibrate_target,
                   const std::string& bootstrap_pool, int bootstrap_b, int bootstrap_additional,
                   const std::string& bootstrap_estimator) {
  SampleSizeGrid grid;
  grid.d = d;
  grid.alpha = alpha;
  grid.rho = rho;
  grid.v0 = v0;
  grid.gammas = std::move(gammas);
  grid.epsilons = std::move(epsilons);
  grid.n_ref = n_ref;
  grid.n0 = n0;

  std::string mode;
  nlohmann::ordered_json meta;
  if (diff_hat > 0.0) {
    mode = "diff_hat";
    grid.diff_hat = diff_hat;
  } else if (calibrate_n > 0) {
    mode = "calibrate";
    SampleSizeInputs cal;
    cal.d = d;
    cal.gamma = calibrate_gamma;
    cal.alpha = alpha;
    cal.rho = rho;
    cal.v0 = v0;
    cal.epsilon = calibrate_target;
    cal.n0 = n0;
    cal.c_tilde = calibrate_ctilde(calibrate_n, calibrate_target, cal);
    grid.diff_hat = bound_value(grid.n_ref, cal);
    meta["calibration"] = {{"n", calibrate_n},
                           {"gamma", calibrate_gamma},
                           {"target", calibrate_target},
                           {"c_tilde", cal.c_tilde}};
  } else if (!bootstrap_pool.empty()) {
    mode = "bootstrap";
    Dataset pool = load_pool(bootstrap_pool);
    TrialConfig cfg;
    cfg.initial_size = n0;
    cfg.total_budget = n0 + bootstrap_additional;
    cfg.estimator = bootstrap_estimator == "AL-GP" ? EstimatorKind::al_gp : EstimatorKind::al_bv;
    cfg.kernel = est.kernel();
    cfg.gp = est.gp();
    SampleSizeInputs in;
    in.d = d;
    in.gamma = grid.gammas.front();
    in.alpha = alpha;
    Rng rng(common.seed);
    BootstrapCtilde boot = bootstrap_ctilde(pool, cfg, in, bootstrap_b, rng);
    grid.diff_hat = boot.diff_hat;
    grid.n_ref = static_cast<double>(cfg.total_budget);
    meta["bootstrap"] = {{"pool", bootstrap_pool},
                         {"B", bootstrap_b},
                         {"used", boot.used},
                         {"dropped", boot.dropped},
                         {"diff_hat", boot.diff_hat}};
  } else {
    std::cerr << "samplesize: provide --diff-hat, --calibrate-n, or --bootstrap-pool\n";
    return 1;
  }

  SampleSizeTable table = sample_size_table(grid);
  write_file(fs::path(common.out) / "samplesize.csv", config_echo(cmd) + sample_size_csv(table));

  meta["mode"] = mode;
  meta["d"] = grid.d;
  meta["alpha"] = grid.alpha;
  meta["rho"] = grid.rho;
  meta["v0"] = grid.v0;
  meta["n_ref"] = grid.n_ref;
  meta["n0"] = grid.n0;
  meta["diff_hat"] = grid.diff_hat;
  meta["seed"] = common.seed;
  meta["c_tilde_per_gamma"] = table.c_tilde_per_gamma;
  write_file(fs::path(common.out) / "samplesize_meta.json", meta.dump(2) + "\n");

  std::vector<std::string> blank;
  for (std::size_t ei = 0; ei < table.cells.size(); ++ei) {
    for (std::size_t gi = 0; gi < table.cells[ei].size(); ++gi) {
      if (!table.cells[ei][gi]) {
        blank.push_back("(gamma=" + format_double(grid.gammas[gi]) +
                        ", epsilon=" + format_double(grid.epsilons[ei]) + ")");
      }
    }
  }
  std::cout << "samplesize: wrote " << common.out << "/samplesize.csv\n";
  if (!blank.empty()) {
    std::cerr << "unreachable cells:";
    for (const auto& b : blank) std::cerr << " " << b;
    std::cerr << "\n";
    return 2;
  }
  return 0;
}

// ---- margin -----------------------------------------------------------------

int cmd_margin(CLI::App* cmd, const CommonOpts& common, int scenario, long n,
               std::vector<double> t_grid) {
  auto spec = ScenarioSpec::by_id(scenario);
  if (t_grid.empty()) t_grid = {0.05, 0.08, 0.13, 0.2, 0.32, 0.5};
  Rng rng(common.seed);

  // per-t fractions alongside the fitted exponent
  std::vector<double> abs_contrast(n);
  Rng sample_rng = rng.child(1);
  for (long i = 0; i < n; ++i) {
    abs_contrast[i] = std::abs(spec.contrast(spec.sample_covariate(sample_rng)));
  }
  std::sort(abs_contrast.begin(), abs_contrast.end());

  Rng fit_rng = rng.child(1);  // same stream: identical draws feed the fit
  double gamma_hat = margin_exponent(spec, t_grid, n, fit_rng);

  std::ostringstream out;
  out << config_echo(cmd);
  out << "# gamma_hat=" << format_double(gamma_hat) << "\n";
  out << "t,fraction\n";
  for (double t : t_grid) {
    auto it = std::upper_bound(abs_contrast.begin(), abs_contrast.end(), t);
    double frac = static_cast<double>(it - abs_contrast.begin()) / static_cast<double>(n);
    out << format_double(t) << "," << format_double(frac) << "\n";
  }
  write_file(fs::path(common.out) / "margin.csv", out.str());
  std::cout << "margin: gamma_hat=" << format_double(gamma_hat) << " (scenario " << scenario
            << ", n=" << n << ")\n";
  return 0;
}

// ---- ratecheck --------------------------------------------------------------

int cmd_ratecheck(CLI::App* cmd, const CommonOpts& common, const std::string& input, int d,
                  double gamma) {
  std::ifstream in(input);
  if (!in) throw std::runtime_error("cannot open " + input);

  // results.csv schema: method,budget,replication,aev,seed (with # comments)
  std::map<std::string, std::map<int, KahanMean>> per_method;
  std::string line;
  bool header_seen = false;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty() || line[0] == '#') continue;
    if (!header_seen) {
      header_seen = true;
      continue;
    }
    auto fields = split_csv_line(line);
    if (fields.size() < 4) throw std::runtime_error("line " + std::to_string(line_no) + ": bad row");
    auto budget = parse_double(fields[1]);
    auto value = parse_double(fields[3]);
    if (!budget || !value) {
      throw std::runtime_error("line " + std::to_string(line_no) + ": bad number");
    }
    per_method[trim(fields[0])][static_cast<int>(*budget)].add(*value);
  }
  if (per_method.empty()) throw std::runtime_error("no data rows in " + input);

  std::ostringstream out;
  out << config_echo(cmd) << "method,slope,intercept,theoretical_slope,points\n";
  int failures = 0;
  for (const auto& [method, budgets] : per_method) {
    std::vector<std::pair<double, double>> pts;
    for (const auto& [budget, acc] : budgets) {
      pts.emplace_back(static_cast<double>(budget), acc.mean());
    }
    try {
      RateFit fit = (d > 0) ? rate_fit(pts, d, gamma) : rate_fit(pts);
      out << method << "," << format_double(fit.slope) << "," << format_double(fit.intercept)
          << "," << format_double(fit.theoretical_slope) << "," << fit.points.size() << "\n";
    } catch (const NonPositiveAev& e) {
      ++failures;
      std::cerr << "ratecheck method " << method << ": " << e.what() << "\n";
      out << method << ",,,," << 0 << "\n";
    }
  }
  write_file(fs::path(common.out) / "ratecheck.csv", out.str());
  std::cout << "ratecheck: wrote " << common.out << "/ratecheck.csv\n";
  return failures == 0 ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"active clinical trial simulator"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "TOML config with one section per command");
  app.allow_config_extras(CLI::config_extras_mode::error);

  // simulate
  auto* sim = app.add_subcommand("simulate", "replicated scenario experiments (AEV tables)");
  sim->configurable();
  CommonOpts sim_common;
  EstimatorOpts sim_est;
  int sim_scenario = 1;
  std::vector<std::string> sim_methods = {"AL-GP", "AL-BV", "OLS"};
  std::vector<int> sim_budgets;
  int sim_n0 = 0;
  double sim_alpha = 0.05;
  int sim_reps = 1;
  int sim_test_size = 10000;
  bool sim_stage_only = false;
  sim->add_option("--scenario", sim_scenario, "scenario id")
      ->check(CLI::Range(1, 6))
      ->capture_default_str();
  sim->add_option("--methods", sim_methods, "AL-GP | AL-BV | OLS | external:<path>")
      ->capture_default_str();
  sim->add_option("--budgets", sim_budgets, "total budgets N")->required();
  sim->add_option("--n0", sim_n0, "initial stage size (0: 2*floor(sqrt(N)))")
      ->capture_default_str();
  sim->add_option("--alpha", sim_alpha, "confidence level")->capture_default_str();
  sim->add_option("--replications", sim_reps, "replications per cell")->capture_default_str();
  sim->add_option("--test-size", sim_test_size, "AEV test-set size")->capture_default_str();
  sim->add_flag("--stage-only", sim_stage_only, "fit each stage on its own enrollees only");
  add_estimator(sim, sim_est);
  add_common(sim, sim_common);

  // replay
  auto* rep = app.add_subcommand("replay", "active-enrollment replay over a fixed pool");
  rep->configurable();
  CommonOpts rep_common;
  EstimatorOpts rep_est;
  rep_est.kernel_standardize = true;  // real pools mix units
  std::string rep_pool;
  std::vector<std::string> rep_methods = {"AL-GP", "AL-BV", "OLS"};
  int rep_n0 = 50;
  int rep_additional = 100;
  rep->add_option("--pool", rep_pool, "pool CSV path")->required()->check(CLI::ExistingFile);
  rep->add_option("--methods", rep_methods, "AL-GP | AL-BV | OLS")->capture_default_str();
  rep->add_option("--n0", rep_n0, "initial random subset size")->capture_default_str();
  rep->add_option("--additional", rep_additional, "additional enrollment budget")
      ->capture_default_str();
  add_estimator(rep, rep_est);
  add_common(rep, rep_common, false);

  // samplesize
  auto* ss = app.add_subcommand("samplesize", "invert the risk bound into a planning table");
  ss->configurable();
  CommonOpts ss_common;
  EstimatorOpts ss_est;
  int ss_d = 3;
  double ss_alpha = 0.2, ss_rho = 0.16, ss_v0 = 10.96;
  std::vector<double> ss_gammas = {0.5, 1.0, 1.5, 2.0, 2.5};
  std::vector<double> ss_epsilons = {1.7, 1.6, 1.5};
  double ss_n_ref = 150.0;
  int ss_n0 = 50;
  double ss_diff_hat = 0.0;
  long ss_cal_n = 0;
  double ss_cal_gamma = 0.5, ss_cal_target = 1.7;
  std::string ss_boot_pool;
  int ss_boot_b = 50, ss_boot_additional = 100;
  std::string ss_boot_estimator = "AL-BV";
  ss->add_option("--d", ss_d, "intrinsic dimension")->capture_default_str();
  ss->add_option("--alpha", ss_alpha, "confidence level")->capture_default_str();
  ss->add_option("--rho", ss_rho, "relative improvement target")->capture_default_str();
  ss->add_option("--v0", ss_v0, "standard-care value")->capture_default_str();
  ss->add_option("--gammas", ss_gammas, "margin exponents (columns)")->capture_default_str();
  ss->add_option("--epsilons", ss_epsilons, "closeness targets (rows)")->capture_default_str();
  ss->add_option("--n-ref", ss_n_ref, "trial size behind DiffHat")->capture_default_str();
  ss->add_option("--n0", ss_n0, "initial stage size the plan conditions on")
      ->capture_default_str();
  ss->add_option("--diff-hat", ss_diff_hat, "DiffHat given directly");
  ss->add_option("--calibrate-n", ss_cal_n, "calibration: N with bound(N)=target");
  ss->add_option("--calibrate-gamma", ss_cal_gamma, "calibration gamma")->capture_default_str();
  ss->add_option("--calibrate-target", ss_cal_target, "calibration target")
      ->capture_default_str();
  ss->add_option("--bootstrap-pool", ss_boot_pool, "pool CSV for the DiffHat bootstrap");
  ss->add_option("--bootstrap-b", ss_boot_b, "bootstrap replicates")->capture_default_str();
  ss->add_option("--bootstrap-additional", ss_boot_additional,
                 "additional budget per bootstrap trial")
      ->capture_default_str();
  ss->add_option("--bootstrap-estimator", ss_boot_estimator, "AL-BV | AL-GP")
      ->capture_default_str();
  add_estimator(ss, ss_est);
  add_common(ss, ss_common, false);

  // margin
  auto* mg = app.add_subcommand("margin", "estimate the margin exponent of a scenario");
  mg->configurable();
  CommonOpts mg_common;
  int mg_scenario = 1;
  long mg_n = 1000000;
  std::vector<double> mg_t_grid;
  mg->add_option("--scenario", mg_scenario, "scenario id")
      ->check(CLI::Range(1, 6))
      ->capture_default_str();
  mg->add_option("--n", mg_n, "Monte Carlo sample size")->capture_default_str();
  mg->add_option("--t-grid", mg_t_grid, "margin thresholds (>= 5 values)");
  add_common(mg, mg_common, false);

  // ratecheck
  auto* rc = app.add_subcommand("ratecheck", "log-log AEV slope against the rate bound");
  rc->configurable();
  CommonOpts rc_common;
  std::string rc_input;
  int rc_d = 0;
  double rc_gamma = 1.0;
  rc->add_option("--input", rc_input, "results.csv from simulate")
      ->required()
      ->check(CLI::ExistingFile);
  rc->add_option("--d", rc_d, "intrinsic dimension for the theoretical slope");
  rc->add_option("--gamma", rc_gamma, "margin exponent for the theoretical slope")
      ->capture_default_str();
  add_common(rc, rc_common, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (sim->parsed()) {
      return cmd_simulate(sim, sim_common, sim_est, sim_scenario, sim_methods, sim_budgets,
                          sim_n0, sim_alpha, sim_reps, sim_test_size, sim_stage_only);
    }
    if (rep->parsed()) {
      return cmd_replay(rep, rep_common, rep_est, rep_pool, rep_methods, rep_n0, rep_additional);
    }
    if (ss->parsed()) {
      return cmd_samplesize(ss, ss_common, ss_est, ss_d, ss_alpha, ss_rho, ss_v0, ss_gammas,
                            ss_epsilons, ss_n_ref, ss_n0, ss_diff_hat, ss_cal_n, ss_cal_gamma,
                            ss_cal_target, ss_boot_pool, ss_boot_b, ss_boot_additional,
                            ss_boot_estimator);
    }
    if (mg->parsed()) return cmd_margin(mg, mg_common, mg_scenario, mg_n, mg_t_grid);
    if (rc->parsed()) return cmd_ratecheck(rc, rc_common, rc_input, rc_d, rc_gamma);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
