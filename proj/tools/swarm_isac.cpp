// swarm_isac: scenario runs, sweeps, baselines and gradient checks.

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "swarm_isac/experiment.hpp"

namespace si = swarm_isac;

namespace {

struct Flags {
  std::vector<int> n;
  std::vector<int> m;
  std::vector<double> omega;
  std::vector<std::string> schemes;
  int scenarios = 20;
};

void add_common(CLI::App* app, si::ExperimentConfig& cfg, Flags& f, bool lists) {
  if (lists) {
    app->add_option("--n", f.n, "UAV counts")->delimiter(',');
    app->add_option("--m", f.m, "user antenna counts")->delimiter(',');
    app->add_option("--omega", f.omega, "CRB weights")->delimiter(',');
    app->add_option("--seeds", cfg.num_seeds, "number of consecutive seeds")->check(CLI::PositiveNumber);
    app->add_option("--jobs", cfg.jobs, "worker threads")->check(CLI::PositiveNumber);
  } else {
    app->add_option("--n", f.n, "UAV count")->expected(1);
    app->add_option("--m", f.m, "user antenna count")->expected(1);
    app->add_option("--omega", f.omega, "CRB weight")->expected(1);
  }
  app->add_option("--seed", cfg.seed, "first scenario seed");
  app->add_option("--rho", cfg.admm.rho, "ADMM penalty");
  app->add_option("--eta", cfg.admm.eta, "consensus step size");
  app->add_option("--inner-steps", cfg.admm.inner_steps, "descent steps per iteration");
  app->add_option("--max-iters", cfg.admm.max_iters, "iteration cap");
  app->add_option("--eps-primal", cfg.admm.eps_primal, "primal residual tolerance (0 = off)");
  app->add_option("--eps-dual", cfg.admm.eps_dual, "dual residual tolerance (0 = off)");
  app->add_option("--r-max", cfg.r_max, "flight radius around each initial position [m]");
  app->add_option("--cube-side", cfg.cube_side, "side of the deployment cube [m]");
  app->add_option("--out", cfg.out_dir, "output directory (default $SWARM_ISAC_OUT or ./out)");
  app->add_option("--format", cfg.format, "results table format")->check(CLI::IsMember({"csv", "json"}));
  app->add_option("--rate-units", cfg.rate_units, "units for printed rates")->check(CLI::IsMember({"nats", "bits"}));
  app->add_flag("--record-wall-time", cfg.record_wall_time, "write measured wall time into results.csv");
}

double rate_in_units(double nats, const std::string& units) { return units == "bits" ? nats / std::log(2.0) : nats; }

void print_report(const char* label, const si::MetricReport& r, const std::string& units) {
  std::printf("%-8s rate=%.6f %s  crb=%.6g m^2  objective=%.6f\n", label, rate_in_units(r.rate_nats, units),
              units.c_str(), r.crb_m2, r.objective);
}

int cmd_run(si::ExperimentConfig cfg) {
  cfg.schemes = {si::Scheme::Optimized};
  cfg.num_seeds = 1;
  si::validate(cfg);
  const int n = cfg.n_list.front(), m = cfg.m_list.front();
  const double w = cfg.omega_list.front();
  const si::Scenario s = si::generate_scenario(cfg, n, m, w, cfg.seed);
  si::AdmmConfig admm = cfg.admm;
  admm.seed = cfg.seed;
  const si::SimResult sim = si::simulate(s, admm);
  const si::MetricReport fin = si::objective(sim.run.final_state.q, s);
  std::printf("N=%d M=%d omega=%g seed=%llu iters=%ld converged=%d messages=%ld\n", n, m, w,
              static_cast<unsigned long long>(cfg.seed), sim.run.iters_run, sim.run.converged ? 1 : 0,
              sim.data_messages);
  print_report("initial", sim.run.initial, cfg.rate_units);
  print_report("final", fin, cfg.rate_units);

  si::SweepResult sweep;
  si::CellOutcome cell;
  cell.cell_id = si::cell_id(si::Scheme::Optimized, n, m, w, cfg.seed);
  cell.row = si::make_row(si::Scheme::Optimized, n, m, w, cfg.seed);
  si::fill_metrics(cell.row, fin);
  cell.row.iters_run = sim.run.iters_run;
  cell.trace = sim.run.trace;
  sweep.cells.push_back(std::move(cell));
  si::emit(sweep, cfg);
  std::printf("wrote %s\n", cfg.out_dir.c_str());
  return 0;
}

int cmd_sweep(const si::ExperimentConfig& cfg) {
  const si::SweepResult sweep = si::run_sweep(cfg);
  si::emit(sweep, cfg);
  for (const si::CellMean& c : si::aggregate(sweep.rows())) {
    std::printf("%-9s N=%-2d M=%d omega=%-4g seeds=%d rate=%.4f %s crb=%.5g objective=%.5f\n",
                si::to_string(c.scheme), c.n, c.m, c.omega, c.count, rate_in_units(c.rate_nats, cfg.rate_units),
                cfg.rate_units.c_str(), c.crb_m2, c.objective);
  }
  std::printf("%zu cells, %zu failed, wrote %s\n", sweep.cells.size(), sweep.failures(), cfg.out_dir.c_str());
  return sweep.failures() == 0 ? 0 : 3;
}

int cmd_check(const si::ExperimentConfig& cfg, int scenarios) {
  const si::GradientCheck r = si::check_gradients(cfg, scenarios, cfg.seed);
  std::printf("scenarios=%d\n", r.scenarios);
  std::printf("grad_rate max relative error %.3e (limit 1e-4)\n", r.max_rel_rate);
  std::printf("grad_crb  max relative error %.3e (limit 1e-5)\n", r.max_rel_crb);
  return r.max_rel_rate < 1e-4 && r.max_rel_crb < 1e-5 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"UAV swarm ISAC placement by consensus ADMM"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key = value file; command-line flags override it");

  si::ExperimentConfig cfg;
  if (const char* env = std::getenv("SWARM_ISAC_OUT"); env && *env) cfg.out_dir = env;
  Flags f;

  CLI::App* run = app.add_subcommand("run", "optimize one generated scenario and write its trace");
  add_common(run, cfg, f, false);
  CLI::App* sweep = app.add_subcommand("sweep", "run the full (N, M, omega, seed, scheme) grid");
  add_common(sweep, cfg, f, true);
  sweep->add_option("--schemes", f.schemes, "optimized,uniform,random")->delimiter(',');
  CLI::App* base = app.add_subcommand("baseline", "evaluate the uniform and random placements only");
  add_common(base, cfg, f, true);
  base->add_option("--schemes", f.schemes, "uniform,random")->delimiter(',');
  CLI::App* check = app.add_subcommand("check-gradients", "compare analytic gradients with finite differences");
  check->add_option("--seed", cfg.seed, "RNG seed");
  check->add_option("--scenarios", f.scenarios, "number of random scenarios")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (!f.n.empty()) cfg.n_list = f.n;
    if (!f.m.empty()) cfg.m_list = f.m;
    if (!f.omega.empty()) cfg.omega_list = f.omega;
    if (*run) {
      if (f.n.empty()) cfg.n_list = {4};
      if (f.m.empty()) cfg.m_list = {4};
      if (f.omega.empty()) cfg.omega_list = {1.0};
      return cmd_run(cfg);
    }
    if (*sweep || *base) {
      if (!f.schemes.empty()) {
        cfg.schemes.clear();
        for (const auto& s : f.schemes) cfg.schemes.push_back(si::parse_scheme(s));
      }
      if (*base) {
        if (f.schemes.empty()) cfg.schemes = {si::Scheme::Uniform, si::Scheme::Random};
        for (si::Scheme s : cfg.schemes) {
          if (s == si::Scheme::Optimized) throw std::invalid_argument("baseline does not run the optimizer");
        }
      }
      return cmd_sweep(cfg);
    }
    return cmd_check(cfg, f.scenarios);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
