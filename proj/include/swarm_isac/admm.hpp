#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "swarm_isac/gradients.hpp"

namespace swarm_isac {

struct AdmmConfig {
  double rho = 1.0;
  double eta = 1e-3;
  int inner_steps = 1;
  long max_iters = 100000;
  // Residual stop. Off by default: while every q_n is interior, both residuals
  // equal eta times the change of grad f between iterations, so they collapse
  // after two iterations whether or not z is near a stationary point.
  double eps_primal = 0.0;
  double eps_dual = 0.0;
  std::uint64_t seed = 0;
};

inline void validate(const AdmmConfig& cfg) {
  if (!(cfg.rho > 0)) throw std::invalid_argument("rho must be positive");
  if (!(cfg.eta >= 0)) throw std::invalid_argument("eta must be non-negative");
  if (cfg.inner_steps < 1) throw std::invalid_argument("inner_steps must be >= 1");
  if (cfg.max_iters < 1) throw std::invalid_argument("max_iters must be >= 1");
  if (!(cfg.eps_primal >= 0) || !(cfg.eps_dual >= 0)) {
    throw std::invalid_argument("stopping tolerances must be non-negative");
  }
}

struct SwarmState {
  std::vector<Vec3> q;
  std::vector<Vec3> z;
  std::vector<Vec3> mu;
  long iter = 0;

  bool operator==(const SwarmState&) const = default;
};

struct IterationRecord {
  long iter = 0;
  double objective = 0.0;
  double rate_nats = 0.0;
  double crb_m2 = 0.0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double aug_lagrangian = 0.0;

  bool operator==(const IterationRecord&) const = default;
};

struct RunResult {
  SwarmState final_state;
  std::vector<IterationRecord> trace;
  MetricReport initial;  // metrics at the initial consensus variables
  long iters_run = 0;
  bool converged = false;  // stopped on the residual tolerances
};

/// Runs up to this many iterations keep every record; longer runs keep every
/// kTraceStride-th record plus the last one.
inline constexpr long kFullTraceLimit = 10000;
inline constexpr long kTraceStride = 10;

inline bool keep_record(long iter, long max_iters, bool last) {
  return last || max_iters <= kFullTraceLimit || iter % kTraceStride == 0;
}

/// Euclidean projection onto the ball of radius r_max around center.
inline Vec3 project_ball(const Vec3& a, const Vec3& center, double r_max) {
  const Vec3 d = a - center;
  const double dist = d.norm();
  if (dist <= r_max) return a;
  return center + (r_max / dist) * d;
}

/// Step 1: q_n <- Proj_{Q_n}(z_n - mu_n / rho), one UAV at a time.
inline Vec3 local_update(const Vec3& z, const Vec3& mu, const Vec3& q0, double rho, double r_max) {
  return project_ball(z - mu / rho, q0, r_max);
}

inline std::vector<Vec3> step1_local(const SwarmState& state, std::span<const Vec3> q0,
                                     const AdmmConfig& cfg, double r_max) {
  if (state.z.size() != q0.size() || state.mu.size() != q0.size()) {
    throw std::invalid_argument("step1_local: state and q0 lengths differ");
  }
  std::vector<Vec3> q(q0.size());
  for (std::size_t n = 0; n < q0.size(); ++n) {
    q[n] = local_update(state.z[n], state.mu[n], q0[n], cfg.rho, r_max);
  }
  return q;
}

inline void require_finite(std::span<const Vec3> z) {
  for (std::size_t n = 0; n < z.size(); ++n) {
    if (!is_finite(z[n])) {
      throw StepFailure("consensus variable of uav " + std::to_string(n) +
                        " became non-finite; step size too large?");
    }
  }
}

/// Metrics and gradients at a freshly updated consensus variable. A non-finite
/// z or objective means the descent step diverged.
inline Evaluation guarded_evaluate(std::span<const Vec3> z, const Scenario& scenario) {
  require_finite(z);
  Evaluation ev = evaluate(z, scenario);
  if (!std::isfinite(ev.report.objective)) throw StepFailure("objective became non-finite");
  return ev;
}

struct ConsensusUpdate {
  std::vector<Vec3> z;
  Evaluation at_z;
};

/// inner_steps descent steps on the z-subproblem. `at_current`, when given, must be
/// evaluate(state.z); the runners pass the evaluation cached from the previous
/// iteration.
inline ConsensusUpdate consensus_update(const SwarmState& state, std::span<const Vec3> q_next,
                                        const AdmmConfig& cfg, const Scenario& scenario,
                                        const Evaluation* at_current = nullptr) {
  ConsensusUpdate out{state.z, at_current ? *at_current : evaluate(state.z, scenario)};
  for (int step = 0; step < cfg.inner_steps; ++step) {
    const GradientField g =
        consensus_gradient(out.at_z, out.z, q_next, state.mu, cfg.rho, scenario.omega);
    for (std::size_t n = 0; n < out.z.size(); ++n) out.z[n] -= cfg.eta * g[n];
    out.at_z = guarded_evaluate(out.z, scenario);
  }
  return out;
}

/// Step 2: inner_steps gradient-descent steps on the z-subproblem.
inline std::vector<Vec3> step2_consensus(const SwarmState& state, std::span<const Vec3> q_next,
                                         const AdmmConfig& cfg, const Scenario& scenario) {
  return consensus_update(state, q_next, cfg, scenario).z;
}

/// Step 3, per UAV: mu_n + rho (q_n - z_n).
inline Vec3 dual_update(const Vec3& mu, const Vec3& q_next, const Vec3& z_next, double rho) {
  return mu + rho * (q_next - z_next);
}

inline std::vector<Vec3> step3_dual(const SwarmState& state, std::span<const Vec3> q_next,
                                    std::span<const Vec3> z_next, double rho) {
  if (q_next.size() != state.mu.size() || z_next.size() != state.mu.size()) {
    throw std::invalid_argument("step3_dual: lengths differ");
  }
  std::vector<Vec3> mu(state.mu.size());
  for (std::size_t n = 0; n < mu.size(); ++n) mu[n] = dual_update(state.mu[n], q_next[n], z_next[n], rho);
  return mu;
}

/// Record of one completed iteration, evaluated at (q^{k+1}, z^{k+1}, mu^{k+1}).
inline IterationRecord make_record(long iter, const MetricReport& at_z, std::span<const Vec3> q,
                                   std::span<const Vec3> z, std::span<const Vec3> mu_prev,
                                   std::span<const Vec3> mu, double rho) {
  IterationRecord rec;
  rec.iter = iter;
  rec.objective = at_z.objective;
  rec.rate_nats = at_z.rate_nats;
  rec.crb_m2 = at_z.crb_m2;
  double primal = 0.0, dual = 0.0, coupling = 0.0;
  for (std::size_t n = 0; n < q.size(); ++n) {
    const Vec3 gap = q[n] - z[n];
    primal += gap.squaredNorm();
    dual += (mu[n] - mu_prev[n]).squaredNorm();
    coupling += mu[n].dot(gap) + 0.5 * rho * gap.squaredNorm();
  }
  rec.primal_residual = std::sqrt(primal);
  rec.dual_residual = std::sqrt(dual);
  rec.aug_lagrangian = at_z.objective + coupling;
  return rec;
}

inline bool residuals_met(const IterationRecord& rec, const AdmmConfig& cfg) {
  return rec.primal_residual <= cfg.eps_primal && rec.dual_residual <= cfg.eps_dual;
}

inline SwarmState initial_state(const Scenario& scenario, std::span<const Vec3> init_z) {
  if (init_z.size() != scenario.num_uavs()) {
    throw std::invalid_argument("init_z must have one entry per UAV");
  }
  SwarmState s;
  s.q = scenario.initial_positions;
  s.z.assign(init_z.begin(), init_z.end());
  s.mu.assign(init_z.size(), Vec3::Zero());
  return s;
}

/// Consensus ADMM: local projection, inexact consensus descent, dual ascent,
/// until both residuals meet their tolerances or max_iters is reached.
inline RunResult run(const Scenario& scenario, const AdmmConfig& cfg, std::span<const Vec3> init_z) {
  validate(scenario);
  validate(cfg);
  RunResult result;
  SwarmState state = initial_state(scenario, init_z);
  Evaluation current = evaluate(state.z, scenario);
  result.initial = current.report;

  const std::span<const Vec3> q0(scenario.initial_positions);
  for (long k = 0; k < cfg.max_iters; ++k) {
    try {
      std::vector<Vec3> q1 = step1_local(state, q0, cfg, scenario.r_max);
      ConsensusUpdate upd = consensus_update(state, q1, cfg, scenario, &current);
      std::vector<Vec3> mu1 = step3_dual(state, q1, upd.z, cfg.rho);

      const IterationRecord rec =
          make_record(k + 1, upd.at_z.report, q1, upd.z, state.mu, mu1, cfg.rho);
      state.q = std::move(q1);
      state.z = std::move(upd.z);
      state.mu = std::move(mu1);
      state.iter = k + 1;
      current = std::move(upd.at_z);

      const bool done = residuals_met(rec, cfg);
      const bool last = done || state.iter == cfg.max_iters;
      if (keep_record(rec.iter, cfg.max_iters, last)) result.trace.push_back(rec);
      if (done) {
        result.converged = true;
        break;
      }
    } catch (Error& e) {
      e.set_iteration(k);
      throw;
    }
  }
  result.iters_run = state.iter;
  result.final_state = std::move(state);
  return result;
}

inline RunResult run(const Scenario& scenario, const AdmmConfig& cfg) {
  return run(scenario, cfg, scenario.initial_positions);
}

}  // namespace swarm_isac
