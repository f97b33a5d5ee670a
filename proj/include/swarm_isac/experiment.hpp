#pragma once

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "swarm_isac/swarm_sim.hpp"

namespace swarm_isac {

enum class Scheme { Optimized, Uniform, Random };

inline const char* to_string(Scheme s) {
  switch (s) {
    case Scheme::Optimized: return "optimized";
    case Scheme::Uniform: return "uniform";
    case Scheme::Random: return "random";
  }
  return "unknown";
}

inline Scheme parse_scheme(const std::string& s) {
  if (s == "optimized") return Scheme::Optimized;
  if (s == "uniform") return Scheme::Uniform;
  if (s == "random") return Scheme::Random;
  throw std::invalid_argument("unknown scheme '" + s + "'");
}

struct ExperimentConfig {
  // scenario recipe
  double cube_side = 100.0;  // cube [-side/2, side/2]^3 around the user
  double offset_range = 0.5;  // antenna offsets uniform in [-range, range]^3
  double r_max = 20.0;
  ChannelParams params;

  AdmmConfig admm;

  // sweep axes
  std::vector<int> n_list{3, 4, 7, 10};
  std::vector<int> m_list{1, 2, 4};
  std::vector<double> omega_list{0.1, 1.0, 10.0};
  std::uint64_t seed = 1;  // first seed
  int num_seeds = 10;      // seeds seed, seed+1, ...
  std::vector<Scheme> schemes{Scheme::Optimized, Scheme::Uniform, Scheme::Random};

  // output
  std::string out_dir = "out";
  std::string format = "csv";  // csv | json
  std::string rate_units = "nats";
  bool record_wall_time = false;
  int jobs = 1;

  std::vector<std::uint64_t> seeds() const {
    std::vector<std::uint64_t> s;
    for (int i = 0; i < num_seeds; ++i) s.push_back(seed + static_cast<std::uint64_t>(i));
    return s;
  }
};

inline void validate(const ExperimentConfig& c) {
  if (!(c.cube_side > 0)) throw std::invalid_argument("cube_side must be positive");
  if (!(c.offset_range >= 0)) throw std::invalid_argument("offset_range must be non-negative");
  if (!(c.r_max >= 0)) throw std::invalid_argument("r_max must be non-negative");
  validate(c.params);
  validate(c.admm);
  if (c.n_list.empty() || c.m_list.empty() || c.omega_list.empty() || c.schemes.empty()) {
    throw std::invalid_argument("sweep lists must be non-empty");
  }
  if (c.num_seeds < 1) throw std::invalid_argument("need at least one seed");
  for (int n : c.n_list) {
    if (n < 1) throw std::invalid_argument("N must be >= 1");
  }
  for (int m : c.m_list) {
    if (m < 1) throw std::invalid_argument("M must be >= 1");
  }
  for (double w : c.omega_list) {
    if (!(w >= 0) || !std::isfinite(w)) throw std::invalid_argument("omega must be finite and >= 0");
  }
  if (c.format != "csv" && c.format != "json") throw std::invalid_argument("format must be csv or json");
  if (c.rate_units != "nats" && c.rate_units != "bits") {
    throw std::invalid_argument("rate_units must be nats or bits");
  }
  if (c.jobs < 1) throw std::invalid_argument("jobs must be >= 1");
}

inline constexpr int kMaxGenerationAttempts = 1000;

namespace detail {

// Stream tags keep positions and offsets independent, so scenarios with the
// same seed share their first min(N) positions and first min(M) offsets.
inline constexpr std::uint64_t kPositionStream = 0x51;
inline constexpr std::uint64_t kOffsetStream = 0x0f;

inline std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t tag, int attempt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(attempt)};
  return std::mt19937_64(seq);
}

inline Vec3 draw_box(std::mt19937_64& g, double half) {
  std::uniform_real_distribution<double> u(-half, half);
  Vec3 v;
  for (int k = 0; k < 3; ++k) v(k) = u(g);
  return v;
}

}  // namespace detail

/// Random scenario: user at the origin, N positions uniform in the cube, M offsets
/// uniform in the offset box. Draws too close to an antenna are redrawn, and a
/// singular initial FIM restarts the position stream.
inline Scenario generate_scenario(const ExperimentConfig& recipe, int n_uavs, int n_antennas, double omega,
                                  std::uint64_t seed) {
  if (n_uavs < 1 || n_antennas < 1) throw std::invalid_argument("N and M must be >= 1");
  if (!(recipe.cube_side > 0) || !(recipe.offset_range >= 0)) throw std::invalid_argument("bad recipe");
  Scenario s;
  s.user_pos = Vec3::Zero();
  s.r_max = recipe.r_max;
  s.omega = omega;
  s.params = recipe.params;

  auto off = detail::make_stream(seed, detail::kOffsetStream, 0);
  for (int m = 0; m < n_antennas; ++m) s.antenna_offsets.push_back(detail::draw_box(off, recipe.offset_range));

  int rejected = 0;
  for (int attempt = 0; rejected < kMaxGenerationAttempts; ++attempt) {
    auto pos = detail::make_stream(seed, detail::kPositionStream, attempt);
    s.initial_positions.clear();
    while (static_cast<int>(s.initial_positions.size()) < n_uavs && rejected < kMaxGenerationAttempts) {
      const Vec3 q = detail::draw_box(pos, recipe.cube_side / 2);
      bool ok = true;
      for (int m = 0; m < n_antennas && ok; ++m) {
        ok = (q - antenna_position(s, static_cast<std::size_t>(m))).norm() >= kMinSeparation;
      }
      if (ok) {
        s.initial_positions.push_back(q);
      } else {
        ++rejected;
      }
    }
    if (static_cast<int>(s.initial_positions.size()) < n_uavs) break;
    if (min_eigenvalue(fim(s.initial_positions, s)) > kSingularFimTol) return s;
    ++rejected;
  }
  throw GenerationFailure("no valid scenario for N=" + std::to_string(n_uavs) + " M=" +
                          std::to_string(n_antennas) + " seed=" + std::to_string(seed) + " after " +
                          std::to_string(kMaxGenerationAttempts) + " rejected draws");
}

/// Evenly spaced placement: smallest k with k^3 >= N, cell centers of the k^3 grid
/// over the cube, lexicographic (x, y, z) order, first N points.
inline std::vector<Vec3> uniform_lattice(int n_uavs, double cube_side) {
  int k = 1;
  while (k * k * k < n_uavs) ++k;
  const double cell = cube_side / k;
  std::vector<Vec3> pts;
  for (int i = 0; i < k && static_cast<int>(pts.size()) < n_uavs; ++i) {
    for (int j = 0; j < k && static_cast<int>(pts.size()) < n_uavs; ++j) {
      for (int l = 0; l < k && static_cast<int>(pts.size()) < n_uavs; ++l) {
        pts.emplace_back(-cube_side / 2 + (i + 0.5) * cell, -cube_side / 2 + (j + 0.5) * cell,
                         -cube_side / 2 + (l + 0.5) * cell);
      }
    }
  }
  return pts;
}

struct ResultRow {
  Scheme scheme = Scheme::Optimized;
  int n = 0;
  int m = 0;
  double omega = 0.0;
  std::uint64_t seed = 0;
  double rate_nats = 0.0;
  double crb_m2 = 0.0;
  double objective = 0.0;
  long iters_run = 0;
  double wall_time_s = 0.0;
  std::string error;  // empty unless the cell failed; metrics are NaN then

  bool ok() const { return error.empty(); }
};

inline ResultRow make_row(Scheme scheme, int n, int m, double omega, std::uint64_t seed) {
  ResultRow r;
  r.scheme = scheme;
  r.n = n;
  r.m = m;
  r.omega = omega;
  r.seed = seed;
  return r;
}

struct CellOutcome {
  std::string cell_id;
  ResultRow row;
  std::vector<IterationRecord> trace;  // optimized cells only
  double measured_wall_time_s = 0.0;
};

inline std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string cell_id(Scheme scheme, int n, int m, double omega, std::uint64_t seed) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", omega);
  return std::string(to_string(scheme)) + "_N" + std::to_string(n) + "_M" + std::to_string(m) + "_w" + buf +
         "_s" + std::to_string(seed);
}

inline void fill_metrics(ResultRow& row, const MetricReport& r) {
  row.rate_nats = r.rate_nats;
  row.crb_m2 = r.crb_m2;
  row.objective = r.objective;
}

inline void mark_failed(ResultRow& row, const std::exception& e) {
  const double nan = std::nan("");
  row.rate_nats = row.crb_m2 = row.objective = nan;
  row.error = e.what();
}

/// Metrics of an unoptimized placement. Failures come back as a flagged row.
inline ResultRow run_baseline(Scheme scheme, const ExperimentConfig& recipe, int n_uavs, int n_antennas,
                              double omega, std::uint64_t seed) {
  if (scheme == Scheme::Optimized) throw std::invalid_argument("run_baseline: optimized is not a baseline");
  ResultRow row = make_row(scheme, n_uavs, n_antennas, omega, seed);
  try {
    const Scenario s = generate_scenario(recipe, n_uavs, n_antennas, omega, seed);
    const std::vector<Vec3> placement =
        scheme == Scheme::Uniform ? uniform_lattice(n_uavs, recipe.cube_side) : s.initial_positions;
    fill_metrics(row, objective(placement, s));
  } catch (const std::exception& e) {
    mark_failed(row, e);
  }
  return row;
}

/// One cell of the sweep. Optimized cells run the message-passing simulator and
/// report metrics at the final feasible positions q.
inline CellOutcome run_cell(const ExperimentConfig& cfg, Scheme scheme, int n_uavs, int n_antennas, double omega,
                            std::uint64_t seed) {
  CellOutcome out;
  out.cell_id = cell_id(scheme, n_uavs, n_antennas, omega, seed);
  const auto t0 = std::chrono::steady_clock::now();
  if (scheme == Scheme::Optimized) {
    out.row = make_row(scheme, n_uavs, n_antennas, omega, seed);
    try {
      const Scenario s = generate_scenario(cfg, n_uavs, n_antennas, omega, seed);
      AdmmConfig admm = cfg.admm;
      admm.seed = seed;
      SimResult sim = simulate(s, admm);
      fill_metrics(out.row, objective(sim.run.final_state.q, s));
      out.row.iters_run = sim.run.iters_run;
      out.trace = std::move(sim.run.trace);
    } catch (const std::exception& e) {
      mark_failed(out.row, e);
    }
  } else {
    out.row = run_baseline(scheme, cfg, n_uavs, n_antennas, omega, seed);
  }
  out.measured_wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (cfg.record_wall_time) out.row.wall_time_s = out.measured_wall_time_s;
  return out;
}

struct CellSpec {
  Scheme scheme;
  int n;
  int m;
  double omega;
  std::uint64_t seed;
};

/// Cells in output order: N, M, omega, seed, scheme.
inline std::vector<CellSpec> enumerate_cells(const ExperimentConfig& cfg) {
  std::vector<CellSpec> cells;
  for (int n : cfg.n_list) {
    for (int m : cfg.m_list) {
      for (double w : cfg.omega_list) {
        for (std::uint64_t seed : cfg.seeds()) {
          for (Scheme sc : cfg.schemes) cells.push_back({sc, n, m, w, seed});
        }
      }
    }
  }
  return cells;
}

struct SweepResult {
  std::vector<CellOutcome> cells;

  std::vector<ResultRow> rows() const {
    std::vector<ResultRow> r;
    for (const auto& c : cells) r.push_back(c.row);
    return r;
  }
  std::size_t failures() const {
    return static_cast<std::size_t>(std::count_if(cells.begin(), cells.end(), [](const CellOutcome& c) {
      return !c.row.ok();
    }));
  }
};

/// Runs every cell, on cfg.jobs threads. Outcomes are stored by cell index, so the
/// result does not depend on scheduling.
inline SweepResult run_sweep(const ExperimentConfig& cfg) {
  validate(cfg);
  const std::vector<CellSpec> specs = enumerate_cells(cfg);
  SweepResult result;
  result.cells.resize(specs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < specs.size(); i = next++) {
      const CellSpec& c = specs[i];
      result.cells[i] = run_cell(cfg, c.scheme, c.n, c.m, c.omega, c.seed);
    }
  };
  const int threads = std::min<int>(cfg.jobs, static_cast<int>(specs.size()));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  return result;
}

struct CellMean {
  Scheme scheme;
  int n;
  int m;
  double omega;
  int count = 0;  // successful seeds
  int failed = 0;
  double rate_nats = 0.0;
  double crb_m2 = 0.0;
  double objective = 0.0;
};

/// Mean over seeds of every (scheme, N, M, omega) group, failed rows excluded.
/// Groups keep the order of first appearance.
inline std::vector<CellMean> aggregate(const std::vector<ResultRow>& rows) {
  std::vector<CellMean> means;
  for (const ResultRow& r : rows) {
    auto it = std::find_if(means.begin(), means.end(), [&](const CellMean& c) {
      return c.scheme == r.scheme && c.n == r.n && c.m == r.m && c.omega == r.omega;
    });
    if (it == means.end()) {
      means.push_back(CellMean{r.scheme, r.n, r.m, r.omega});
      it = std::prev(means.end());
    }
    if (!r.ok()) {
      ++it->failed;
      continue;
    }
    ++it->count;
    it->rate_nats += r.rate_nats;
    it->crb_m2 += r.crb_m2;
    it->objective += r.objective;
  }
  for (CellMean& c : means) {
    const double k = c.count > 0 ? c.count : std::nan("");
    c.rate_nats /= k;
    c.crb_m2 /= k;
    c.objective /= k;
  }
  return means;
}

struct ParetoPoint {
  int n;
  int m;
  double omega;
  double rate_nats;
  double crb_m2;
  bool dominated = false;
};

/// Optimized cell means grouped by (N, M), sorted by rate, with dominance flags
/// (a point is dominated if another has rate >= and CRB <=, one strictly).
inline std::vector<ParetoPoint> pareto_front(const std::vector<CellMean>& means) {
  std::vector<ParetoPoint> pts;
  for (const CellMean& c : means) {
    if (c.scheme == Scheme::Optimized && c.count > 0) pts.push_back({c.n, c.m, c.omega, c.rate_nats, c.crb_m2});
  }
  std::stable_sort(pts.begin(), pts.end(), [](const ParetoPoint& a, const ParetoPoint& b) {
    if (a.n != b.n) return a.n < b.n;
    if (a.m != b.m) return a.m < b.m;
    return a.rate_nats < b.rate_nats;
  });
  for (ParetoPoint& p : pts) {
    for (const ParetoPoint& o : pts) {
      if (o.n != p.n || o.m != p.m) continue;
      const bool no_worse = o.rate_nats >= p.rate_nats && o.crb_m2 <= p.crb_m2;
      const bool better = o.rate_nats > p.rate_nats || o.crb_m2 < p.crb_m2;
      if (no_worse && better) p.dominated = true;
    }
  }
  return pts;
}

inline const char* kResultsHeader = "scheme,N,M,omega,seed,rate_nats,crb_m2,objective,iters_run,wall_time_s";
inline const char* kTraceHeader = "iter,objective,rate_nats,crb_m2,primal_residual,dual_residual,aug_lagrangian";

inline std::string results_csv(const std::vector<ResultRow>& rows) {
  std::string out = std::string(kResultsHeader) + "\n";
  for (const ResultRow& r : rows) {
    out += std::string(to_string(r.scheme)) + "," + std::to_string(r.n) + "," + std::to_string(r.m) + "," +
           format_number(r.omega) + "," + std::to_string(r.seed) + "," + format_number(r.rate_nats) + "," +
           format_number(r.crb_m2) + "," + format_number(r.objective) + "," + std::to_string(r.iters_run) + "," +
           format_number(r.wall_time_s) + "\n";
  }
  return out;
}

inline std::string trace_csv(const std::vector<IterationRecord>& trace) {
  std::string out = std::string(kTraceHeader) + "\n";
  for (const IterationRecord& t : trace) {
    out += std::to_string(t.iter) + "," + format_number(t.objective) + "," + format_number(t.rate_nats) + "," +
           format_number(t.crb_m2) + "," + format_number(t.primal_residual) + "," +
           format_number(t.dual_residual) + "," + format_number(t.aug_lagrangian) + "\n";
  }
  return out;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) parts.push_back(cur);
  if (!s.empty() && s.back() == sep) parts.emplace_back();
  return parts;
}

inline std::vector<ResultRow> parse_results_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kResultsHeader) throw std::runtime_error("results.csv: bad header");
  std::vector<ResultRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 10) throw std::runtime_error("results.csv: expected 10 fields in '" + line + "'");
    ResultRow r;
    r.scheme = parse_scheme(f[0]);
    r.n = std::stoi(f[1]);
    r.m = std::stoi(f[2]);
    r.omega = std::strtod(f[3].c_str(), nullptr);
    r.seed = std::stoull(f[4]);
    r.rate_nats = std::strtod(f[5].c_str(), nullptr);
    r.crb_m2 = std::strtod(f[6].c_str(), nullptr);
    r.objective = std::strtod(f[7].c_str(), nullptr);
    r.iters_run = std::stol(f[8]);
    r.wall_time_s = std::strtod(f[9].c_str(), nullptr);
    if (std::isnan(r.objective)) r.error = "failed";
    rows.push_back(r);
  }
  return rows;
}

/// Scenario with UAVs at random directions and user distances uniform in
/// [r_lo, r_hi], offsets as in the recipe. Used by the gradient check.
inline Scenario random_shell_scenario(const ExperimentConfig& recipe, int n_uavs, int n_antennas, double r_lo,
                                      double r_hi, std::uint64_t seed) {
  Scenario s;
  s.user_pos = Vec3::Zero();
  s.r_max = recipe.r_max;
  s.params = recipe.params;
  auto g = detail::make_stream(seed, 0x5e11, 0);
  for (int m = 0; m < n_antennas; ++m) s.antenna_offsets.push_back(detail::draw_box(g, recipe.offset_range));
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> radius(r_lo, r_hi);
  for (int n = 0; n < n_uavs; ++n) {
    const Vec3 dir = Vec3(normal(g), normal(g), normal(g)).normalized();
    s.initial_positions.push_back(radius(g) * dir);
  }
  return s;
}

/// Rate evaluated in long double. A double log-det of about 40 nats carries
/// ~1e-14 absolute error, too much for a 1e-6 m central difference of small
/// gradient components.
inline long double rate_extended(std::span<const Vec3> positions, const Scenario& s) {
  using LD = long double;
  using Mat = Eigen::Matrix<std::complex<LD>, Eigen::Dynamic, Eigen::Dynamic>;
  const Eigen::Index n_uav = static_cast<Eigen::Index>(positions.size());
  const Eigen::Index n_ant = static_cast<Eigen::Index>(s.antenna_offsets.size());
  const LD k = 2 * std::numbers::pi_v<LD> / static_cast<LD>(s.params.lambda_c);
  Mat h(n_uav, n_ant);
  for (Eigen::Index n = 0; n < n_uav; ++n) {
    for (Eigen::Index m = 0; m < n_ant; ++m) {
      LD d2 = 0;
      for (int c = 0; c < 3; ++c) {
        const LD d = static_cast<LD>(positions[n](c)) -
                     (static_cast<LD>(s.user_pos(c)) + static_cast<LD>(s.antenna_offsets[m](c)));
        d2 += d * d;
      }
      const LD r = std::sqrt(d2);
      h(n, m) = std::polar(static_cast<LD>(s.params.beta0) / std::pow(r, static_cast<LD>(s.params.gamma)), -k * r);
    }
  }
  const LD inv_s2 = 1 / static_cast<LD>(s.params.sigma2);
  const Mat gram = n_uav <= n_ant ? Mat(Mat::Identity(n_uav, n_uav) + inv_s2 * h * h.adjoint())
                                  : Mat(Mat::Identity(n_ant, n_ant) + inv_s2 * h.adjoint() * h);
  const Eigen::LLT<Mat> llt(gram);
  if (llt.info() != Eigen::Success) throw NumericalFailure("extended-precision Cholesky failed");
  LD log_det = 0;
  for (Eigen::Index i = 0; i < gram.rows(); ++i) log_det += 2 * std::log(std::real(llt.matrixL()(i, i)));
  return log_det;
}

/// CRB evaluated in long double, by the same reasoning as rate_extended.
inline long double crb_extended(std::span<const Vec3> positions, const Scenario& s) {
  using LD = long double;
  using M3 = Eigen::Matrix<LD, 3, 3>;
  using V3 = Eigen::Matrix<LD, 3, 1>;
  M3 j = M3::Zero();
  for (const Vec3& q : positions) {
    for (const Vec3& off : s.antenna_offsets) {
      const V3 d = q.cast<LD>() - (s.user_pos.cast<LD>() + off.cast<LD>());
      const V3 u = d / d.norm();
      j += u * u.transpose();
    }
  }
  return static_cast<LD>(s.params.varsigma2) * static_cast<LD>(s.params.c_light) *
         static_cast<LD>(s.params.c_light) * j.inverse().trace();
}

/// Central differences of a long-double valued function; the divisor is the
/// actual distance between the two representable sample points.
template <typename Fn>
GradientField fd_gradient_extended(Fn&& fn, std::span<const Vec3> positions, double h) {
  std::vector<Vec3> work(positions.begin(), positions.end());
  GradientField g(positions.size());
  for (std::size_t n = 0; n < work.size(); ++n) {
    for (int k = 0; k < 3; ++k) {
      const double orig = work[n](k);
      const double hi = orig + h, lo = orig - h;
      work[n](k) = hi;
      const long double plus = fn(std::span<const Vec3>(work));
      work[n](k) = lo;
      const long double minus = fn(std::span<const Vec3>(work));
      work[n](k) = orig;
      g[n](k) = static_cast<double>((plus - minus) / (static_cast<long double>(hi) - static_cast<long double>(lo)));
    }
  }
  return g;
}

struct GradientCheck {
  int scenarios = 0;
  double max_rel_rate = 0.0;
  double max_rel_crb = 0.0;
};

/// Componentwise |a - f| / max(|a|, |f|), with differences below `floor` counted as zero.
inline double max_relative_error(const GradientField& analytic, const GradientField& fd, double floor) {
  double worst = 0.0;
  for (std::size_t n = 0; n < analytic.size(); ++n) {
    for (int k = 0; k < 3; ++k) {
      const double a = analytic[n](k), f = fd[n](k);
      const double diff = std::abs(a - f);
      if (diff <= floor) continue;
      worst = std::max(worst, diff / std::max(std::abs(a), std::abs(f)));
    }
  }
  return worst;
}

/// Analytic metric gradients against central differences (step h_rate for the
/// rate, h_crb for the CRB) on `count` random scenarios with N in [2,5], M in [1,4]
/// (N M >= 3) and user distances in [20, 200] m.
inline GradientCheck check_gradients(const ExperimentConfig& recipe, int count, std::uint64_t seed,
                                     double h_rate = 1e-6, double h_crb = 1e-4, double floor = 1e-12) {
  GradientCheck out;
  std::mt19937_64 pick(seed);
  for (int i = 0; i < count; ++i) {
    int n = 0, m = 0;
    while (n * m < 3) {  // fewer than three links leave the FIM singular
      n = 2 + static_cast<int>(pick() % 4);
      m = 1 + static_cast<int>(pick() % 4);
    }
    const Scenario s = random_shell_scenario(recipe, n, m, 20.0, 200.0, pick());
    const std::span<const Vec3> q(s.initial_positions);
    const GradientField fd_rate =
        fd_gradient_extended([&](std::span<const Vec3> p) { return rate_extended(p, s); }, q, h_rate);
    const GradientField fd_crb =
        fd_gradient_extended([&](std::span<const Vec3> p) { return crb_extended(p, s); }, q, h_crb);
    out.max_rel_rate = std::max(out.max_rel_rate, max_relative_error(grad_rate(q, s), fd_rate, floor));
    out.max_rel_crb = std::max(out.max_rel_crb, max_relative_error(grad_crb(q, s), fd_crb, floor));
    ++out.scenarios;
  }
  return out;
}

inline nlohmann::json to_json(const ResultRow& r) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  nlohmann::json j{{"scheme", to_string(r.scheme)},
                   {"N", r.n},
                   {"M", r.m},
                   {"omega", r.omega},
                   {"seed", r.seed},
                   {"rate_nats", num(r.rate_nats)},
                   {"crb_m2", num(r.crb_m2)},
                   {"objective", num(r.objective)},
                   {"iters_run", r.iters_run},
                   {"wall_time_s", r.wall_time_s}};
  if (!r.ok()) j["error"] = r.error;
  return j;
}

inline nlohmann::json manifest(const ExperimentConfig& c) {
  nlohmann::json schemes = nlohmann::json::array();
  for (Scheme s : c.schemes) schemes.push_back(to_string(s));
  return nlohmann::json{
      {"scenario",
       {{"cube_side", c.cube_side},
        {"offset_range", c.offset_range},
        {"user_pos", {0.0, 0.0, 0.0}},
        {"r_max", c.r_max},
        {"beta0", c.params.beta0},
        {"gamma", c.params.gamma},
        {"lambda_c", c.params.lambda_c},
        {"sigma2", c.params.sigma2},
        {"varsigma2", c.params.varsigma2},
        {"c_light", c.params.c_light}}},
      {"admm",
       {{"rho", c.admm.rho},
        {"eta", c.admm.eta},
        {"inner_steps", c.admm.inner_steps},
        {"max_iters", c.admm.max_iters},
        {"eps_primal", c.admm.eps_primal},
        {"eps_dual", c.admm.eps_dual}}},
      {"sweep",
       {{"n", c.n_list},
        {"m", c.m_list},
        {"omega", c.omega_list},
        {"seed", c.seed},
        {"num_seeds", c.num_seeds},
        {"seeds", c.seeds()},
        {"schemes", schemes}}},
      {"output",
       {{"format", c.format},
        {"rate_units", c.rate_units},
        {"record_wall_time", c.record_wall_time}}}};
}

/// Inverse of manifest(); output directory and job count are not part of it.
inline ExperimentConfig config_from_manifest(const nlohmann::json& j) {
  ExperimentConfig c;
  const auto& s = j.at("scenario");
  c.cube_side = s.at("cube_side");
  c.offset_range = s.at("offset_range");
  c.r_max = s.at("r_max");
  c.params.beta0 = s.at("beta0");
  c.params.gamma = s.at("gamma");
  c.params.lambda_c = s.at("lambda_c");
  c.params.sigma2 = s.at("sigma2");
  c.params.varsigma2 = s.at("varsigma2");
  c.params.c_light = s.at("c_light");
  const auto& a = j.at("admm");
  c.admm.rho = a.at("rho");
  c.admm.eta = a.at("eta");
  c.admm.inner_steps = a.at("inner_steps");
  c.admm.max_iters = a.at("max_iters");
  c.admm.eps_primal = a.at("eps_primal");
  c.admm.eps_dual = a.at("eps_dual");
  const auto& w = j.at("sweep");
  c.n_list = w.at("n").get<std::vector<int>>();
  c.m_list = w.at("m").get<std::vector<int>>();
  c.omega_list = w.at("omega").get<std::vector<double>>();
  c.seed = w.at("seed");
  c.num_seeds = w.at("num_seeds");
  c.schemes.clear();
  for (const auto& name : w.at("schemes")) c.schemes.push_back(parse_scheme(name.get<std::string>()));
  const auto& o = j.at("output");
  c.format = o.at("format");
  c.rate_units = o.at("rate_units");
  c.record_wall_time = o.at("record_wall_time");
  return c;
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing: " + std::strerror(errno));
  f << text;
  f.close();
  if (!f) throw std::runtime_error("write to " + path.string() + " failed");
}

/// Writes results.csv (and results.json for format json), one trace file per
/// optimized cell, summary.csv, pareto.csv, failures.csv, timings.csv and
/// manifest.json into cfg.out_dir.
inline void emit(const SweepResult& sweep, const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  const fs::path dir(cfg.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());

  const std::vector<ResultRow> rows = sweep.rows();
  write_file(dir / "results.csv", results_csv(rows));
  if (cfg.format == "json") {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : rows) arr.push_back(to_json(r));
    write_file(dir / "results.json", arr.dump(2) + "\n");
  }

  std::string failures = "cell,error\n";
  std::string timings = "cell,wall_time_s\n";
  for (const CellOutcome& c : sweep.cells) {
    if (c.row.scheme == Scheme::Optimized && c.row.ok()) write_file(dir / ("trace_" + c.cell_id + ".csv"), trace_csv(c.trace));
    if (!c.row.ok()) {
      std::string msg = c.row.error;
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      std::replace(msg.begin(), msg.end(), ',', ';');
      failures += c.cell_id + "," + msg + "\n";
    }
    timings += c.cell_id + "," + format_number(c.measured_wall_time_s) + "\n";
  }
  write_file(dir / "failures.csv", failures);
  write_file(dir / "timings.csv", timings);

  const auto means = aggregate(rows);
  std::string summary = "scheme,N,M,omega,seeds_ok,seeds_failed,rate_nats,crb_m2,objective\n";
  for (const CellMean& c : means) {
    summary += std::string(to_string(c.scheme)) + "," + std::to_string(c.n) + "," + std::to_string(c.m) + "," +
               format_number(c.omega) + "," + std::to_string(c.count) + "," + std::to_string(c.failed) + "," +
               format_number(c.rate_nats) + "," + format_number(c.crb_m2) + "," + format_number(c.objective) + "\n";
  }
  write_file(dir / "summary.csv", summary);

  std::string pareto = "N,M,omega,rate_nats,crb_m2,dominated\n";
  for (const ParetoPoint& p : pareto_front(means)) {
    pareto += std::to_string(p.n) + "," + std::to_string(p.m) + "," + format_number(p.omega) + "," +
              format_number(p.rate_nats) + "," + format_number(p.crb_m2) + "," + (p.dominated ? "1" : "0") + "\n";
  }
  write_file(dir / "pareto.csv", pareto);

  nlohmann::json man = manifest(cfg);
  man["cells"] = sweep.cells.size();
  man["failures"] = sweep.failures();
  write_file(dir / "manifest.json", man.dump(2) + "\n");
}

}  // namespace swarm_isac
