#pragma once

// Test-side scenario generators and brute-force oracles. Nothing here calls the
// library's own factorizations or gradient code.

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "swarm_isac/core_model.hpp"

namespace testsupport {

using swarm_isac::Scenario;
using swarm_isac::Vec3;

inline Vec3 random_direction(std::mt19937_64& g) {
  std::normal_distribution<double> nd;
  return Vec3(nd(g), nd(g), nd(g)).normalized();
}

inline Vec3 random_box(std::mt19937_64& g, double half) {
  std::uniform_real_distribution<double> u(-half, half);
  return Vec3(u(g), u(g), u(g));
}

/// User at `user`, M offsets in [-0.5, 0.5]^3, N UAVs at distance [r_lo, r_hi] from the user.
inline Scenario shell_scenario(std::mt19937_64& g, int n, int m, double r_lo = 20.0, double r_hi = 200.0,
                               Vec3 user = Vec3::Zero()) {
  Scenario s;
  s.user_pos = user;
  for (int i = 0; i < m; ++i) s.antenna_offsets.push_back(random_box(g, 0.5));
  std::uniform_real_distribution<double> rad(r_lo, r_hi);
  for (int i = 0; i < n; ++i) s.initial_positions.push_back(user + rad(g) * random_direction(g));
  return s;
}

/// Random rotation from a QR decomposition of a Gaussian matrix, det +1.
inline Eigen::Matrix3d random_rotation(std::mt19937_64& g) {
  std::normal_distribution<double> nd;
  Eigen::Matrix3d a;
  for (int i = 0; i < 9; ++i) a(i / 3, i % 3) = nd(g);
  Eigen::Matrix3d q = Eigen::HouseholderQR<Eigen::Matrix3d>(a).householderQ();
  if (q.determinant() < 0) q.col(0) = -q.col(0);
  return q;
}

/// Rotates every antenna offset and UAV position about the user.
inline Scenario rotated(const Scenario& s, const Eigen::Matrix3d& r) {
  Scenario out = s;
  for (auto& d : out.antenna_offsets) d = r * d;
  for (auto& q : out.initial_positions) q = s.user_pos + r * (q - s.user_pos);
  return out;
}

/// Channel entry by the textbook formula.
inline std::complex<double> coeff(const Vec3& q, const Vec3& antenna, const swarm_isac::ChannelParams& p) {
  const double r = (q - antenna).norm();
  const double phase = -2.0 * std::numbers::pi * r / p.lambda_c;
  return p.beta0 / std::pow(r, p.gamma) * std::complex<double>(std::cos(phase), std::sin(phase));
}

inline Eigen::MatrixXcd channel(std::span<const Vec3> q, const Scenario& s) {
  Eigen::MatrixXcd h(q.size(), s.antenna_offsets.size());
  for (std::size_t n = 0; n < q.size(); ++n) {
    for (std::size_t m = 0; m < s.antenna_offsets.size(); ++m) {
      h(n, m) = coeff(q[n], s.user_pos + s.antenna_offsets[m], s.params);
    }
  }
  return h;
}

/// ln det(I_N + H H^H / sigma2) from the determinant of the explicit N x N matrix, in long double.
inline double brute_log_det(const Eigen::MatrixXcd& h, double sigma2) {
  using Mat = Eigen::Matrix<std::complex<long double>, Eigen::Dynamic, Eigen::Dynamic>;
  const Mat hl = h.cast<std::complex<long double>>();
  const Mat a = Mat::Identity(h.rows(), h.rows()) + hl * hl.adjoint() / static_cast<long double>(sigma2);
  return static_cast<double>(std::log(std::abs(Eigen::FullPivLU<Mat>(a).determinant())));
}

/// ln det via the eigenvalues of the smaller Gram matrix.
inline double eigen_log_det(const Eigen::MatrixXcd& h, double sigma2) {
  const Eigen::MatrixXcd gram = h.rows() <= h.cols() ? Eigen::MatrixXcd(h * h.adjoint()) : Eigen::MatrixXcd(h.adjoint() * h);
  const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd>(gram).eigenvalues();
  double sum = 0.0;
  for (double v : ev) sum += std::log1p(std::max(v, 0.0) / sigma2);
  return sum;
}

inline Eigen::Matrix3d unit_vector_sum(std::span<const Vec3> q, const Scenario& s) {
  Eigen::Matrix3d j = Eigen::Matrix3d::Zero();
  for (const Vec3& p : q) {
    for (const Vec3& d : s.antenna_offsets) {
      const Vec3 u = (p - s.user_pos - d).normalized();
      j += u * u.transpose();
    }
  }
  return j;
}

/// varsigma^2 c^2 times the sum of reciprocal eigenvalues of j, solved in long double.
inline double eigen_crb(const Eigen::Matrix3d& j, const swarm_isac::ChannelParams& p) {
  using LD = long double;
  const Eigen::Matrix<LD, 3, 1> ev =
      Eigen::SelfAdjointEigenSolver<Eigen::Matrix<LD, 3, 3>>(j.cast<LD>()).eigenvalues();
  const LD sc = static_cast<LD>(p.varsigma2) * static_cast<LD>(p.c_light) * static_cast<LD>(p.c_light);
  return static_cast<double>(sc * (1 / ev(0) + 1 / ev(1) + 1 / ev(2)));
}

/// Rate in long double through the smaller Gram determinant, for finite differences with
/// steps near 1e-6 m.
inline long double rate_ld(std::span<const Vec3> q, const Scenario& s) {
  using LD = long double;
  using Mat = Eigen::Matrix<std::complex<LD>, Eigen::Dynamic, Eigen::Dynamic>;
  const auto n_uav = static_cast<Eigen::Index>(q.size());
  const auto n_ant = static_cast<Eigen::Index>(s.antenna_offsets.size());
  Mat h(n_uav, n_ant);
  for (Eigen::Index n = 0; n < n_uav; ++n) {
    for (Eigen::Index m = 0; m < n_ant; ++m) {
      const Eigen::Matrix<LD, 3, 1> d =
          q[n].cast<LD>() - s.user_pos.cast<LD>() - s.antenna_offsets[m].cast<LD>();
      const LD r = d.norm();
      const LD phase = -2 * std::numbers::pi_v<LD> * r / static_cast<LD>(s.params.lambda_c);
      h(n, m) = static_cast<LD>(s.params.beta0) / std::pow(r, static_cast<LD>(s.params.gamma)) *
                std::complex<LD>(std::cos(phase), std::sin(phase));
    }
  }
  // det(I + H H^H / s2) = det(I + H^H H / s2); the smaller side keeps the LU well scaled
  const Mat gram = n_uav <= n_ant ? Mat(h * h.adjoint()) : Mat(h.adjoint() * h);
  const Mat a = Mat::Identity(gram.rows(), gram.cols()) + gram / static_cast<LD>(s.params.sigma2);
  return std::log(std::abs(Eigen::FullPivLU<Mat>(a).determinant()));
}

inline long double crb_ld(std::span<const Vec3> q, const Scenario& s) {
  using LD = long double;
  Eigen::Matrix<LD, 3, 3> j = Eigen::Matrix<LD, 3, 3>::Zero();
  for (const Vec3& p : q) {
    for (const Vec3& d : s.antenna_offsets) {
      Eigen::Matrix<LD, 3, 1> u = p.cast<LD>() - s.user_pos.cast<LD>() - d.cast<LD>();
      u /= u.norm();
      j += u * u.transpose();
    }
  }
  const LD sc = static_cast<LD>(s.params.varsigma2) * static_cast<LD>(s.params.c_light) *
                static_cast<LD>(s.params.c_light);
  return sc * j.inverse().trace();
}

/// Central differences of fn, accumulated in long double.
template <typename Fn>
std::vector<Vec3> central_diff(Fn&& fn, std::span<const Vec3> q, double h) {
  std::vector<Vec3> work(q.begin(), q.end());
  std::vector<Vec3> g(q.size());
  for (std::size_t n = 0; n < q.size(); ++n) {
    for (int k = 0; k < 3; ++k) {
      const double x = work[n](k);
      const double hi = x + h, lo = x - h;
      work[n](k) = hi;
      const long double fp = fn(std::span<const Vec3>(work));
      work[n](k) = lo;
      const long double fm = fn(std::span<const Vec3>(work));
      work[n](k) = x;
      g[n](k) = static_cast<double>((fp - fm) / (static_cast<long double>(hi) - static_cast<long double>(lo)));
    }
  }
  return g;
}

/// Componentwise relative error; differences at or below `floor` count as zero.
template <typename A, typename B>
double max_rel_error(const A& analytic, const B& reference, std::size_t n, double floor = 1e-12) {
  double worst = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (int k = 0; k < 3; ++k) {
      const double a = analytic[i](k), b = reference[i](k);
      const double diff = std::abs(a - b);
      if (diff <= floor) continue;
      worst = std::max(worst, diff / std::max(std::abs(a), std::abs(b)));
    }
  }
  return worst;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(a), std::abs(b)); }

}  // namespace testsupport
