#pragma once

#include <cmath>
#include <complex>
#include <span>
#include <vector>

#include "swarm_isac/metrics.hpp"

namespace swarm_isac {

/// One gradient vector per UAV, in objective units per meter.
struct GradientField {
  std::vector<Vec3> per_uav;

  GradientField() = default;
  explicit GradientField(std::size_t n) : per_uav(n, Vec3::Zero()) {}

  std::size_t size() const { return per_uav.size(); }
  Vec3& operator[](std::size_t n) { return per_uav[n]; }
  const Vec3& operator[](std::size_t n) const { return per_uav[n]; }
};

/// Rate gradient from a prepared channel and its Gram factor.
///
/// The matrix gradient of R is W = (2/sigma2) A^{-1} H, and each channel entry moves
/// along d_{n,m} as
///   dh/dz = beta0 (-gamma / r^{gamma+2} - j k / r^{gamma+1}) e^{-j k r} d_{n,m}
///         = h_{n,m} (-gamma / r^2 - j k / r) d_{n,m},          k = 2 pi / lambda,
/// so grad_n = sum_m Re{ conj(W_{n,m}) dh/dz }. The second form reuses the channel
/// entry instead of re-evaluating the power and the phase.
inline GradientField rate_gradient(const LinkTable& links, const ChannelMatrix& h,
                                   const GramFactor& gram, const ChannelParams& p) {
  const Eigen::MatrixXcd weight = (2.0 / p.sigma2) * gram.solve_a_h();
  const double k = wavenumber(p);
  GradientField g(links.num_uavs);
  for (std::size_t n = 0; n < links.num_uavs; ++n) {
    const auto row = static_cast<Eigen::Index>(n);
    for (std::size_t m = 0; m < links.num_antennas; ++m) {
      const auto col = static_cast<Eigen::Index>(m);
      const std::size_t i = links.index(n, m);
      const double r = links.r[i];
      const std::complex<double> dh = h(row, col) * std::complex<double>(-p.gamma / (r * r), -k / r);
      g[n] += (std::conj(weight(row, col)) * dh).real() * links.d[i];
    }
  }
  return g;
}

/// d(u u^T)/d z_k = (1/r) [ (I - u u^T) e_k u^T + u e_k^T (I - u u^T) ].
inline Mat3 outer_product_derivative(const Vec3& u, double r, int k) {
  const Mat3 proj = Mat3::Identity() - u * u.transpose();
  const Vec3 e = Vec3::Unit(k);
  return ((proj * e) * u.transpose() + u * (e.transpose() * proj)) / r;
}

/// CRB gradient: component k of UAV n is
///   -varsigma^2 c^2 tr( J^{-1} (sum_m d(u u^T)/dz_k) J^{-1} ).
/// With B = J^{-2} symmetric, tr(J^{-1} d(u u^T)/dz_k J^{-1}) = (2/r) [(I - u u^T) B u]_k,
/// which is what the loop accumulates.
inline GradientField crb_gradient(const LinkTable& links, const Mat3& j_inv, const ChannelParams& p) {
  const double scale = p.crb_scale();
  const Mat3 b = j_inv * j_inv;
  GradientField g(links.num_uavs);
  for (std::size_t n = 0; n < links.num_uavs; ++n) {
    Vec3 acc = Vec3::Zero();
    for (std::size_t m = 0; m < links.num_antennas; ++m) {
      const std::size_t i = links.index(n, m);
      const Vec3& u = links.u[i];
      const Vec3 bu = b * u;
      acc += (2.0 / links.r[i]) * (bu - u * u.dot(bu));
    }
    g[n] = -scale * acc;
  }
  return g;
}

/// Reference form of crb_gradient that assembles the outer-product derivative
/// matrices explicitly. Used as the second algebraic route in tests.
inline GradientField crb_gradient_by_trace(const LinkTable& links, const Mat3& j_inv,
                                           const ChannelParams& p) {
  const double scale = p.crb_scale();
  GradientField g(links.num_uavs);
  for (std::size_t n = 0; n < links.num_uavs; ++n) {
    Mat3 dj[3] = {Mat3::Zero(), Mat3::Zero(), Mat3::Zero()};
    for (std::size_t m = 0; m < links.num_antennas; ++m) {
      const std::size_t i = links.index(n, m);
      for (int k = 0; k < 3; ++k) dj[k] += outer_product_derivative(links.u[i], links.r[i], k);
    }
    for (int k = 0; k < 3; ++k) g[n](k) = -scale * (j_inv * dj[k] * j_inv).trace();
  }
  return g;
}

inline GradientField grad_rate(std::span<const Vec3> positions, const Scenario& scenario) {
  const LinkTable links = make_links(positions, scenario);
  const ChannelMatrix h = build_channel(links, scenario.params);
  const GramFactor gram(h, scenario.params.sigma2);
  return rate_gradient(links, h, gram, scenario.params);
}

inline GradientField grad_crb(std::span<const Vec3> positions, const Scenario& scenario) {
  const LinkTable links = make_links(positions, scenario);
  return crb_gradient(links, checked_fim_inverse(fim(links)), scenario.params);
}

/// Metrics and both metric gradients from one pass over the link geometry.
struct Evaluation {
  MetricReport report;
  GradientField rate_grad;
  GradientField crb_grad;
};

inline Evaluation evaluate(std::span<const Vec3> positions, const Scenario& scenario) {
  const LinkTable links = make_links(positions, scenario);
  const ChannelMatrix h = build_channel(links, scenario.params);
  const GramFactor gram(h, scenario.params.sigma2);
  const Mat3 j_inv = checked_fim_inverse(fim(links));
  Evaluation ev;
  ev.report = make_report(gram.log_det(), scenario.params.crb_scale() * j_inv.trace(), scenario.omega);
  ev.rate_grad = rate_gradient(links, h, gram, scenario.params);
  ev.crb_grad = crb_gradient(links, j_inv, scenario.params);
  return ev;
}

/// -grad R + omega grad CRB + rho z_n - rho q_n - mu_n, given the metric gradients at z.
inline GradientField consensus_gradient(const Evaluation& ev, std::span<const Vec3> z,
                                        std::span<const Vec3> q_next, std::span<const Vec3> mu,
                                        double rho, double omega) {
  if (z.size() != q_next.size() || z.size() != mu.size() || z.size() != ev.rate_grad.size()) {
    throw std::invalid_argument("consensus gradient: Z, Q and Mu lengths differ");
  }
  GradientField g(z.size());
  for (std::size_t n = 0; n < z.size(); ++n) {
    g[n] = -ev.rate_grad[n] + omega * ev.crb_grad[n] + rho * z[n] - rho * q_next[n] - mu[n];
  }
  return g;
}

/// Gradient of f(Z) + (rho/2) sum ||q_n - z_n + mu_n / rho||^2 with respect to every z_n.
inline GradientField grad_consensus_objective(std::span<const Vec3> z, std::span<const Vec3> q_next,
                                              std::span<const Vec3> mu, double rho,
                                              const Scenario& scenario) {
  return consensus_gradient(evaluate(z, scenario), z, q_next, mu, rho, scenario.omega);
}

/// Central-difference gradient of a scalar function of all UAV positions.
template <typename Fn>
GradientField fd_gradient(Fn&& fn, std::span<const Vec3> positions, double h) {
  if (!(h > 0)) throw std::invalid_argument("finite-difference step must be positive");
  std::vector<Vec3> work(positions.begin(), positions.end());
  GradientField g(positions.size());
  for (std::size_t n = 0; n < work.size(); ++n) {
    for (int k = 0; k < 3; ++k) {
      const double orig = work[n](k);
      work[n](k) = orig + h;
      const double plus = fn(std::span<const Vec3>(work));
      work[n](k) = orig - h;
      const double minus = fn(std::span<const Vec3>(work));
      work[n](k) = orig;
      g[n](k) = (plus - minus) / (2.0 * h);
    }
  }
  return g;
}

}  // namespace swarm_isac
