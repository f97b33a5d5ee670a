#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "swarm_isac/errors.hpp"

namespace swarm_isac {

/// 3D Cartesian coordinate in meters.
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// N x M complex LoS channel, row n = UAV, column m = user antenna.
using ChannelMatrix = Eigen::MatrixXcd;

/// Minimum UAV-antenna separation [m]. Guards the r -> 0 singularity of the
/// channel amplitude, the unit vectors and every gradient.
inline constexpr double kMinSeparation = 1e-3;

struct ChannelParams {
  double beta0 = 1.0;      // reference gain at unit distance
  double gamma = 2.0;      // path-loss exponent
  double lambda_c = 0.1;   // carrier wavelength [m]
  double sigma2 = 1e-12;   // receiver noise variance
  double varsigma2 = 1e-15;  // delay-measurement noise variance [s^2]
  double c_light = 3e8;    // [m/s]

  /// varsigma^2 * c^2, the CRB prefactor [m^2].
  double crb_scale() const { return varsigma2 * c_light * c_light; }
};

struct Scenario {
  Vec3 user_pos = Vec3::Zero();
  std::vector<Vec3> antenna_offsets;
  std::vector<Vec3> initial_positions;
  double r_max = 20.0;
  double omega = 1.0;
  ChannelParams params;

  std::size_t num_uavs() const { return initial_positions.size(); }
  std::size_t num_antennas() const { return antenna_offsets.size(); }
};

inline bool is_finite(const Vec3& v) { return v.allFinite(); }

inline void validate(const ChannelParams& p) {
  if (!(p.beta0 > 0 && p.gamma > 0 && p.lambda_c > 0 && p.sigma2 > 0 && p.varsigma2 > 0 &&
        p.c_light > 0)) {
    throw std::invalid_argument("channel parameters must all be strictly positive");
  }
}

inline Vec3 antenna_position(const Scenario& scenario, std::size_t m) {
  if (m >= scenario.antenna_offsets.size()) {
    throw std::out_of_range("antenna index " + std::to_string(m) + " out of range (M = " +
                            std::to_string(scenario.antenna_offsets.size()) + ")");
  }
  return scenario.user_pos + scenario.antenna_offsets[m];
}

struct LinkGeometry {
  Vec3 d;     // q - antenna
  double r;   // |d|
  Vec3 u;     // d / r
};

inline LinkGeometry link_geometry(const Vec3& q, const Vec3& antenna) {
  LinkGeometry g;
  g.d = q - antenna;
  g.r = g.d.norm();
  if (!(g.r >= kMinSeparation)) {
    throw DegenerateGeometry("UAV-antenna separation " + std::to_string(g.r) +
                             " m is below the minimum " + std::to_string(kMinSeparation) + " m");
  }
  g.u = g.d / g.r;
  return g;
}

/// Wavenumber 2*pi/lambda.
inline double wavenumber(const ChannelParams& params) {
  return 2.0 * std::numbers::pi / params.lambda_c;
}

inline std::complex<double> channel_coeff(double r, const ChannelParams& params) {
  if (!(r >= kMinSeparation)) {
    throw DegenerateGeometry("link distance " + std::to_string(r) + " m is below the minimum");
  }
  const double amplitude = params.beta0 / std::pow(r, params.gamma);
  return std::polar(amplitude, -wavenumber(params) * r);
}

/// Geometry of every UAV-antenna link, stored UAV-major (index n * M + m).
struct LinkTable {
  std::size_t num_uavs = 0;
  std::size_t num_antennas = 0;
  std::vector<Vec3> d;
  std::vector<double> r;
  std::vector<Vec3> u;

  std::size_t index(std::size_t n, std::size_t m) const { return n * num_antennas + m; }
};

/// Throws DegenerateGeometry naming the first link (in antenna-major order)
/// closer than kMinSeparation.
inline LinkTable make_links(std::span<const Vec3> positions, const Scenario& scenario) {
  LinkTable t;
  t.num_uavs = positions.size();
  t.num_antennas = scenario.num_antennas();
  const std::size_t count = t.num_uavs * t.num_antennas;
  t.d.resize(count);
  t.r.resize(count);
  t.u.resize(count);
  for (std::size_t m = 0; m < t.num_antennas; ++m) {
    const Vec3 antenna = antenna_position(scenario, m);
    for (std::size_t n = 0; n < t.num_uavs; ++n) {
      const std::size_t i = t.index(n, m);
      t.d[i] = positions[n] - antenna;
      t.r[i] = t.d[i].norm();
      if (!(t.r[i] >= kMinSeparation)) {
        throw DegenerateGeometry("link (uav " + std::to_string(n) + ", antenna " +
                                     std::to_string(m) + ") has separation " +
                                     std::to_string(t.r[i]) + " m",
                                 static_cast<long>(n), static_cast<long>(m));
      }
      t.u[i] = t.d[i] / t.r[i];
    }
  }
  return t;
}

inline ChannelMatrix build_channel(const LinkTable& links, const ChannelParams& params) {
  ChannelMatrix h(static_cast<Eigen::Index>(links.num_uavs),
                  static_cast<Eigen::Index>(links.num_antennas));
  for (std::size_t n = 0; n < links.num_uavs; ++n) {
    for (std::size_t m = 0; m < links.num_antennas; ++m) {
      h(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m)) =
          channel_coeff(links.r[links.index(n, m)], params);
    }
  }
  return h;
}

inline ChannelMatrix build_channel(std::span<const Vec3> positions, const Scenario& scenario) {
  return build_channel(make_links(positions, scenario), scenario.params);
}

/// Checks the structural invariants of a scenario; throws std::invalid_argument
/// or DegenerateGeometry.
inline void validate(const Scenario& s) {
  if (s.num_uavs() < 1) throw std::invalid_argument("scenario needs at least one UAV");
  if (s.num_antennas() < 1) throw std::invalid_argument("scenario needs at least one antenna");
  if (!(s.r_max > 0)) throw std::invalid_argument("r_max must be positive");
  if (!(s.omega >= 0)) throw std::invalid_argument("omega must be non-negative");
  validate(s.params);
  if (!is_finite(s.user_pos)) throw std::invalid_argument("user position is not finite");
  for (const auto& off : s.antenna_offsets) {
    if (!is_finite(off)) throw std::invalid_argument("antenna offset is not finite");
  }
  for (std::size_t n = 0; n < s.num_uavs(); ++n) {
    if (!is_finite(s.initial_positions[n])) {
      throw std::invalid_argument("initial position " + std::to_string(n) + " is not finite");
    }
    for (std::size_t m = 0; m < s.num_antennas(); ++m) {
      const double r = (s.initial_positions[n] - antenna_position(s, m)).norm();
      if (!(r >= kMinSeparation)) {
        throw DegenerateGeometry("initial position of uav " + std::to_string(n) +
                                     " is too close to antenna " + std::to_string(m),
                                 static_cast<long>(n), static_cast<long>(m));
      }
    }
  }
}

}  // namespace swarm_isac
