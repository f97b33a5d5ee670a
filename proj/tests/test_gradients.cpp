#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "support.hpp"
#include "swarm_isac/gradients.hpp"

using namespace swarm_isac;
using testsupport::max_rel_error;

namespace {

Scenario oracle_scenario(std::mt19937_64& g) {
  int n = 0, m = 0;
  while (n * m < 3) {
    n = 2 + static_cast<int>(g() % 4);
    m = 1 + static_cast<int>(g() % 4);
  }
  return testsupport::shell_scenario(g, n, m, 20.0, 200.0);
}

}  // namespace

TEST(GradRate, MatchesFiniteDifferences) {
  std::mt19937_64 g(2024);
  for (int t = 0; t < 20; ++t) {
    const Scenario s = oracle_scenario(g);
    const std::span<const Vec3> q(s.initial_positions);
    const auto fd = testsupport::central_diff([&](auto p) { return testsupport::rate_ld(p, s); }, q, 1e-6);
    EXPECT_LT(max_rel_error(grad_rate(q, s), fd, q.size()), 1e-4) << "scenario " << t;
  }
}

TEST(GradRate, SingleLinkOnAxisHasNoTransverseComponent) {
  Scenario s;
  s.antenna_offsets = {Vec3::Zero()};
  s.initial_positions = {Vec3(37.3, 0, 0)};
  const GradientField gr = grad_rate(s.initial_positions, s);
  EXPECT_EQ(gr[0](1), 0.0);
  EXPECT_EQ(gr[0](2), 0.0);
}

TEST(GradRate, RadialComponentNegativeOnSingleLink) {
  std::mt19937_64 g(9);
  for (int t = 0; t < 10; ++t) {
    const Scenario s = testsupport::shell_scenario(g, 1, 1, 5.0, 200.0);
    const Vec3 u = (s.initial_positions[0] - s.antenna_offsets[0]).normalized();
    EXPECT_LT(grad_rate(s.initial_positions, s)[0].dot(u), 0.0);
  }
}

TEST(GradCrb, MatchesFiniteDifferences) {
  std::mt19937_64 g(77);
  for (int t = 0; t < 20; ++t) {
    const Scenario s = oracle_scenario(g);
    const std::span<const Vec3> q(s.initial_positions);
    const auto fd = testsupport::central_diff([&](auto p) { return testsupport::crb_ld(p, s); }, q, 1e-4);
    EXPECT_LT(max_rel_error(grad_crb(q, s), fd, q.size()), 1e-5) << "scenario " << t;
  }
}

TEST(GradCrb, TraceFormAndCompactFormAgree) {
  std::mt19937_64 g(12);
  for (int t = 0; t < 30; ++t) {
    const Scenario s = testsupport::shell_scenario(g, 5, 3);
    const LinkTable links = make_links(s.initial_positions, s);
    const Mat3 j_inv = checked_fim_inverse(fim(links));
    const GradientField a = crb_gradient(links, j_inv, s.params);
    const GradientField b = crb_gradient_by_trace(links, j_inv, s.params);
    EXPECT_LT(max_rel_error(a, b, a.size(), 1e-14), 1e-10);
  }
}

TEST(GradCrb, OrthogonalToOwnRayForSingleAntenna) {
  std::mt19937_64 g(13);
  for (int t = 0; t < 30; ++t) {
    const Scenario s = testsupport::shell_scenario(g, 4, 1, 10.0, 100.0);
    const GradientField gc = grad_crb(s.initial_positions, s);
    for (std::size_t n = 0; n < gc.size(); ++n) {
      const Vec3 u = (s.initial_positions[n] - s.antenna_offsets[0]).normalized();
      EXPECT_NEAR(gc[n].dot(u), 0.0, 1e-10 * std::max(1.0, gc[n].norm()));
    }
  }
}

TEST(GradCrb, AxesConfiguration) {
  Scenario s;
  s.antenna_offsets = {Vec3::Zero()};
  s.initial_positions = {Vec3(20, 0, 0), Vec3(0, 20, 0), Vec3(0, 0, 20)};
  const GradientField gc = grad_crb(s.initial_positions, s);
  for (int n = 0; n < 3; ++n) EXPECT_NEAR(gc[n](n), 0.0, 1e-10);
  // J = I: each link contributes (2/r)(I - u u^T) u = 0, so the whole field vanishes
  for (int n = 0; n < 3; ++n) EXPECT_LE(gc[n].norm(), 1e-10);
}

TEST(Gradients, RotationEquivariance) {
  std::mt19937_64 g(99);
  for (int t = 0; t < 20; ++t) {
    const Scenario s = testsupport::shell_scenario(g, 4, 3, 20.0, 120.0, testsupport::random_box(g, 5));
    const Eigen::Matrix3d rot = testsupport::random_rotation(g);
    const Scenario r = testsupport::rotated(s, rot);
    const GradientField gr_s = grad_rate(s.initial_positions, s), gr_r = grad_rate(r.initial_positions, r);
    const GradientField gc_s = grad_crb(s.initial_positions, s), gc_r = grad_crb(r.initial_positions, r);
    for (std::size_t n = 0; n < 4; ++n) {
      EXPECT_LE((rot * gr_s[n] - gr_r[n]).norm(), 1e-8 * gr_s[n].norm());
      EXPECT_LE((rot * gc_s[n] - gc_r[n]).norm(), 1e-8 * gc_s[n].norm());
    }
  }
}

TEST(ConsensusGradient, ReducesToMetricGradients) {
  std::mt19937_64 g(5);
  Scenario s = testsupport::shell_scenario(g, 4, 2);
  s.omega = 2.5;
  const std::span<const Vec3> z(s.initial_positions);
  const std::vector<Vec3> zero(4, Vec3::Zero());
  const GradientField gr = grad_rate(z, s), gc = grad_crb(z, s);
  const GradientField full = grad_consensus_objective(z, z, zero, 1.0, s);
  for (int n = 0; n < 4; ++n) EXPECT_LE((full[n] - (-gr[n] + s.omega * gc[n])).norm(), 1e-12 * (gr[n].norm() + s.omega * gc[n].norm()));

  const std::vector<Vec3> q(4, Vec3(1, 2, 3));
  const GradientField no_rho = grad_consensus_objective(z, q, zero, 0.0, s);
  for (int n = 0; n < 4; ++n) EXPECT_LE((no_rho[n] - (-gr[n] + s.omega * gc[n])).norm(), 1e-12 * (gr[n].norm() + s.omega * gc[n].norm()));
}

TEST(ConsensusGradient, AffineInZAndMu) {
  std::mt19937_64 g(6);
  Scenario s = testsupport::shell_scenario(g, 3, 3);
  const std::span<const Vec3> z(s.initial_positions);
  const Evaluation ev = evaluate(z, s);
  std::vector<Vec3> q(3), mu1(3), mu2(3), z2(3);
  for (int n = 0; n < 3; ++n) {
    q[n] = testsupport::random_box(g, 50);
    mu1[n] = testsupport::random_box(g, 1);
    mu2[n] = testsupport::random_box(g, 1);
    z2[n] = testsupport::random_box(g, 50);
  }
  const double rho = 1.7;
  // metric part held fixed: differences are linear in (z, mu)
  const GradientField a = consensus_gradient(ev, z, q, mu1, rho, s.omega);
  const GradientField b = consensus_gradient(ev, z2, q, mu2, rho, s.omega);
  for (int n = 0; n < 3; ++n) {
    const Vec3 expect = rho * (z[n] - z2[n]) - (mu1[n] - mu2[n]);
    EXPECT_LE((a[n] - b[n] - expect).norm(), 1e-10 * (1 + expect.norm()));
  }
}

TEST(ConsensusGradient, MatchesFiniteDifferencesOfSubproblem) {
  std::mt19937_64 g(31337);
  for (int t = 0; t < 10; ++t) {
    Scenario s = testsupport::shell_scenario(g, 3, 2, 20.0, 200.0);
    s.omega = 1.0;
    const std::span<const Vec3> z(s.initial_positions);
    std::vector<Vec3> q(3), mu(3);
    for (int n = 0; n < 3; ++n) {
      q[n] = z[n] + testsupport::random_box(g, 1.0);
      mu[n] = testsupport::random_box(g, 0.1);
    }
    const double rho = 1.0;
    auto sub = [&](std::span<const Vec3> p) {
      long double v = -testsupport::rate_ld(p, s) + s.omega * testsupport::crb_ld(p, s);
      for (int n = 0; n < 3; ++n) {
        const Eigen::Matrix<long double, 3, 1> r = (q[n] - p[n]).cast<long double>() + mu[n].cast<long double>() / rho;
        v += rho / 2 * r.squaredNorm();
      }
      return v;
    };
    const auto fd = testsupport::central_diff(sub, z, 1e-6);
    EXPECT_LT(max_rel_error(grad_consensus_objective(z, q, mu, rho, s), fd, 3), 1e-4) << t;
  }
}

TEST(Evaluate, AgreesWithSeparateCalls) {
  std::mt19937_64 g(1);
  const Scenario s = testsupport::shell_scenario(g, 6, 2);
  const std::span<const Vec3> z(s.initial_positions);
  const Evaluation ev = evaluate(z, s);
  const MetricReport r = objective(z, s);
  EXPECT_EQ(ev.report.rate_nats, r.rate_nats);
  EXPECT_EQ(ev.report.crb_m2, r.crb_m2);
  const GradientField gr = grad_rate(z, s), gc = grad_crb(z, s);
  for (int n = 0; n < 6; ++n) {
    EXPECT_EQ(ev.rate_grad[n], gr[n]);
    EXPECT_EQ(ev.crb_grad[n], gc[n]);
  }
}

TEST(Gradients, ErrorsPropagate) {
  Scenario s;
  s.antenna_offsets = {Vec3::Zero()};
  s.initial_positions = {Vec3(10, 0, 0), Vec3(20, 0, 0), Vec3(30, 0, 0)};
  EXPECT_THROW(grad_crb(s.initial_positions, s), SingularFim);
  const std::vector<Vec3> bad{Vec3::Zero(), Vec3(0, 10, 0), Vec3(0, 0, 10)};
  EXPECT_THROW(grad_rate(bad, s), DegenerateGeometry);
}

TEST(FdGradient, Examples) {
  const std::vector<Vec3> z{Vec3(1, 2, 3)};
  const GradientField sq = fd_gradient([](std::span<const Vec3> p) { return p[0].squaredNorm(); }, z, 1e-6);
  EXPECT_LE((sq[0] - Vec3(2, 4, 6)).cwiseAbs().maxCoeff(), 1e-6);
  const GradientField c = fd_gradient([](std::span<const Vec3>) { return 4.2; }, z, 1e-6);
  EXPECT_EQ(c[0], Vec3::Zero());
  const Vec3 a(0.5, -1.5, 2.0);
  const GradientField lin = fd_gradient([&](std::span<const Vec3> p) { return a.dot(p[0]); }, z, 1e-3);
  EXPECT_LE((lin[0] - a).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_THROW(fd_gradient([](std::span<const Vec3>) { return 0.0; }, z, 0.0), std::invalid_argument);
}
