#pragma once

#include <cmath>
#include <span>
#include <string>

#include <Eigen/Dense>

#include "swarm_isac/core_model.hpp"

namespace swarm_isac {

/// Smallest FIM eigenvalue accepted by crb(); below it the swarm geometry is
/// treated as degenerate.
inline constexpr double kSingularFimTol = 1e-9;

/// Unscaled Fisher information: sum over all links of u u^T. The 1/(varsigma^2 c^2)
/// factor is applied only where the CRB and its gradient are formed.
struct Fim {
  Mat3 j = Mat3::Zero();
};

struct MetricReport {
  double rate_nats = 0.0;
  double crb_m2 = 0.0;
  double objective = 0.0;
};

/// Cholesky factor of the smaller of the two rate Gram matrices,
///   A = I_N + H H^H / sigma2   (N <= M)   or   B = I_M + H^H H / sigma2   (N > M).
/// Both have the same determinant. When N > M the N x N form is dominated by unit
/// eigenvalues sitting under entries of order |h|^2 / sigma2 and its factorization
/// loses most of their digits.
class GramFactor {
 public:
  GramFactor(const ChannelMatrix& h, double sigma2) : h_(h), sigma2_(sigma2) {
    if (!(sigma2 > 0)) throw std::invalid_argument("sigma2 must be positive");
    if (!h.allFinite()) throw NumericalFailure("channel matrix has non-finite entries");
    tall_ = h.rows() > h.cols();
    const auto dim = tall_ ? h.cols() : h.rows();
    Eigen::MatrixXcd gram = Eigen::MatrixXcd::Identity(dim, dim);
    if (tall_) {
      gram.selfadjointView<Eigen::Lower>().rankUpdate(h.adjoint(), 1.0 / sigma2);
    } else {
      gram.selfadjointView<Eigen::Lower>().rankUpdate(h, 1.0 / sigma2);
    }
    llt_.compute(gram);
    if (llt_.info() != Eigen::Success) {
      throw NumericalFailure("Cholesky factorization of the rate Gram matrix failed");
    }
  }

  double log_det() const {
    double acc = 0.0;
    const auto& l = llt_.matrixLLT();
    for (Eigen::Index i = 0; i < l.rows(); ++i) acc += std::log(l(i, i).real());
    return 2.0 * acc;
  }

  /// A^{-1} H. For N > M uses the push-through identity A^{-1} H = H B^{-1}.
  Eigen::MatrixXcd solve_a_h() const {
    if (!tall_) return llt_.solve(h_);
    return llt_.solve(h_.adjoint()).adjoint();
  }

 private:
  ChannelMatrix h_;
  double sigma2_;
  bool tall_ = false;
  Eigen::LLT<Eigen::MatrixXcd> llt_;
};

/// R = ln det(I_N + H H^H / sigma2), in nats.
inline double achievable_rate(const ChannelMatrix& h, double sigma2) {
  return GramFactor(h, sigma2).log_det();
}

inline Fim fim(const LinkTable& links) {
  Fim out;
  for (std::size_t m = 0; m < links.num_antennas; ++m) {
    for (std::size_t n = 0; n < links.num_uavs; ++n) {
      const Vec3& u = links.u[links.index(n, m)];
      out.j.noalias() += u * u.transpose();
    }
  }
  return out;
}

inline Fim fim(std::span<const Vec3> positions, const Scenario& scenario) {
  return fim(make_links(positions, scenario));
}

inline Mat3 symmetrized(const Mat3& a) { return 0.5 * (a + a.transpose()); }

/// Inverse of a symmetric positive definite 3x3 matrix by pivoted LDL^T in long double.
inline Mat3 inverse_sym3(const Mat3& input) {
  using LD3 = Eigen::Matrix<long double, 3, 3>;
  const Eigen::LDLT<LD3> ldlt(symmetrized(input).cast<long double>());
  return ldlt.solve(LD3::Identity()).cast<double>();
}

inline double min_eigenvalue(const Fim& f) {
  Eigen::SelfAdjointEigenSolver<Mat3> es(symmetrized(f.j), Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

/// J^{-1} after checking invertibility against kSingularFimTol.
inline Mat3 checked_fim_inverse(const Fim& f) {
  const double lo = min_eigenvalue(f);
  if (!(lo > kSingularFimTol)) {
    throw SingularFim("FIM smallest eigenvalue " + std::to_string(lo) + " <= " +
                          std::to_string(kSingularFimTol),
                      lo);
  }
  return inverse_sym3(f.j);
}

inline double crb_from_fim(const Fim& f, const ChannelParams& params) {
  return params.crb_scale() * checked_fim_inverse(f).trace();
}

inline double crb(std::span<const Vec3> positions, const Scenario& scenario) {
  return crb_from_fim(fim(positions, scenario), scenario.params);
}

inline MetricReport make_report(double rate, double crb_m2, double omega) {
  return {rate, crb_m2, -rate + omega * crb_m2};
}

inline MetricReport objective(std::span<const Vec3> positions, const Scenario& scenario) {
  const LinkTable links = make_links(positions, scenario);
  const double rate = achievable_rate(build_channel(links, scenario.params), scenario.params.sigma2);
  return make_report(rate, crb_from_fim(fim(links), scenario.params), scenario.omega);
}

}  // namespace swarm_isac
