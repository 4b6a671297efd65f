#pragma once

// Closed-form error theory for the sequential pseudorange estimators: Fisher
// information, CRLB, bias/variance/RMSE budgets, and numerical checks of the
// CRLB ordering KVD <= PVD <= UVD and of the linear growth of the
// deviated-velocity bias.
//
// Every function here linearizes at the true parameters.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <optional>
#include <vector>

#include "tdbps/errors.hpp"
#include "tdbps/estimators.hpp"
#include "tdbps/model.hpp"

namespace tdbps {

struct FimMatrix {
  Eigen::MatrixXd f;
  Variant variant;
};

template <int N>
struct ErrorBudget {
  Vector<N> bias = Vector<N>::Zero();
  SquareMatrix<N> variance = SquareMatrix<N>::Zero();
  double rmse = 0.0;
};

namespace detail {

// Inverse of a symmetric positive-definite matrix with the same
// equilibrated conditioning limit the solvers use.
inline Eigen::MatrixXd inverse_spd(const Eigen::MatrixXd& f) {
  if (f.rows() != f.cols() || f.rows() == 0) throw DimensionMismatch("matrix must be square and nonempty");
  const Eigen::VectorXd diag = f.diagonal();
  if (!(diag.array() > 0.0).all()) throw RankDeficient("information matrix has a non-positive diagonal");
  const Eigen::VectorXd d = diag.cwiseSqrt().cwiseInverse();
  Eigen::MatrixXd scaled = d.asDiagonal() * f * d.asDiagonal();
  scaled = 0.5 * (scaled + scaled.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(scaled);
  const Eigen::VectorXd& lambda = eig.eigenvalues();
  if (!(lambda(0) > 0.0) || lambda(lambda.size() - 1) / lambda(0) > kMaxNormalCondition) {
    throw RankDeficient("information matrix is singular or ill-conditioned");
  }
  Eigen::MatrixXd inv = d.asDiagonal() * eig.eigenvectors() * lambda.cwiseInverse().asDiagonal() *
                        eig.eigenvectors().transpose() * d.asDiagonal();
  return 0.5 * (inv + inv.transpose());
}

inline double min_eigenvalue(const Eigen::MatrixXd& m) {
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(sym, Eigen::EigenvaluesOnly).eigenvalues()(0);
}

}  // namespace detail

/// F = G^T W G at the true parameters. For KVD, truth.v is the known velocity.
template <int N>
FimMatrix fim(const MeasurementBatch& batch, const BsConstellation<N>& bs, const FullParams<N>& truth,
              Variant variant, const std::optional<VelocityPrior<N>>& prior = std::nullopt) {
  const DesignMatrix g = build_design<N>(variant, batch, bs, truth);
  Eigen::MatrixXd w;
  if (variant == Variant::kPvd) {
    if (!prior) throw InvalidArgument("PVD information requires a velocity prior");
    w = full_weights<N>(batch, *prior).dense();
  } else {
    w = measurement_weights(batch).dense();
  }
  if (g.g.rows() < g.g.cols()) throw RankDeficient("fewer equations than unknowns");
  Eigen::MatrixXd f = g.g.transpose() * w * g.g;
  f = 0.5 * (f + f.transpose()).eval();
  detail::inverse_spd(f);  // rank check only
  return {std::move(f), variant};
}

/// Diagonal of F^-1. The first N entries are the position bounds.
inline Eigen::VectorXd crlb(const FimMatrix& f) { return detail::inverse_spd(f.f).diagonal(); }

template <int N>
double position_crlb_trace(const FimMatrix& f) {
  return crlb(f).head(N).sum();
}

/// Unbiased budget: zero bias, variance = top-left N x N block of F^-1.
template <int N>
ErrorBudget<N> theoretical_rmse(Variant variant, const MeasurementBatch& batch, const BsConstellation<N>& bs,
                                const FullParams<N>& truth,
                                const std::optional<VelocityPrior<N>>& prior = std::nullopt) {
  const FimMatrix f = fim<N>(batch, bs, truth, variant, prior);
  ErrorBudget<N> out;
  out.variance = detail::inverse_spd(f.f).topLeftCorner(N, N);
  out.rmse = std::sqrt(out.variance.trace());
  return out;
}

/// KVD run with an assumed velocity that differs from the truth. The bias is
/// one WLS step on the range mismatch caused by the wrong displacement,
/// taken with the true-geometry design matrix.
template <int N>
ErrorBudget<N> bias_deviated_velocity(const MeasurementBatch& batch, const BsConstellation<N>& bs,
                                      const FullParams<N>& truth, const Vector<N>& v_assumed) {
  const Eigen::MatrixXd g = build_design_kvd<N>(batch, bs, truth.kvd(), truth.v).g;
  const Eigen::VectorXd w = measurement_weights(batch).rho_weights();

  Eigen::VectorXd mismatch(static_cast<Eigen::Index>(batch.size()));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Vector<N>& q = bs[batch[i].bs_index];
    const double dt = batch.dt(i);
    mismatch(static_cast<Eigen::Index>(i)) = (q - (truth.p + truth.v * dt)).norm() - (q - (truth.p + v_assumed * dt)).norm();
  }

  const Eigen::MatrixXd gtw = g.transpose() * w.asDiagonal();
  const Eigen::MatrixXd cov = detail::inverse_spd(gtw * g);
  ErrorBudget<N> out;
  out.bias = (cov * (gtw * mismatch)).head(N);
  out.variance = cov.topLeftCorner(N, N);
  out.rmse = std::sqrt(out.bias.squaredNorm() + out.variance.trace());
  return out;
}

/// LSPM-D ignores the motion, i.e. it is KVD with an assumed velocity of zero.
template <int N>
ErrorBudget<N> bias_lspm_d(const MeasurementBatch& batch, const BsConstellation<N>& bs, const FullParams<N>& truth) {
  return bias_deviated_velocity<N>(batch, bs, truth, Vector<N>::Zero());
}

/// Top-left block of the inverse of [[a, b], [b^T, c]] via the Schur
/// complement (a - b c^-1 b^T)^-1.
inline Eigen::MatrixXd schur_block_inverse(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                           const Eigen::MatrixXd& c) {
  return detail::inverse_spd(a - b * detail::inverse_spd(c) * b.transpose());
}

struct CrlbOrdering {
  // Traces of the position blocks of F_K^-1, [F_P^-1]_11, [F_U^-1]_11.
  double trace_kvd = 0.0;
  double trace_pvd = 0.0;
  double trace_uvd = 0.0;
  double min_eig_pvd_minus_kvd = 0.0;
  double min_eig_uvd_minus_pvd = 0.0;
  bool ordered = false;
};

inline constexpr double kLoewnerTolerance = 1e-10;

/// Loewner ordering F_K^-1 <= [F_P^-1]_11 <= [F_U^-1]_11 on the (N+2)-square
/// clock/position blocks. The gaps are positive semidefinite with rank at
/// most N, so the check is min eigenvalue > -kLoewnerTolerance.
///
/// With M = B^T A^-1 and D = C - M B (the velocity Schur complement), Woodbury
/// gives the gaps in product form:
///   [F_P^-1]_11 - F_K^-1 = M^T (D + W_v)^-1 M
///   [F_U^-1]_11 - [F_P^-1]_11 = L^T (D^-1 + Sigma_v)^-1 L,  L = D^-1 M
/// Subtracting two inverses instead loses the small eigenvalues to rounding
/// on poorly conditioned layouts.
template <int N>
CrlbOrdering check_crlb_ordering(const MeasurementBatch& batch, const BsConstellation<N>& bs,
                                 const FullParams<N>& truth, const VelocityPrior<N>& prior) {
  const Eigen::MatrixXd g = build_design_uvd<N>(batch, bs, truth).g;
  const Eigen::MatrixXd g0 = g.leftCols(N + 2);
  const Eigen::MatrixXd g1 = g.rightCols(N);
  const Eigen::VectorXd w = measurement_weights(batch).rho_weights();

  const Eigen::MatrixXd a = g0.transpose() * w.asDiagonal() * g0;
  const Eigen::MatrixXd b = g0.transpose() * w.asDiagonal() * g1;
  const Eigen::MatrixXd c = g1.transpose() * w.asDiagonal() * g1;
  const Eigen::MatrixXd wv = prior.information();

  const Eigen::MatrixXd kvd = detail::inverse_spd(a);
  const Eigen::MatrixXd pvd = schur_block_inverse(a, b, c + wv);
  const Eigen::MatrixXd uvd = schur_block_inverse(a, b, c);

  CrlbOrdering out;
  out.trace_kvd = kvd.topLeftCorner(N, N).trace();
  out.trace_pvd = pvd.topLeftCorner(N, N).trace();
  out.trace_uvd = uvd.topLeftCorner(N, N).trace();
  const Eigen::MatrixXd m = b.transpose() * kvd;
  const Eigen::MatrixXd d = c - m * b;
  const Eigen::MatrixXd d_inv = detail::inverse_spd(d);
  const Eigen::MatrixXd l = d_inv * m;
  const Eigen::MatrixXd sigma_v = prior.covariance();
  out.min_eig_pvd_minus_kvd = detail::min_eigenvalue(m.transpose() * detail::inverse_spd(d + wv) * m);
  out.min_eig_uvd_minus_pvd = detail::min_eigenvalue(l.transpose() * detail::inverse_spd(d_inv + sigma_v) * l);
  out.ordered = out.min_eig_pvd_minus_kvd > -kLoewnerTolerance && out.min_eig_uvd_minus_pvd > -kLoewnerTolerance;
  return out;
}

template <int N>
struct LinearBiasBound {
  struct Check {
    Vector<N> deviation;
    double bias_squared = 0.0;  // exact |mu(dv)|^2
    double bound = 0.0;         // alpha |dv|^2
    bool holds = false;
  };

  double alpha = 0.0;
  SquareMatrix<N> s = SquareMatrix<N>::Zero();
  std::vector<Check> checks;
  bool all_hold = true;
};

inline constexpr double kFirstOrderTolerance = 0.05;

/// First-order model |mu(dv)|^2 ~= dv^T S dv with S = S2^T S1^T S1 S2, where
/// S1 is the position rows of the WLS gain and S2 maps a velocity deviation
/// to range mismatch. S2 rows are dt_i e_i^T with e_i the LOS at the
/// displaced position q_i - p - v dt_i, the exact first-order term. alpha = lambda_min(S) is the tightest constant in
/// |mu(dv)|^2 >= alpha |dv|^2; each deviation is checked against the exact
/// bias with a 5% first-order allowance.
template <int N>
LinearBiasBound<N> bias_linear_lower_bound(const MeasurementBatch& batch, const BsConstellation<N>& bs,
                                           const FullParams<N>& truth, const std::vector<Vector<N>>& deviations) {
  const Eigen::MatrixXd g = build_design_kvd<N>(batch, bs, truth.kvd(), truth.v).g;
  const Eigen::VectorXd w = measurement_weights(batch).rho_weights();
  const Eigen::MatrixXd gtw = g.transpose() * w.asDiagonal();
  const Eigen::MatrixXd s1 = (detail::inverse_spd(gtw * g) * gtw).topRows(N);

  Eigen::MatrixXd s2(static_cast<Eigen::Index>(batch.size()), N);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Vector<N> e = los_vector<N>(bs[batch[i].bs_index], truth.p, truth.v, batch.dt(i));
    s2.row(static_cast<Eigen::Index>(i)) = batch.dt(i) * e.transpose();
  }

  LinearBiasBound<N> out;
  const Eigen::MatrixXd s1s2 = s1 * s2;
  out.s = s1s2.transpose() * s1s2;
  out.alpha = detail::min_eigenvalue(out.s);
  if (!(out.alpha > 0.0)) throw RankDeficient("bias sensitivity matrix is not positive definite");

  for (const auto& dv : deviations) {
    typename LinearBiasBound<N>::Check c;
    c.deviation = dv;
    c.bias_squared = bias_deviated_velocity<N>(batch, bs, truth, truth.v + dv).bias.squaredNorm();
    c.bound = out.alpha * dv.squaredNorm();
    c.holds = c.bias_squared >= (1.0 - kFirstOrderTolerance) * c.bound;
    out.all_hold = out.all_hold && c.holds;
    out.checks.push_back(c);
  }
  return out;
}

}  // namespace tdbps
