#pragma once

// Gauss-Newton solvers for sequential pseudorange localization:
//
//   ILSPM-KVD  velocity known,        theta = [p, b, d]
//   ILSPM-UVD  velocity estimated,    theta = [p, b, d, v]
//   ILSPM-PVD  Gaussian velocity prior (MAP), theta = [p, b, d, v]
//   LSPM-D     conventional baseline, KVD with v = 0
//
// All four share one weighted least-squares step kernel.

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <cmath>
#include <set>
#include <utility>

#include "tdbps/errors.hpp"
#include "tdbps/model.hpp"

namespace tdbps {

// Upper bound on cond(G^T W G) after column equilibration.
inline constexpr double kMaxNormalCondition = 1e12;

struct SolverConfig {
  int max_iter = 20;
  double threshold = 1e-3;
  double divergence_guard = 1e6;
  double degenerate_epsilon = kDefaultDegenerateEpsilon;

  void validate() const {
    if (max_iter < 1) throw InvalidArgument("max_iter must be at least 1");
    if (!(threshold > 0.0)) throw InvalidArgument("threshold must be positive");
    if (!(divergence_guard > 0.0)) throw InvalidArgument("divergence guard must be positive");
  }
};

enum class SolveStatus { kConverged, kNotConverged, kDiverged };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::kConverged:
      return "converged";
    case SolveStatus::kNotConverged:
      return "not_converged";
    case SolveStatus::kDiverged:
      return "diverged";
  }
  return "?";
}

template <typename Params>
struct EstimateReport {
  Params params;
  int iterations = 0;
  bool converged = false;
  SolveStatus status = SolveStatus::kNotConverged;
  // (G^T W G)^-1 at `params`; empty if it could not be formed there.
  Eigen::MatrixXd covariance;
  double final_step_norm = 0.0;
};

/// Result of one weighted linear least-squares solve.
struct WlsSolution {
  Eigen::VectorXd step;
  Eigen::MatrixXd covariance;  // (G^T W G)^-1
};

/// Solves min |W^(1/2) (r - G x)|^2 by SVD of the whitened, column-scaled
/// design matrix. Column scaling makes the conditioning test independent of
/// the units of each parameter.
inline WlsSolution solve_wls(const Eigen::MatrixXd& g, const WeightModel& w, const Eigen::VectorXd& r) {
  if (g.rows() != r.size()) throw DimensionMismatch("design matrix and residual disagree in rows");
  if (g.rows() < g.cols()) throw RankDeficient("fewer equations than unknowns");

  const Eigen::MatrixXd a = w.whiten(g);
  const Eigen::VectorXd y = w.whiten(r);

  const Eigen::VectorXd scale = a.colwise().norm().transpose();
  if (!(scale.array() > 0.0).all()) throw RankDeficient("design matrix has an all-zero column");
  const Eigen::VectorXd inv_scale = scale.cwiseInverse();

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a * inv_scale.asDiagonal(), Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  const double smax = sv(0);
  const double smin = sv(sv.size() - 1);
  if (!(smin > 0.0) || (smax / smin) * (smax / smin) > kMaxNormalCondition) {
    throw RankDeficient("normal matrix is singular or ill-conditioned");
  }

  const Eigen::MatrixXd v_scaled = inv_scale.asDiagonal() * svd.matrixV();
  WlsSolution out;
  out.step = v_scaled * (sv.cwiseInverse().asDiagonal() * (svd.matrixU().transpose() * y));
  out.covariance = v_scaled * sv.cwiseAbs2().cwiseInverse().asDiagonal() * v_scaled.transpose();
  return out;
}

/// Gauss-Newton increment (G^T W G)^-1 G^T W r.
inline Eigen::VectorXd wls_step(const DesignMatrix& g, const WeightModel& w, const Eigen::VectorXd& r) {
  return solve_wls(g.g, w, r).step;
}

namespace detail {

// `linearize(params)` returns {G, r} at params.
template <typename Params, typename Linearize>
EstimateReport<Params> gauss_newton(Params current, const WeightModel& w, const SolverConfig& cfg,
                                    Linearize&& linearize) {
  cfg.validate();
  EstimateReport<Params> report;
  report.status = SolveStatus::kNotConverged;

  for (int s = 1; s <= cfg.max_iter; ++s) {
    auto [g, r] = linearize(current);
    const Eigen::VectorXd step = solve_wls(g, w, r).step;
    const double norm = step.norm();
    report.iterations = s;
    report.final_step_norm = norm;
    if (!std::isfinite(norm) || norm > cfg.divergence_guard) {
      report.status = SolveStatus::kDiverged;
      break;
    }
    current = Params::unflatten(current.flatten() + step);
    if (norm < cfg.threshold) {
      report.status = SolveStatus::kConverged;
      break;
    }
  }

  report.params = current;
  report.converged = report.status == SolveStatus::kConverged;
  if (report.converged) {
    auto [g, r] = linearize(current);
    report.covariance = solve_wls(g, w, r).covariance;
  } else {
    try {
      auto [g, r] = linearize(current);
      report.covariance = solve_wls(g, w, r).covariance;
    } catch (const Error&) {
      report.covariance.resize(0, 0);
    }
  }
  return report;
}

}  // namespace detail

/// Starting point: centroid of the observed BSs, offset fitted to the mean
/// pseudorange excess, zero drift.
template <int N>
KvdParams<N> default_init_kvd(const MeasurementBatch& batch, const BsConstellation<N>& bs) {
  check_indices(batch, bs);
  std::set<std::size_t> observed;
  for (const auto& e : batch.entries()) observed.insert(e.bs_index);
  Vector<N> centroid = Vector<N>::Zero();
  for (std::size_t i : observed) centroid += bs[i];
  centroid /= static_cast<double>(observed.size());

  double offset = 0.0;
  for (const auto& e : batch.entries()) offset += e.rho - (bs[e.bs_index] - centroid).norm();
  offset /= static_cast<double>(batch.size());
  return {centroid, offset, 0.0};
}

template <int N>
FullParams<N> default_init_full(const MeasurementBatch& batch, const BsConstellation<N>& bs,
                                const Vector<N>& v0 = Vector<N>::Zero()) {
  return FullParams<N>::from_kvd(default_init_kvd<N>(batch, bs), v0);
}

template <int N>
EstimateReport<KvdParams<N>> solve_ilspm_kvd(const MeasurementBatch& batch, const BsConstellation<N>& bs,
                                             const Vector<N>& v_known, const KvdParams<N>& init,
                                             const SolverConfig& cfg = {}) {
  check_indices(batch, bs);
  const WeightModel w = measurement_weights(batch);
  return detail::gauss_newton(init, w, cfg, [&](const KvdParams<N>& at) {
    return std::pair{build_design_kvd<N>(batch, bs, at, v_known, cfg.degenerate_epsilon).g,
                     residual_kvd<N>(batch, bs, at, v_known)};
  });
}

template <int N>
EstimateReport<KvdParams<N>> solve_ilspm_kvd(const MeasurementBatch& batch, const BsConstellation<N>& bs,
                                             const Vector<N>& v_known, const SolverConfig& cfg = {}) {
  return solve_ilspm_kvd<N>(batch, bs, v_known, default_init_kvd<N>(batch, bs), cfg);
}

template <int N>
EstimateReport<FullParams<N>> solve_ilspm_uvd(const MeasurementBatch& batch, const BsConstellation<N>& bs,
                                              const FullParams<N>& init, const SolverConfig& cfg = {}) {
  check_indices(batch, bs);
  const WeightModel w = measurement_weights(batch);
  return detail::gauss_newton(init, w, cfg, [&](const FullParams<N>& at) {
    return std::pair{build_design_uvd<N>(batch, bs, at, cfg.degenerate_epsilon).g, residual_uvd<N>(batch, bs, at)};
  });
}

template <int N>
EstimateReport<FullParams<N>> solve_ilspm_uvd(const MeasurementBatch& batch, const BsConstellation<N>& bs,
                                              const SolverConfig& cfg = {}) {
  return solve_ilspm_uvd<N>(batch, bs, default_init_full<N>(batch, bs), cfg);
}

/// MAP solve: minimizes |rho - h(theta)|^2_{W_rho} + |v_mean - v|^2_{W_v}
/// using the stacked residual and the block-diagonal weight.
template <int N>
EstimateReport<FullParams<N>> solve_ilspm_pvd(const MeasurementBatch& batch, const BsConstellation<N>& bs,
                                              const VelocityPrior<N>& prior, const FullParams<N>& init,
                                              const SolverConfig& cfg = {}) {
  check_indices(batch, bs);
  const WeightModel w = full_weights<N>(batch, prior);
  return detail::gauss_newton(init, w, cfg, [&](const FullParams<N>& at) {
    return std::pair{build_design_pvd<N>(batch, bs, at, cfg.degenerate_epsilon).g,
                     residual_pvd<N>(batch, bs, at, prior)};
  });
}

template <int N>
EstimateReport<FullParams<N>> solve_ilspm_pvd(const MeasurementBatch& batch, const BsConstellation<N>& bs,
                                              const VelocityPrior<N>& prior, const SolverConfig& cfg = {}) {
  return solve_ilspm_pvd<N>(batch, bs, prior, default_init_full<N>(batch, bs, prior.mean()), cfg);
}

// Conventional LSPM-D: no motion compensation.
template <int N>
EstimateReport<KvdParams<N>> solve_lspm_d(const MeasurementBatch& batch, const BsConstellation<N>& bs,
                                          const KvdParams<N>& init, const SolverConfig& cfg = {}) {
  return solve_ilspm_kvd<N>(batch, bs, Vector<N>::Zero(), init, cfg);
}

template <int N>
EstimateReport<KvdParams<N>> solve_lspm_d(const MeasurementBatch& batch, const BsConstellation<N>& bs,
                                          const SolverConfig& cfg = {}) {
  return solve_lspm_d<N>(batch, bs, default_init_kvd<N>(batch, bs), cfg);
}

}  // namespace tdbps
