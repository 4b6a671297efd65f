#pragma once

// Measurement model for sequential pseudoranges in a time-division broadcast
// positioning system.
//
// A user device (UD) receives one broadcast per time slot. Over a short
// window its motion and clock are linear around the localization epoch t_L:
//
//   rho_i = |q_i - (p + v * dt_i)| + b + d * dt_i + noise,  dt_i = t_i - t_L
//
// Clock offset b and drift d are kept in range units (meters, meters/second),
// i.e. already multiplied by the propagation speed.

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tdbps/errors.hpp"

namespace tdbps {

template <int N>
using Vector = Eigen::Matrix<double, N, 1>;

template <int N>
using SquareMatrix = Eigen::Matrix<double, N, N>;

inline constexpr double kDefaultDegenerateEpsilon = 1e-9;

enum class Variant { kKvd, kUvd, kPvd };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::kKvd:
      return "kvd";
    case Variant::kUvd:
      return "uvd";
    case Variant::kPvd:
      return "pvd";
  }
  return "?";
}

/// Known base-station positions q_i.
template <int N>
class BsConstellation {
  static_assert(N == 2 || N == 3, "positions are 2D or 3D");

 public:
  explicit BsConstellation(std::vector<Vector<N>> positions) : positions_(std::move(positions)) {
    if (positions_.empty()) throw InvalidArgument("constellation needs at least one base station");
    for (const auto& q : positions_) {
      if (!q.allFinite()) throw InvalidArgument("base station position is not finite");
    }
  }

  std::size_t size() const { return positions_.size(); }
  const Vector<N>& operator[](std::size_t i) const { return positions_[i]; }
  const std::vector<Vector<N>>& positions() const { return positions_; }

 private:
  std::vector<Vector<N>> positions_;
};

struct Measurement {
  std::size_t bs_index = 0;
  double t = 0.0;      // reception time, system clock [s]
  double rho = 0.0;    // pseudorange [m]
  double sigma = 0.0;  // noise standard deviation [m]
};

/// M sequential pseudoranges referenced to one localization epoch. The
/// offsets dt_i = t_i - t_L are computed once here.
class MeasurementBatch {
 public:
  MeasurementBatch(std::vector<Measurement> entries, double t_localization)
      : entries_(std::move(entries)), t_localization_(t_localization) {
    if (entries_.empty()) throw EmptyInput("measurement batch is empty");
    if (!std::isfinite(t_localization_)) throw InvalidArgument("localization epoch is not finite");
    dt_.reserve(entries_.size());
    for (const auto& e : entries_) {
      if (!(e.sigma > 0.0) || !std::isfinite(e.sigma)) {
        throw InvalidArgument("measurement sigma must be positive and finite");
      }
      if (!std::isfinite(e.t) || !std::isfinite(e.rho)) {
        throw InvalidArgument("measurement time or pseudorange is not finite");
      }
      const double dt = e.t - t_localization_;
      if (!std::isfinite(dt)) throw InvalidArgument("time offset is not finite");
      dt_.push_back(dt);
    }
  }

  // Localization epoch at the first reception time.
  explicit MeasurementBatch(std::vector<Measurement> entries)
      : MeasurementBatch(entries, entries.empty() ? 0.0 : entries.front().t) {}

  std::size_t size() const { return entries_.size(); }
  const Measurement& operator[](std::size_t i) const { return entries_[i]; }
  const std::vector<Measurement>& entries() const { return entries_; }
  double t_localization() const { return t_localization_; }
  double dt(std::size_t i) const { return dt_[i]; }

  Eigen::VectorXd pseudoranges() const {
    Eigen::VectorXd rho(static_cast<Eigen::Index>(size()));
    for (std::size_t i = 0; i < size(); ++i) rho(static_cast<Eigen::Index>(i)) = entries_[i].rho;
    return rho;
  }

 private:
  std::vector<Measurement> entries_;
  double t_localization_;
  std::vector<double> dt_;
};

/// Parameters with velocity known: [p, b, d].
template <int N>
struct KvdParams {
  static constexpr int kSize = N + 2;

  Vector<N> p = Vector<N>::Zero();
  double b = 0.0;
  double d = 0.0;

  Eigen::VectorXd flatten() const {
    Eigen::VectorXd x(kSize);
    x.template head<N>() = p;
    x(N) = b;
    x(N + 1) = d;
    return x;
  }

  static KvdParams unflatten(const Eigen::VectorXd& x) {
    if (x.size() != kSize) throw DimensionMismatch("kvd parameter vector has wrong length");
    return {x.template head<N>(), x(N), x(N + 1)};
  }

  bool finite() const { return p.allFinite() && std::isfinite(b) && std::isfinite(d); }
};

/// Parameters with velocity estimated: [p, b, d, v].
template <int N>
struct FullParams {
  static constexpr int kSize = 2 * N + 2;

  Vector<N> p = Vector<N>::Zero();
  double b = 0.0;
  double d = 0.0;
  Vector<N> v = Vector<N>::Zero();

  Eigen::VectorXd flatten() const {
    Eigen::VectorXd x(kSize);
    x.template head<N>() = p;
    x(N) = b;
    x(N + 1) = d;
    x.template tail<N>() = v;
    return x;
  }

  static FullParams unflatten(const Eigen::VectorXd& x) {
    if (x.size() != kSize) throw DimensionMismatch("full parameter vector has wrong length");
    return {x.template head<N>(), x(N), x(N + 1), x.template tail<N>()};
  }

  static FullParams from_kvd(const KvdParams<N>& k, const Vector<N>& v) { return {k.p, k.b, k.d, v}; }

  KvdParams<N> kvd() const { return {p, b, d}; }

  bool finite() const { return p.allFinite() && std::isfinite(b) && std::isfinite(d) && v.allFinite(); }
};

/// Gaussian prior on the UD velocity: mean and covariance.
template <int N>
class VelocityPrior {
 public:
  VelocityPrior(const Vector<N>& mean, const SquareMatrix<N>& covariance) : mean_(mean), covariance_(covariance) {
    if (!mean_.allFinite() || !covariance_.allFinite()) throw InvalidArgument("velocity prior is not finite");
    const double scale = covariance_.cwiseAbs().maxCoeff();
    if ((covariance_ - covariance_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
      throw InvalidArgument("velocity prior covariance is not symmetric");
    }
    Eigen::SelfAdjointEigenSolver<SquareMatrix<N>> eig(covariance_);
    if (!(eig.eigenvalues().minCoeff() > 0.0)) {
      throw InvalidArgument("velocity prior covariance is not positive definite");
    }
    information_ = eig.eigenvectors() * eig.eigenvalues().cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
    information_ = 0.5 * (information_ + information_.transpose()).eval();
  }

  static VelocityPrior isotropic(const Vector<N>& mean, double stddev) {
    return VelocityPrior(mean, SquareMatrix<N>::Identity() * (stddev * stddev));
  }

  const Vector<N>& mean() const { return mean_; }
  const SquareMatrix<N>& covariance() const { return covariance_; }
  // Inverse covariance, W_v.
  const SquareMatrix<N>& information() const { return information_; }

 private:
  Vector<N> mean_;
  SquareMatrix<N> covariance_;
  SquareMatrix<N> information_;
};

/// Weighting for the WLS problem: diag(1/sigma_i^2) over the pseudoranges and,
/// for the MAP variant, the velocity information matrix as a trailing block.
class WeightModel {
 public:
  explicit WeightModel(Eigen::VectorXd rho_weights) : rho_(std::move(rho_weights)) {
    if (!(rho_.array() > 0.0).all() || !rho_.allFinite()) {
      throw InvalidArgument("weights must be strictly positive");
    }
  }

  WeightModel(Eigen::VectorXd rho_weights, Eigen::MatrixXd velocity_information)
      : WeightModel(std::move(rho_weights)) {
    if (velocity_information.rows() != velocity_information.cols()) {
      throw DimensionMismatch("velocity information must be square");
    }
    Eigen::LLT<Eigen::MatrixXd> llt(velocity_information);
    if (llt.info() != Eigen::Success) throw InvalidArgument("velocity information is not positive definite");
    velocity_ = std::move(velocity_information);
    velocity_factor_ = llt.matrixL();
  }

  Eigen::Index measurement_rows() const { return rho_.size(); }
  Eigen::Index rows() const { return rho_.size() + (velocity_ ? velocity_->rows() : 0); }
  bool has_velocity_block() const { return velocity_.has_value(); }
  const Eigen::VectorXd& rho_weights() const { return rho_; }

  // Dense W, block diagonal.
  Eigen::MatrixXd dense() const {
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(rows(), rows());
    w.topLeftCorner(rho_.size(), rho_.size()) = rho_.asDiagonal();
    if (velocity_) w.bottomRightCorner(velocity_->rows(), velocity_->cols()) = *velocity_;
    return w;
  }

  // Applies a square root R of W (R^T R = W) to the rows of m.
  Eigen::MatrixXd whiten(const Eigen::MatrixXd& m) const {
    if (m.rows() != rows()) throw DimensionMismatch("row count does not match weight model");
    Eigen::MatrixXd out(m.rows(), m.cols());
    const Eigen::Index mr = rho_.size();
    out.topRows(mr) = rho_.cwiseSqrt().asDiagonal() * m.topRows(mr);
    if (velocity_) out.bottomRows(velocity_->rows()) = velocity_factor_.transpose() * m.bottomRows(velocity_->rows());
    return out;
  }

 private:
  Eigen::VectorXd rho_;
  std::optional<Eigen::MatrixXd> velocity_;
  Eigen::MatrixXd velocity_factor_;
};

inline WeightModel measurement_weights(const MeasurementBatch& batch) {
  Eigen::VectorXd w(static_cast<Eigen::Index>(batch.size()));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    w(static_cast<Eigen::Index>(i)) = 1.0 / (batch[i].sigma * batch[i].sigma);
  }
  return WeightModel(std::move(w));
}

template <int N>
WeightModel full_weights(const MeasurementBatch& batch, const VelocityPrior<N>& prior) {
  return WeightModel(measurement_weights(batch).rho_weights(), Eigen::MatrixXd(prior.information()));
}

struct DesignMatrix {
  Eigen::MatrixXd g;
  Variant variant;
};

template <int N>
void check_indices(const MeasurementBatch& batch, const BsConstellation<N>& bs) {
  for (const auto& e : batch.entries()) {
    if (e.bs_index >= bs.size()) {
      throw DimensionMismatch("measurement refers to base station " + std::to_string(e.bs_index) + " but only " +
                              std::to_string(bs.size()) + " exist");
    }
  }
}

/// Noise-free pseudorange from one BS at offset dt from the epoch.
template <int N>
double predict_pseudorange(const Vector<N>& q, const FullParams<N>& params, double dt) {
  return (q - (params.p + params.v * dt)).norm() + params.b + params.d * dt;
}

/// Unit vector from the displaced UD position toward the BS.
template <int N>
Vector<N> los_vector(const Vector<N>& q, const Vector<N>& p, const Vector<N>& v, double dt,
                     double epsilon = kDefaultDegenerateEpsilon) {
  const Vector<N> diff = q - p - v * dt;
  const double range = diff.norm();
  if (!(range > epsilon)) throw DegenerateGeometry("user position coincides with a base station");
  return diff / range;
}

/// Stacked noise-free pseudoranges h(theta).
template <int N>
Eigen::VectorXd predict_batch(const MeasurementBatch& batch, const BsConstellation<N>& bs,
                              const FullParams<N>& params) {
  check_indices(batch, bs);
  Eigen::VectorXd h(static_cast<Eigen::Index>(batch.size()));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    h(static_cast<Eigen::Index>(i)) = predict_pseudorange<N>(bs[batch[i].bs_index], params, batch.dt(i));
  }
  return h;
}

namespace detail {

// Rows [-e_i^T, 1, dt_i] and, when with_velocity, [-e_i^T dt_i].
template <int N>
Eigen::MatrixXd measurement_rows(const MeasurementBatch& batch, const BsConstellation<N>& bs, const Vector<N>& p,
                                 const Vector<N>& v, bool with_velocity, double epsilon) {
  check_indices(batch, bs);
  const Eigen::Index cols = with_velocity ? 2 * N + 2 : N + 2;
  Eigen::MatrixXd g(static_cast<Eigen::Index>(batch.size()), cols);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    const double dt = batch.dt(i);
    const Vector<N> e = los_vector<N>(bs[batch[i].bs_index], p, v, dt, epsilon);
    g.row(row).template head<N>() = -e.transpose();
    g(row, N) = 1.0;
    g(row, N + 1) = dt;
    if (with_velocity) g.row(row).template tail<N>() = -e.transpose() * dt;
  }
  return g;
}

}  // namespace detail

template <int N>
DesignMatrix build_design_kvd(const MeasurementBatch& batch, const BsConstellation<N>& bs, const KvdParams<N>& at,
                              const Vector<N>& v_known, double epsilon = kDefaultDegenerateEpsilon) {
  return {detail::measurement_rows<N>(batch, bs, at.p, v_known, false, epsilon), Variant::kKvd};
}

template <int N>
DesignMatrix build_design_uvd(const MeasurementBatch& batch, const BsConstellation<N>& bs, const FullParams<N>& at,
                              double epsilon = kDefaultDegenerateEpsilon) {
  return {detail::measurement_rows<N>(batch, bs, at.p, at.v, true, epsilon), Variant::kUvd};
}

/// UVD rows stacked on [0 | I_N] for the velocity prior.
template <int N>
DesignMatrix build_design_pvd(const MeasurementBatch& batch, const BsConstellation<N>& bs, const FullParams<N>& at,
                              double epsilon = kDefaultDegenerateEpsilon) {
  const auto m = static_cast<Eigen::Index>(batch.size());
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(m + N, 2 * N + 2);
  g.topRows(m) = detail::measurement_rows<N>(batch, bs, at.p, at.v, true, epsilon);
  g.bottomRightCorner(N, N).setIdentity();
  return {std::move(g), Variant::kPvd};
}

/// Design matrix of any variant at a full parameter point; for KVD the
/// velocity in `at` is the known velocity.
template <int N>
DesignMatrix build_design(Variant variant, const MeasurementBatch& batch, const BsConstellation<N>& bs,
                          const FullParams<N>& at, double epsilon = kDefaultDegenerateEpsilon) {
  switch (variant) {
    case Variant::kKvd:
      return build_design_kvd<N>(batch, bs, at.kvd(), at.v, epsilon);
    case Variant::kUvd:
      return build_design_uvd<N>(batch, bs, at, epsilon);
    case Variant::kPvd:
      return build_design_pvd<N>(batch, bs, at, epsilon);
  }
  throw InvalidArgument("unknown variant");
}

// r = rho - h(theta) with the velocity held at v_known.
template <int N>
Eigen::VectorXd residual_kvd(const MeasurementBatch& batch, const BsConstellation<N>& bs, const KvdParams<N>& at,
                             const Vector<N>& v_known) {
  return batch.pseudoranges() - predict_batch<N>(batch, bs, FullParams<N>::from_kvd(at, v_known));
}

template <int N>
Eigen::VectorXd residual_uvd(const MeasurementBatch& batch, const BsConstellation<N>& bs, const FullParams<N>& at) {
  return batch.pseudoranges() - predict_batch<N>(batch, bs, at);
}

// Stacked residual [rho - h(theta); v_mean - v].
template <int N>
Eigen::VectorXd residual_pvd(const MeasurementBatch& batch, const BsConstellation<N>& bs, const FullParams<N>& at,
                             const VelocityPrior<N>& prior) {
  const auto m = static_cast<Eigen::Index>(batch.size());
  Eigen::VectorXd r(m + N);
  r.head(m) = residual_uvd<N>(batch, bs, at);
  r.tail(N) = prior.mean() - at.v;
  return r;
}

}  // namespace tdbps
