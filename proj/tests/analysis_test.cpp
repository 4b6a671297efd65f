#include <gtest/gtest.h>

#include <random>

#include "test_support.hpp"
#include "tdbps/analysis.hpp"

using namespace tdbps;
using namespace tdbps::testing;

namespace {

// Brute-force F = sum_i w_i g_i g_i^T with rows written out from the LOS
// definition.
Eigen::MatrixXd brute_fim(const MeasurementBatch& batch, const BsConstellation<2>& bs, const FullParams<2>& t,
                          bool velocity) {
  const int n = velocity ? 6 : 4;
  Eigen::MatrixXd f = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double dt = batch.dt(i);
    const V2 d = bs[batch[i].bs_index] - t.p - t.v * dt;
    const V2 e = d / d.norm();
    Eigen::VectorXd g(n);
    g(0) = -e(0);
    g(1) = -e(1);
    g(2) = 1;
    g(3) = dt;
    if (velocity) {
      g(4) = -e(0) * dt;
      g(5) = -e(1) * dt;
    }
    f += g * g.transpose() / (batch[i].sigma * batch[i].sigma);
  }
  return f;
}

// Bias of one WLS solve on the range mismatch from a wrong velocity, using
// the normal equations directly.
V2 brute_bias(const MeasurementBatch& batch, const BsConstellation<2>& bs, const FullParams<2>& t, const V2& v_assumed) {
  Eigen::MatrixXd g(static_cast<Eigen::Index>(batch.size()), 4);
  Eigen::VectorXd r(g.rows()), w(g.rows());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    const double dt = batch.dt(i);
    const V2 q = bs[batch[i].bs_index];
    const V2 e = (q - t.p - t.v * dt).normalized();
    g.row(row) << -e(0), -e(1), 1, dt;
    r(row) = (q - t.p - t.v * dt).norm() - (q - t.p - v_assumed * dt).norm();
    w(row) = 1.0 / (batch[i].sigma * batch[i].sigma);
  }
  const Eigen::MatrixXd f = g.transpose() * w.asDiagonal() * g;
  return f.ldlt().solve(g.transpose() * w.asDiagonal() * r).head(2);
}

}  // namespace

TEST(Fim, CanonicalKvdMatchesBruteForce) {
  const auto bs = square_bs();
  const auto truth = state(V2(15, 15));
  const auto batch = exact_batch<2>(bs, truth, 8);
  const auto f = fim<2>(batch, bs, truth, Variant::kKvd);
  const auto oracle = brute_fim(batch, bs, truth, false);
  EXPECT_LT((f.f - oracle).norm() / oracle.norm(), 1e-12);
  // At the square's center the LOS vectors are +-(1,1)/sqrt2 and the weights
  // are 100, so the position block is 8 * 100 * 0.5 * I.
  EXPECT_NEAR(f.f(0, 0), 400.0, 1e-9);
  EXPECT_NEAR(f.f(2, 2), 800.0, 1e-9);
}

TEST(Fim, UvdMatchesBruteForce) {
  std::mt19937_64 rng(3);
  for (int k = 0; k < 20; ++k) {
    auto geo = random_geometry(rng);
    const auto f = fim<2>(geo.batch, geo.bs, geo.truth, Variant::kUvd);
    const auto oracle = brute_fim(geo.batch, geo.bs, geo.truth, true);
    EXPECT_LT((f.f - oracle).norm() / oracle.norm(), 1e-12);
  }
}

TEST(Fim, NoiseScaling) {
  const auto bs = square_bs();
  const auto truth = state(V2(13, 17), V2(3, 1));
  const auto a = exact_batch<2>(bs, truth, 8, 0.1);
  const auto b = exact_batch<2>(bs, truth, 8, 0.3);
  for (auto v : {Variant::kKvd, Variant::kUvd}) {
    const auto fa = fim<2>(a, bs, truth, v).f;
    const auto fb = fim<2>(b, bs, truth, v).f;
    EXPECT_LT((fb * 9.0 - fa).norm() / fa.norm(), 1e-12);
  }
}

TEST(Fim, PvdBlockStructure) {
  const auto bs = square_bs();
  const auto truth = state(V2(13, 17), V2(3, 1));
  const auto batch = exact_batch<2>(bs, truth, 8);
  const auto prior = VelocityPrior<2>::isotropic(truth.v, 2.0);
  const auto fp = fim<2>(batch, bs, truth, Variant::kPvd, prior).f;
  const auto fk = fim<2>(batch, bs, truth, Variant::kKvd).f;
  const auto fu = fim<2>(batch, bs, truth, Variant::kUvd).f;
  EXPECT_LT((fp.topLeftCorner(4, 4) - fk).norm() / fk.norm(), 1e-12);
  EXPECT_LT((fp - fu).leftCols(4).norm(), 1e-9);
  EXPECT_LT((fp.bottomRightCorner(2, 2) - fu.bottomRightCorner(2, 2) - 0.25 * Eigen::Matrix2d::Identity()).norm(),
            1e-9);
  EXPECT_THROW(fim<2>(batch, bs, truth, Variant::kPvd), InvalidArgument);
}

TEST(Fim, SymmetricPositiveDefinite) {
  std::mt19937_64 rng(13);
  for (int k = 0; k < 50; ++k) {
    auto geo = random_geometry(rng);
    for (auto v : {Variant::kKvd, Variant::kUvd, Variant::kPvd}) {
      const auto f = fim<2>(geo.batch, geo.bs, geo.truth, v, VelocityPrior<2>::isotropic(geo.truth.v, 2.0)).f;
      EXPECT_LE((f - f.transpose()).norm(), 1e-10 * f.norm());
      EXPECT_GT(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(f).eigenvalues().minCoeff(), 0.0);
    }
  }
}

TEST(Fim, RankDeficientGeometry) {
  const auto bs = square_bs();
  const auto truth = state(V2(15, 15));
  EXPECT_THROW(fim<2>(exact_batch<2>(bs, truth, 3), bs, truth, Variant::kKvd), RankDeficient);
  EXPECT_THROW(fim<2>(exact_batch<2>(bs, truth, 5), bs, truth, Variant::kUvd), RankDeficient);
}

TEST(Crlb, DiagonalInverse) {
  Eigen::MatrixXd f(2, 2);
  f << 4, 0, 0, 25;
  const auto c = crlb({f, Variant::kKvd});
  EXPECT_NEAR(c(0), 0.25, 1e-15);
  EXPECT_NEAR(c(1), 0.04, 1e-15);
  Eigen::MatrixXd singular = Eigen::MatrixXd::Ones(2, 2);
  EXPECT_THROW(crlb({singular, Variant::kKvd}), RankDeficient);
}

TEST(Crlb, ScalesLinearlyWithSigma) {
  const auto bs = square_bs();
  const auto truth = state(V2(15, 15));
  const double base = std::sqrt(position_crlb_trace<2>(fim<2>(exact_batch<2>(bs, truth, 8, 0.01), bs, truth, Variant::kKvd)));
  for (double s : {0.01, 0.0464158883, 0.1, 0.464158883, 1.0}) {
    const double r = std::sqrt(position_crlb_trace<2>(fim<2>(exact_batch<2>(bs, truth, 8, s), bs, truth, Variant::kKvd)));
    EXPECT_NEAR(r / base, s / 0.01, 1e-9 * s / 0.01);
  }
}

TEST(Crlb, PositiveAndTranslationInvariant) {
  std::mt19937_64 rng(17);
  for (int k = 0; k < 30; ++k) {
    auto geo = random_geometry(rng);
    const V2 shift(123.4, -56.7);
    std::vector<V2> moved;
    for (std::size_t i = 0; i < geo.bs.size(); ++i) moved.push_back(geo.bs[i] + shift);
    BsConstellation<2> bs2(moved);
    FullParams<2> t2 = geo.truth;
    t2.p += shift;
    for (auto v : {Variant::kKvd, Variant::kUvd}) {
      const auto c1 = crlb(fim<2>(geo.batch, geo.bs, geo.truth, v));
      const auto c2 = crlb(fim<2>(geo.batch, bs2, t2, v));
      EXPECT_GT(c1.minCoeff(), 0.0);
      EXPECT_LT((c1.head(2) - c2.head(2)).norm(), 1e-9 * c1.head(2).norm());
    }
  }
}

TEST(Crlb, KvdBelowUvdWhenMoving) {
  const auto bs = square_bs();
  const auto truth = state(V2(15, 15), V2(5, 0));
  const auto batch = exact_batch<2>(bs, truth, 8);
  const auto k = crlb(fim<2>(batch, bs, truth, Variant::kKvd));
  const auto u = crlb(fim<2>(batch, bs, truth, Variant::kUvd));
  EXPECT_LT(k(0), u(0));
  EXPECT_LT(k(1), u(1));
}

TEST(Theory, UnbiasedBudget) {
  const auto bs = square_bs();
  const auto truth = state(V2(14, 16), V2(5, 0));
  const auto batch = exact_batch<2>(bs, truth, 8);
  const auto prior = VelocityPrior<2>::isotropic(truth.v, 2.0);
  for (auto v : {Variant::kKvd, Variant::kUvd, Variant::kPvd}) {
    const auto b = theoretical_rmse<2>(v, batch, bs, truth, prior);
    EXPECT_EQ(b.bias, V2::Zero());
    EXPECT_NEAR(b.rmse * b.rmse, b.bias.squaredNorm() + b.variance.trace(), 1e-10 * b.rmse * b.rmse);
  }
  const auto k = theoretical_rmse<2>(Variant::kKvd, batch, bs, truth);
  EXPECT_NEAR(k.rmse, std::sqrt(position_crlb_trace<2>(fim<2>(batch, bs, truth, Variant::kKvd))), 1e-12 * k.rmse);
  const auto p = theoretical_rmse<2>(Variant::kPvd, batch, bs, truth, prior);
  const auto u = theoretical_rmse<2>(Variant::kUvd, batch, bs, truth);
  EXPECT_LE(k.variance.trace(), p.variance.trace());
  EXPECT_LE(p.variance.trace(), u.variance.trace());
}

TEST(Theory, StationaryKvdEqualsLspmD) {
  const auto bs = square_bs();
  const auto truth = state(V2(14, 16));
  const auto batch = exact_batch<2>(bs, truth, 8);
  const auto k = theoretical_rmse<2>(Variant::kKvd, batch, bs, truth);
  const auto d = bias_lspm_d<2>(batch, bs, truth);
  EXPECT_EQ(d.bias, V2::Zero());
  EXPECT_EQ(d.variance, k.variance);
  EXPECT_DOUBLE_EQ(d.rmse, k.rmse);
}

TEST(DeviatedBias, ZeroAtTruth) {
  const auto bs = square_bs();
  const auto truth = state(V2(14, 16), V2(5, 0));
  const auto batch = exact_batch<2>(bs, truth, 8);
  const auto b = bias_deviated_velocity<2>(batch, bs, truth, truth.v);
  EXPECT_EQ(b.bias, V2::Zero());
  EXPECT_NEAR(b.rmse, theoretical_rmse<2>(Variant::kKvd, batch, bs, truth).rmse, 1e-15);
}

TEST(DeviatedBias, MatchesDirectEvaluation) {
  const auto bs = square_bs();
  const auto truth = state(V2(15, 15), V2(5, 0));
  const auto batch = exact_batch<2>(bs, truth, 8);
  const auto b = bias_deviated_velocity<2>(batch, bs, truth, truth.v + V2(1, 0));
  const V2 oracle = brute_bias(batch, bs, truth, truth.v + V2(1, 0));
  EXPECT_LT((b.bias - oracle).norm(), 1e-10 * oracle.norm());
  EXPECT_GT(oracle.norm(), 1e-3);
  EXPECT_NEAR(b.rmse * b.rmse, b.bias.squaredNorm() + b.variance.trace(), 1e-12);
}

TEST(DeviatedBias, ApproximatelyLinear) {
  const auto bs = square_bs();
  const auto truth = state(V2(15, 15), V2(5, 0));
  const auto batch = exact_batch<2>(bs, truth, 8);
  for (double dv : {0.1, 0.25, 0.5}) {
    for (const V2& dir : {V2(1, 0), V2(0, 1), V2(0.6, 0.8)}) {
      const double one = bias_deviated_velocity<2>(batch, bs, truth, truth.v + dv * dir).bias.norm();
      const double two = bias_deviated_velocity<2>(batch, bs, truth, truth.v + 2 * dv * dir).bias.norm();
      EXPECT_GE(two / one, 1.9);
      EXPECT_LE(two / one, 2.1);
    }
  }
}

TEST(LspmDBias, MatchesDirectEvaluation) {
  const auto bs = square_bs();
  const auto truth = state(V2(15, 15), V2(5, 0));
  const auto batch = exact_batch<2>(bs, truth, 8);
  const auto d = bias_lspm_d<2>(batch, bs, truth);
  const V2 oracle = brute_bias(batch, bs, truth, V2::Zero());
  EXPECT_LT((d.bias - oracle).norm(), 1e-10 * oracle.norm());
}

TEST(LspmDBias, NondecreasingInSpeed) {
  const auto bs = square_bs();
  double last = 0;
  for (double s : {0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 15.0, 20.0}) {
    const auto truth = state(V2(15, 15), V2(s, 0));
    const double r = bias_lspm_d<2>(exact_batch<2>(bs, truth, 8), bs, truth).rmse;
    EXPECT_GE(r, last);
    last = r;
  }
}

TEST(Ordering, SchurIdentityAgainstDirectInverse) {
  std::mt19937_64 rng(23);
  for (int k = 0; k < 50; ++k) {
    auto geo = random_geometry(rng);
    const auto fu = fim<2>(geo.batch, geo.bs, geo.truth, Variant::kUvd).f;
    const Eigen::MatrixXd direct = fu.inverse().topLeftCorner(4, 4);
    const Eigen::MatrixXd schur = schur_block_inverse(fu.topLeftCorner(4, 4), fu.topRightCorner(4, 2), fu.bottomRightCorner(2, 2));
    EXPECT_LT((schur - direct).norm() / direct.norm(), 1e-8);
  }
}

TEST(Ordering, TracesMatchDirectInversion) {
  std::mt19937_64 rng(29);
  for (int k = 0; k < 50; ++k) {
    auto geo = random_geometry(rng);
    const auto prior = VelocityPrior<2>::isotropic(geo.truth.v, 2.0);
    const auto o = check_crlb_ordering<2>(geo.batch, geo.bs, geo.truth, prior);
    const Eigen::MatrixXd ik = fim<2>(geo.batch, geo.bs, geo.truth, Variant::kKvd).f.inverse();
    const Eigen::MatrixXd ip = fim<2>(geo.batch, geo.bs, geo.truth, Variant::kPvd, prior).f.inverse();
    const Eigen::MatrixXd iu = fim<2>(geo.batch, geo.bs, geo.truth, Variant::kUvd).f.inverse();
    EXPECT_NEAR(o.trace_kvd, ik.topLeftCorner(2, 2).trace(), 1e-9 * o.trace_kvd);
    EXPECT_NEAR(o.trace_pvd, ip.topLeftCorner(2, 2).trace(), 1e-9 * o.trace_pvd);
    EXPECT_NEAR(o.trace_uvd, iu.topLeftCorner(2, 2).trace(), 1e-9 * o.trace_uvd);
    const Eigen::MatrixXd gap = iu.topLeftCorner(4, 4) - ip.topLeftCorner(4, 4);
    EXPECT_NEAR(o.min_eig_uvd_minus_pvd, Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(gap).eigenvalues().minCoeff(),
                1e-9 * gap.norm());
    EXPECT_TRUE(o.ordered);
  }
}

TEST(Ordering, NearDeltaPriorApproachesKvd) {
  const auto bs = square_bs();
  const auto truth = state(V2(14, 16), V2(5, 2));
  const auto batch = exact_batch<2>(bs, truth, 8);
  Eigen::Matrix2d tiny = 1e-12 * Eigen::Matrix2d::Identity();
  const auto o = check_crlb_ordering<2>(batch, bs, truth, VelocityPrior<2>(truth.v, tiny));
  EXPECT_LT(o.trace_pvd - o.trace_kvd, 1e-6);
  EXPECT_TRUE(o.ordered);
}

TEST(LinearBound, CanonicalGeometry) {
  const auto bs = square_bs();
  const auto truth = state(V2(15, 15), V2(5, 0));
  const auto batch = exact_batch<2>(bs, truth, 8);
  const auto r = bias_linear_lower_bound<2>(batch, bs, truth, {V2(0, 0), V2(0.1, 0), V2(0.2, 0), V2(0.5, 0)});
  EXPECT_GT(r.alpha, 0.0);
  EXPECT_NEAR(r.alpha, Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(r.s).eigenvalues().minCoeff(), 1e-15);
  ASSERT_EQ(r.checks.size(), 4u);
  EXPECT_EQ(r.checks[0].bias_squared, 0.0);
  EXPECT_EQ(r.checks[0].bound, 0.0);
  for (const auto& c : r.checks) {
    EXPECT_TRUE(c.holds);
    const V2 oracle = brute_bias(batch, bs, truth, truth.v + c.deviation);
    EXPECT_NEAR(c.bias_squared, oracle.squaredNorm(), 1e-10 * (1.0 + oracle.squaredNorm()));
  }
  EXPECT_TRUE(r.all_hold);
}

// S is J^T J for the Jacobian J of the exact bias at zero deviation.
TEST(LinearBound, MatchesBiasJacobian) {
  std::mt19937_64 rng(41);
  for (int k = 0; k < 20; ++k) {
    const auto geo = random_geometry(rng);
    const auto r = bias_linear_lower_bound<2>(geo.batch, geo.bs, geo.truth, {});
    Eigen::Matrix2d j;
    const double h = 1e-5;
    for (int c = 0; c < 2; ++c) {
      const V2 step = h * V2::Unit(c);
      j.col(c) = (brute_bias(geo.batch, geo.bs, geo.truth, geo.truth.v + step) -
                  brute_bias(geo.batch, geo.bs, geo.truth, geo.truth.v - step)) /
                 (2 * h);
    }
    const Eigen::Matrix2d oracle = j.transpose() * j;
    EXPECT_LT((r.s - oracle).norm(), 1e-6 * oracle.norm()) << "geometry " << k;
  }
}
