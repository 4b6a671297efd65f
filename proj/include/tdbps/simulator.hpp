#pragma once

// Ground truth and synthetic measurements for TDMA broadcast positioning,
// plus a seeded Monte Carlo driver that runs several estimators on the same
// batches.
//
// Reproducibility: trial k draws from std::mt19937_64 seeded through
// std::seed_seq with the 32-bit words of (seed, k). Results depend only on
// (seed, k), never on thread count or scheduling.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <type_traits>
#include <variant>
#include <vector>

#include "tdbps/errors.hpp"
#include "tdbps/estimators.hpp"
#include "tdbps/model.hpp"

namespace tdbps {

inline constexpr double kSpeedOfLight = 299792458.0;
inline constexpr const char* kRngAlgorithm = "mt19937_64/seed_seq(seed,trial)";

// Clock drift in range-rate units for a relative frequency error in ppm.
inline double drift_from_ppm(double ppm) { return ppm * 1e-6 * kSpeedOfLight; }

template <int N>
struct Stationary {
  Vector<N> position = Vector<N>::Zero();
};

template <int N>
struct ConstantVelocity {
  Vector<N> position = Vector<N>::Zero();  // at t_ref
  Vector<N> velocity = Vector<N>::Zero();
  double t_ref = 0.0;
};

// Uniform circular motion in the first two axes; other axes stay at center.
template <int N>
struct Circular {
  Vector<N> center = Vector<N>::Zero();
  double radius = 1.0;
  double angular_rate = 0.0;  // rad/s, sign gives direction
  double phase = 0.0;         // rad at t = 0
};

template <int N>
using Trajectory = std::variant<Stationary<N>, ConstantVelocity<N>, Circular<N>>;

template <int N>
void validate(const Trajectory<N>& traj) {
  std::visit(
      [](const auto& t) {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, Circular<N>>) {
          if (!(t.radius > 0.0) || !std::isfinite(t.radius)) throw InvalidArgument("circular radius must be positive");
          if (!std::isfinite(t.angular_rate) || !std::isfinite(t.phase)) {
            throw InvalidArgument("circular rate and phase must be finite");
          }
          if (!t.center.allFinite()) throw InvalidArgument("circle center is not finite");
        } else if constexpr (std::is_same_v<T, ConstantVelocity<N>>) {
          if (!t.position.allFinite() || !t.velocity.allFinite() || !std::isfinite(t.t_ref)) {
            throw InvalidArgument("constant-velocity trajectory is not finite");
          }
        } else {
          if (!t.position.allFinite()) throw InvalidArgument("stationary position is not finite");
        }
      },
      traj);
}

/// b(t) = b0 + d (t - t_ref), range units.
struct ClockModel {
  double b0 = 30.0;
  double drift = drift_from_ppm(5.0);
  double t_ref = 0.0;

  double offset(double t) const { return b0 + drift * (t - t_ref); }
};

/// Round-robin broadcast slots.
struct TdmaSchedule {
  double slot_interval = 0.01;
  std::vector<std::size_t> bs_order;  // empty: 0, 1, ..., n-1
  double start_time = 0.0;

  std::size_t bs_at_slot(std::uint64_t slot, std::size_t n_bs) const {
    const std::size_t k = static_cast<std::size_t>(slot % n_bs);
    return bs_order.empty() ? k : bs_order[k];
  }

  void validate(std::size_t n_bs) const {
    if (!(slot_interval > 0.0) || !std::isfinite(slot_interval)) throw InvalidArgument("slot interval must be positive");
    if (!std::isfinite(start_time)) throw InvalidArgument("start time is not finite");
    if (bs_order.empty()) return;
    if (bs_order.size() != n_bs) throw InvalidArgument("schedule order must list every base station once");
    std::vector<bool> seen(n_bs, false);
    for (std::size_t i : bs_order) {
      if (i >= n_bs || seen[i]) throw InvalidArgument("schedule order is not a permutation");
      seen[i] = true;
    }
  }
};

/// Per-trial random start position (uniform in an axis-aligned cube) and a
/// uniformly random heading at fixed speed.
template <int N>
struct RandomPlacement {
  Vector<N> center = Vector<N>::Zero();
  double side = 10.0;
  double speed = 0.0;
};

template <int N>
struct ScenarioConfig {
  explicit ScenarioConfig(BsConstellation<N> constellation) : bs(std::move(constellation)) {}

  BsConstellation<N> bs;
  Trajectory<N> trajectory = Stationary<N>{};
  std::optional<RandomPlacement<N>> placement;  // overrides trajectory per trial
  ClockModel clock;
  TdmaSchedule schedule;
  int m_per_fix = 8;
  std::vector<double> sigma{0.1};  // one value, or one per BS
  bool add_noise = true;
  std::uint64_t seed = 1;
  int n_trials = 1000;

  double sigma_for(std::size_t bs_index) const { return sigma.size() == 1 ? sigma[0] : sigma[bs_index]; }

  void validate() const {
    if (m_per_fix < 1) throw InvalidArgument("measurements per fix must be at least 1");
    if (n_trials < 1) throw InvalidArgument("trial count must be at least 1");
    if (sigma.empty() || (sigma.size() != 1 && sigma.size() != bs.size())) {
      throw InvalidArgument("sigma must be a single value or one per base station");
    }
    for (double s : sigma) {
      if (!(s > 0.0) || !std::isfinite(s)) throw InvalidArgument("sigma must be positive");
    }
    if (!std::isfinite(clock.b0) || !std::isfinite(clock.drift) || !std::isfinite(clock.t_ref)) {
      throw InvalidArgument("clock model is not finite");
    }
    schedule.validate(bs.size());
    tdbps::validate<N>(trajectory);
    if (placement && (!(placement->side >= 0.0) || !(placement->speed >= 0.0) || !placement->center.allFinite())) {
      throw InvalidArgument("random placement needs a finite center and non-negative side and speed");
    }
  }
};

/// Exact position, velocity, and clock state at time t.
template <int N>
FullParams<N> truth_state(const Trajectory<N>& traj, const ClockModel& clock, double t) {
  FullParams<N> out;
  out.b = clock.offset(t);
  out.d = clock.drift;
  std::visit(
      [&](const auto& tr) {
        using T = std::decay_t<decltype(tr)>;
        if constexpr (std::is_same_v<T, Stationary<N>>) {
          out.p = tr.position;
          out.v.setZero();
        } else if constexpr (std::is_same_v<T, ConstantVelocity<N>>) {
          out.p = tr.position + tr.velocity * (t - tr.t_ref);
          out.v = tr.velocity;
        } else {
          const double angle = tr.angular_rate * t + tr.phase;
          out.p = tr.center;
          out.p(0) += tr.radius * std::cos(angle);
          out.p(1) += tr.radius * std::sin(angle);
          out.v.setZero();
          out.v(0) = -tr.radius * tr.angular_rate * std::sin(angle);
          out.v(1) = tr.radius * tr.angular_rate * std::cos(angle);
        }
      },
      traj);
  return out;
}

using Rng = std::mt19937_64;

inline Rng trial_stream(std::uint64_t seed, std::uint64_t trial) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(trial), static_cast<std::uint32_t>(trial >> 32)};
  return Rng(seq);
}

template <int N>
Trajectory<N> draw_trajectory(const RandomPlacement<N>& placement, double t_ref, Rng& rng) {
  std::uniform_real_distribution<double> unit(-0.5, 0.5);
  Vector<N> p0;
  for (int k = 0; k < N; ++k) p0(k) = placement.center(k) + placement.side * unit(rng);

  std::normal_distribution<double> gauss(0.0, 1.0);
  Vector<N> dir;
  do {
    for (int k = 0; k < N; ++k) dir(k) = gauss(rng);
  } while (dir.norm() < 1e-12);
  dir.normalize();
  return ConstantVelocity<N>{p0, dir * placement.speed, t_ref};
}

template <int N>
struct SyntheticFix {
  MeasurementBatch batch;
  FullParams<N> truth;  // at the batch epoch t_L = t_1
};

/// Fix `fix_index` covers slots [fix_index * M, (fix_index + 1) * M).
template <int N>
SyntheticFix<N> synthesize_batch(const ScenarioConfig<N>& cfg, const Trajectory<N>& traj, std::uint64_t fix_index,
                                 Rng& rng) {
  const auto m = static_cast<std::uint64_t>(cfg.m_per_fix);
  std::vector<Measurement> entries;
  entries.reserve(m);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::uint64_t i = 0; i < m; ++i) {
    const std::uint64_t slot = fix_index * m + i;
    Measurement e;
    e.bs_index = cfg.schedule.bs_at_slot(slot, cfg.bs.size());
    e.t = cfg.schedule.start_time + static_cast<double>(slot) * cfg.schedule.slot_interval;
    e.sigma = cfg.sigma_for(e.bs_index);
    const FullParams<N> state = truth_state<N>(traj, cfg.clock, e.t);
    e.rho = (cfg.bs[e.bs_index] - state.p).norm() + state.b;
    if (cfg.add_noise) e.rho += e.sigma * gauss(rng);
    entries.push_back(e);
  }
  const double t_l = entries.front().t;
  return {MeasurementBatch(std::move(entries), t_l), truth_state<N>(traj, cfg.clock, t_l)};
}

template <int N>
SyntheticFix<N> synthesize_batch(const ScenarioConfig<N>& cfg, std::uint64_t fix_index, Rng& rng) {
  return synthesize_batch<N>(cfg, cfg.trajectory, fix_index, rng);
}

enum class EstimatorKind { kKvd, kUvd, kPvd, kLspmD };

inline const char* to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::kKvd:
      return "kvd";
    case EstimatorKind::kUvd:
      return "uvd";
    case EstimatorKind::kPvd:
      return "pvd";
    case EstimatorKind::kLspmD:
      return "lspm-d";
  }
  return "?";
}

struct EstimatorSpec {
  EstimatorKind kind = EstimatorKind::kKvd;
  // KVD: assumed speed minus true speed, along the true heading.
  double velocity_deviation = 0.0;
  // PVD: per-axis prior STD. The true velocity is treated as a draw from the
  // prior, so each trial centers the prior at truth + prior_std * z with z
  // standard normal. With sample_prior_mean off the prior sits on the truth.
  double prior_std = 2.0;
  bool sample_prior_mean = true;
};

/// Velocity handed to KVD: the true velocity rescaled so its speed is off by
/// `deviation`. A stationary truth deviates along +x.
template <int N>
Vector<N> assumed_velocity(const Vector<N>& v_true, double deviation) {
  const double speed = v_true.norm();
  Vector<N> heading = Vector<N>::Zero();
  if (speed > 0.0) {
    heading = v_true / speed;
  } else {
    heading(0) = 1.0;
  }
  return v_true + deviation * heading;
}

template <int N>
struct EstimatorOutcome {
  EstimatorKind kind = EstimatorKind::kKvd;
  SolveStatus status = SolveStatus::kNotConverged;
  bool failed = false;  // estimator raised (rank deficiency, degenerate geometry)
  std::string error;
  int iterations = 0;
  FullParams<N> estimate;
  Vector<N> position_error = Vector<N>::Zero();  // estimate - truth

  bool usable() const { return !failed && status == SolveStatus::kConverged; }
};

template <int N>
struct TrialRecord {
  std::uint64_t trial = 0;
  MeasurementBatch batch;
  FullParams<N> truth;
  Vector<N> prior_draw = Vector<N>::Zero();  // standard normal, shared by all PVD runs of the trial
  std::vector<EstimatorOutcome<N>> outcomes;  // one per EstimatorSpec, same order
};

template <int N>
Vector<N> prior_mean(const EstimatorSpec& spec, const Vector<N>& v_true, const Vector<N>& prior_draw) {
  return spec.sample_prior_mean ? Vector<N>(v_true + spec.prior_std * prior_draw) : v_true;
}

template <int N>
EstimatorOutcome<N> run_estimator(const EstimatorSpec& spec, const MeasurementBatch& batch,
                                  const BsConstellation<N>& bs, const FullParams<N>& truth,
                                  const SolverConfig& solver, const Vector<N>& prior_draw = Vector<N>::Zero()) {
  EstimatorOutcome<N> out;
  out.kind = spec.kind;
  try {
    auto record = [&](const auto& report, const FullParams<N>& est) {
      out.status = report.status;
      out.iterations = report.iterations;
      out.estimate = est;
      out.position_error = est.p - truth.p;
    };
    switch (spec.kind) {
      case EstimatorKind::kKvd: {
        const Vector<N> v = assumed_velocity<N>(truth.v, spec.velocity_deviation);
        const auto r = solve_ilspm_kvd<N>(batch, bs, v, solver);
        record(r, FullParams<N>::from_kvd(r.params, v));
        break;
      }
      case EstimatorKind::kLspmD: {
        const auto r = solve_lspm_d<N>(batch, bs, solver);
        record(r, FullParams<N>::from_kvd(r.params, Vector<N>::Zero()));
        break;
      }
      case EstimatorKind::kUvd: {
        const auto r = solve_ilspm_uvd<N>(batch, bs, solver);
        record(r, r.params);
        break;
      }
      case EstimatorKind::kPvd: {
        const auto prior = VelocityPrior<N>::isotropic(prior_mean<N>(spec, truth.v, prior_draw), spec.prior_std);
        const auto r = solve_ilspm_pvd<N>(batch, bs, prior, solver);
        record(r, r.params);
        break;
      }
    }
  } catch (const Error& e) {
    out.failed = true;
    out.error = e.what();
  }
  return out;
}

/// Calls fn(i) for i in [0, count) on up to `threads` workers. The first
/// exception thrown by any call is rethrown after all workers join.
template <typename Fn>
void parallel_for(std::size_t count, unsigned threads, Fn&& fn) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(count, 1))));
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (unsigned w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

/// Runs every estimator on the same n_trials batches. With a random
/// placement each trial draws its own start and heading and uses fix 0;
/// otherwise trial k is fix k of the configured trajectory.
template <int N>
std::vector<TrialRecord<N>> run_monte_carlo(const ScenarioConfig<N>& cfg, const std::vector<EstimatorSpec>& estimators,
                                            const SolverConfig& solver = {}, unsigned threads = 1) {
  cfg.validate();
  solver.validate();
  const auto n = static_cast<std::size_t>(cfg.n_trials);
  std::vector<std::optional<TrialRecord<N>>> slots(n);

  parallel_for(n, threads, [&](std::size_t k) {
    Rng rng = trial_stream(cfg.seed, k);
    SyntheticFix<N> fix = [&] {
      if (cfg.placement) {
        const Trajectory<N> traj = draw_trajectory<N>(*cfg.placement, cfg.schedule.start_time, rng);
        return synthesize_batch<N>(cfg, traj, 0, rng);
      }
      return synthesize_batch<N>(cfg, cfg.trajectory, k, rng);
    }();
    TrialRecord<N> rec{k, std::move(fix.batch), fix.truth, {}, {}};
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int a = 0; a < N; ++a) rec.prior_draw(a) = gauss(rng);
    rec.outcomes.reserve(estimators.size());
    for (const auto& spec : estimators) {
      rec.outcomes.push_back(run_estimator<N>(spec, rec.batch, cfg.bs, rec.truth, solver, rec.prior_draw));
    }
    slots[k] = std::move(rec);
  });

  std::vector<TrialRecord<N>> out;
  out.reserve(n);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

}  // namespace tdbps
