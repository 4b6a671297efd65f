#pragma once

// Monte Carlo experiments comparing the estimators against their theoretical
// error curves.
//
//   stationary-noise     KVD and LSPM-D, stationary UD, sigma sweep
//   speed-sweep          KVD and LSPM-D, sigma 0.1 m, speed sweep
//   velocity-deviation   KVD with a wrong assumed speed, deviation sweep
//   noise-sweep-uvd-pvd  UVD and PVD at 5 m/s, sigma sweep
//   speed-compare        KVD, PVD, UVD at sigma 0.1 m, speed sweep
//   circular             all four on a 30 m circle at 10 m/s for 360 s

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tdbps/analysis.hpp"
#include "tdbps/errors.hpp"
#include "tdbps/harness/stats.hpp"
#include "tdbps/simulator.hpp"

namespace tdbps::harness {

enum class ExperimentName { kStationaryNoise, kSpeedSweep, kVelocityDeviation, kNoiseSweepUvdPvd, kSpeedCompare, kCircular };

inline const char* to_string(ExperimentName n) {
  switch (n) {
    case ExperimentName::kStationaryNoise:
      return "stationary-noise";
    case ExperimentName::kSpeedSweep:
      return "speed-sweep";
    case ExperimentName::kVelocityDeviation:
      return "velocity-deviation";
    case ExperimentName::kNoiseSweepUvdPvd:
      return "noise-sweep-uvd-pvd";
    case ExperimentName::kSpeedCompare:
      return "speed-compare";
    case ExperimentName::kCircular:
      return "circular";
  }
  return "?";
}

inline ExperimentName parse_experiment_name(const std::string& s) {
  for (auto n : {ExperimentName::kStationaryNoise, ExperimentName::kSpeedSweep, ExperimentName::kVelocityDeviation,
                 ExperimentName::kNoiseSweepUvdPvd, ExperimentName::kSpeedCompare, ExperimentName::kCircular}) {
    if (s == to_string(n)) return n;
  }
  throw InvalidArgument("unknown experiment '" + s + "'");
}

inline EstimatorKind parse_estimator(const std::string& s) {
  for (auto k : {EstimatorKind::kKvd, EstimatorKind::kUvd, EstimatorKind::kPvd, EstimatorKind::kLspmD}) {
    if (s == to_string(k)) return k;
  }
  throw InvalidArgument("unknown estimator '" + s + "'");
}

enum class SweepKind { kSigma, kSpeed, kDeviation, kNone };

inline SweepKind sweep_kind(ExperimentName n) {
  switch (n) {
    case ExperimentName::kStationaryNoise:
    case ExperimentName::kNoiseSweepUvdPvd:
      return SweepKind::kSigma;
    case ExperimentName::kSpeedSweep:
    case ExperimentName::kSpeedCompare:
      return SweepKind::kSpeed;
    case ExperimentName::kVelocityDeviation:
      return SweepKind::kDeviation;
    case ExperimentName::kCircular:
      return SweepKind::kNone;
  }
  return SweepKind::kNone;
}

struct ExperimentSpec {
  ExperimentName name = ExperimentName::kStationaryNoise;
  std::vector<double> grid;
  std::vector<EstimatorKind> estimators;
  std::string output_dir = ".";
  double prior_std = 2.0;  // PVD prior STD per axis [m/s]
  bool sample_prior_mean = true;  // false: PVD prior centered exactly on the truth
  double speed = 5.0;      // UD speed when the sweep is not over speed [m/s]
  double sigma = 0.1;      // noise when the sweep is not over sigma [m]
  double duration = 360.0;  // circular run length [s]

  void validate() const {
    if (sweep_kind(name) != SweepKind::kNone) {
      if (grid.empty()) throw InvalidArgument("experiment grid is empty");
      for (std::size_t i = 1; i < grid.size(); ++i) {
        if (!(grid[i] > grid[i - 1])) throw InvalidArgument("experiment grid must be strictly increasing");
      }
    }
    if (estimators.empty()) throw InvalidArgument("experiment runs no estimators");
    if (!(prior_std > 0.0) || !(sigma > 0.0) || !(speed >= 0.0) || !(duration > 0.0)) {
      throw InvalidArgument("experiment parameters out of range");
    }
  }
};

// Log-spaced sigma grid from 0.01 m to 1 m.
inline std::vector<double> default_sigma_grid() { return {0.01, 0.0215443469, 0.0464158883, 0.1, 0.215443469, 0.464158883, 1.0}; }

inline ExperimentSpec default_spec(ExperimentName name) {
  ExperimentSpec s;
  s.name = name;
  using K = EstimatorKind;
  switch (name) {
    case ExperimentName::kStationaryNoise:
      s.grid = default_sigma_grid();
      s.estimators = {K::kKvd, K::kLspmD};
      break;
    case ExperimentName::kSpeedSweep:
      s.grid = {0.1, 1, 2, 5, 10, 15, 20};
      s.estimators = {K::kKvd, K::kLspmD};
      break;
    case ExperimentName::kVelocityDeviation:
      s.grid = {0, 0.5, 1, 2, 3, 4, 5};
      s.estimators = {K::kKvd};
      break;
    case ExperimentName::kNoiseSweepUvdPvd:
      s.grid = default_sigma_grid();
      s.estimators = {K::kUvd, K::kPvd};
      break;
    case ExperimentName::kSpeedCompare:
      s.grid = {0.1, 1, 2, 5, 10, 15, 20};
      s.estimators = {K::kKvd, K::kPvd, K::kUvd};
      break;
    case ExperimentName::kCircular:
      s.estimators = {K::kKvd, K::kPvd, K::kUvd, K::kLspmD};
      s.speed = 10.0;
      break;
  }
  return s;
}

/// Scenario the experiment runs on before config overrides: four BSs on the
/// corners of a 30 m square with the UD drawn in the central 10 m square, or
/// the 100 m square and 30 m circle for the circular run.
template <int N>
ScenarioConfig<N> default_scenario(ExperimentName name) {
  static_assert(N == 2, "built-in scenarios are planar");
  if (name == ExperimentName::kCircular) {
    ScenarioConfig<N> cfg{BsConstellation<N>({{0, 0}, {100, 0}, {100, 100}, {0, 100}})};
    cfg.trajectory = Circular<N>{{50, 50}, 30.0, 10.0 / 30.0, 0.0};
    cfg.sigma = {0.1};
    cfg.n_trials = static_cast<int>(std::floor(360.0 / (cfg.m_per_fix * cfg.schedule.slot_interval) + 1e-9));
    return cfg;
  }
  ScenarioConfig<N> cfg{BsConstellation<N>({{0, 0}, {30, 0}, {30, 30}, {0, 30}})};
  cfg.placement = RandomPlacement<N>{{15, 15}, 10.0, 0.0};
  cfg.n_trials = 1000;
  return cfg;
}

struct ResultRow {
  double sweep_value = 0.0;
  EstimatorKind estimator = EstimatorKind::kKvd;
  double empirical_rmse = 0.0;
  double empirical_rmse_se = 0.0;
  double theoretical_rmse = 0.0;
  double crlb_rmse = 0.0;
  std::vector<double> per_axis_rmse;
  int trials = 0;
  int non_converged = 0;
};

struct CdfSeries {
  EstimatorKind estimator = EstimatorKind::kKvd;
  std::vector<std::pair<double, double>> points;
};

struct ResultTable {
  ExperimentName experiment = ExperimentName::kStationaryNoise;
  std::vector<ResultRow> rows;
  std::vector<CdfSeries> cdf;  // circular only
};

namespace detail {

template <int N>
EstimatorSpec estimator_spec(const ExperimentSpec& spec, EstimatorKind kind, double sweep) {
  EstimatorSpec e;
  e.kind = kind;
  e.prior_std = spec.prior_std;
  e.sample_prior_mean = spec.sample_prior_mean;
  if (spec.name == ExperimentName::kVelocityDeviation && kind == EstimatorKind::kKvd) e.velocity_deviation = sweep;
  return e;
}

// Theory for one trial: {squared theoretical RMSE, position CRLB trace}.
template <int N>
std::pair<double, double> trial_theory(const EstimatorSpec& e, const TrialRecord<N>& rec, const BsConstellation<N>& bs) {
  switch (e.kind) {
    case EstimatorKind::kKvd: {
      const double crlb = position_crlb_trace<N>(fim<N>(rec.batch, bs, rec.truth, Variant::kKvd));
      const auto budget =
          bias_deviated_velocity<N>(rec.batch, bs, rec.truth, assumed_velocity<N>(rec.truth.v, e.velocity_deviation));
      return {budget.rmse * budget.rmse, crlb};
    }
    case EstimatorKind::kLspmD: {
      const double crlb = position_crlb_trace<N>(fim<N>(rec.batch, bs, rec.truth, Variant::kKvd));
      const auto budget = bias_lspm_d<N>(rec.batch, bs, rec.truth);
      return {budget.rmse * budget.rmse, crlb};
    }
    case EstimatorKind::kUvd: {
      const double crlb = position_crlb_trace<N>(fim<N>(rec.batch, bs, rec.truth, Variant::kUvd));
      return {crlb, crlb};
    }
    case EstimatorKind::kPvd: {
      const auto prior = VelocityPrior<N>::isotropic(rec.truth.v, e.prior_std);
      const double crlb = position_crlb_trace<N>(fim<N>(rec.batch, bs, rec.truth, Variant::kPvd, prior));
      return {crlb, crlb};
    }
  }
  return {0.0, 0.0};
}

}  // namespace detail

/// Runs the declared sweep. Each sweep point reuses the same seed, so all
/// points see the same placements and noise draws up to scaling. Theory
/// columns average the per-trial squared values over the converged trials.
template <int N>
ResultTable run_experiment(const ExperimentSpec& spec, const ScenarioConfig<N>& base, unsigned threads = 1,
                           const SolverConfig& solver = {}) {
  spec.validate();
  ResultTable table;
  table.experiment = spec.name;

  const SweepKind sweep = sweep_kind(spec.name);
  if (sweep != SweepKind::kNone && !base.placement) {
    throw InvalidArgument(std::string(to_string(spec.name)) + " needs a random trajectory");
  }
  if (sweep == SweepKind::kNone && !std::holds_alternative<Circular<N>>(base.trajectory)) {
    throw InvalidArgument("circular experiment needs a circular trajectory");
  }

  const std::vector<double> points = sweep == SweepKind::kNone ? std::vector<double>{0.0} : spec.grid;
  for (double value : points) {
    ScenarioConfig<N> cfg = base;
    switch (spec.name) {
      case ExperimentName::kStationaryNoise:
        cfg.sigma = {value};
        cfg.placement->speed = 0.0;
        break;
      case ExperimentName::kNoiseSweepUvdPvd:
        cfg.sigma = {value};
        cfg.placement->speed = spec.speed;
        break;
      case ExperimentName::kSpeedSweep:
      case ExperimentName::kSpeedCompare:
        cfg.sigma = {spec.sigma};
        cfg.placement->speed = value;
        break;
      case ExperimentName::kVelocityDeviation:
        cfg.sigma = {spec.sigma};
        cfg.placement->speed = spec.speed;
        break;
      case ExperimentName::kCircular:
        break;
    }

    std::vector<EstimatorSpec> estimators;
    for (auto k : spec.estimators) estimators.push_back(detail::estimator_spec<N>(spec, k, value));
    const auto records = run_monte_carlo<N>(cfg, estimators, solver, threads);

    // Theory does not depend on the estimate, so evaluate it on the same workers.
    std::vector<std::vector<std::pair<double, double>>> theory(records.size());
    parallel_for(records.size(), threads, [&](std::size_t k) {
      theory[k].reserve(estimators.size());
      for (const auto& e : estimators) theory[k].push_back(detail::trial_theory<N>(e, records[k], cfg.bs));
    });

    for (std::size_t j = 0; j < estimators.size(); ++j) {
      std::vector<Vector<N>> errors;
      std::vector<double> norms;
      double theory_sq = 0.0;
      double crlb_sum = 0.0;
      int excluded = 0;
      for (std::size_t k = 0; k < records.size(); ++k) {
        const auto& o = records[k].outcomes[j];
        if (!o.usable()) {
          ++excluded;
          continue;
        }
        errors.push_back(o.position_error);
        norms.push_back(o.position_error.norm());
        theory_sq += theory[k][j].first;
        crlb_sum += theory[k][j].second;
      }
      ResultRow row;
      row.sweep_value = value;
      row.estimator = estimators[j].kind;
      row.trials = static_cast<int>(records.size());
      row.non_converged = excluded;
      if (!errors.empty()) {
        const auto summary = empirical_rmse<N>(errors);
        const auto n = static_cast<double>(errors.size());
        row.empirical_rmse = summary.total;
        row.empirical_rmse_se = summary.standard_error;
        row.per_axis_rmse.assign(summary.per_axis.data(), summary.per_axis.data() + N);
        row.theoretical_rmse = std::sqrt(theory_sq / n);
        row.crlb_rmse = std::sqrt(crlb_sum / n);
        if (sweep == SweepKind::kNone) table.cdf.push_back({estimators[j].kind, error_cdf(norms)});
      } else {
        row.empirical_rmse = row.empirical_rmse_se = row.theoretical_rmse = row.crlb_rmse = std::nan("");
        row.per_axis_rmse.assign(N, std::nan(""));
      }
      table.rows.push_back(std::move(row));
    }
  }
  return table;
}

}  // namespace tdbps::harness
