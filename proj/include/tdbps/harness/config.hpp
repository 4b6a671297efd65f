#pragma once

// Scenario config documents (JSON). Every key is optional and overrides the
// experiment's built-in scenario; unknown keys are rejected.
//
// {
//   "bs": [[0, 0], [30, 0], [30, 30], [0, 30]],
//   "trajectory": {"type": "random", "center": [15, 15], "side": 10, "speed": 5},
//   "clock": {"offset_m": 30, "drift_ppm": 5},
//   "schedule": {"slot_interval_s": 0.01, "start_time_s": 0, "order": [0, 1, 2, 3],
//                "measurements_per_fix": 8},
//   "noise": {"sigma_m": 0.1, "enabled": true},
//   "seed": 1,
//   "trials": 1000,
//   "experiment": {"grid": [...], "estimators": ["kvd", "lspm-d"], "prior_std_mps": 2,
//                  "prior_mean": "sampled", "speed_mps": 5, "sigma_m": 0.1, "duration_s": 360}
// }
//
// Trajectory types: random, stationary {position}, constant_velocity
// {position, velocity, t_ref}, circular {center, radius, angular_rate, phase}.
// Clock drift is given as drift_ppm or drift_mps, not both.

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <initializer_list>
#include <string>
#include <vector>

#include "tdbps/errors.hpp"
#include "tdbps/harness/experiment.hpp"
#include "tdbps/simulator.hpp"

namespace tdbps::harness {

using Json = nlohmann::json;

inline Json load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InvalidArgument("cannot open config " + path);
  try {
    return Json::parse(is);
  } catch (const Json::parse_error& e) {
    throw InvalidArgument("config " + path + ": " + e.what());
  }
}

namespace detail {

inline void expect_keys(const Json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw InvalidArgument(where + " must be an object");
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw InvalidArgument("unknown key '" + key + "' in " + where);
  }
}

inline double number(const Json& j, const std::string& where) {
  if (!j.is_number()) throw InvalidArgument(where + " must be a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw InvalidArgument(where + " must be finite");
  return v;
}

template <int N>
Vector<N> vec(const Json& j, const std::string& where) {
  if (!j.is_array() || j.size() != static_cast<std::size_t>(N)) {
    throw InvalidArgument(where + " must be an array of " + std::to_string(N) + " numbers");
  }
  Vector<N> v;
  for (int k = 0; k < N; ++k) v(k) = number(j[static_cast<std::size_t>(k)], where);
  return v;
}

inline std::vector<double> numbers(const Json& j, const std::string& where) {
  if (!j.is_array()) throw InvalidArgument(where + " must be an array");
  std::vector<double> out;
  for (const auto& x : j) out.push_back(number(x, where));
  return out;
}

}  // namespace detail

/// Spatial dimension implied by the document's base stations (2 when absent).
inline int config_dimension(const Json& doc) {
  if (!doc.is_object() || !doc.contains("bs")) return 2;
  const Json& bs = doc["bs"];
  if (!bs.is_array() || bs.empty() || !bs[0].is_array()) throw InvalidArgument("bs must be a nonempty array of positions");
  const auto n = static_cast<int>(bs[0].size());
  if (n != 2 && n != 3) throw InvalidArgument("base station positions must be 2D or 3D");
  return n;
}

/// Applies a config document over `cfg` and, when given, `spec`.
template <int N>
void apply_config(const Json& doc, ScenarioConfig<N>& cfg, ExperimentSpec* spec = nullptr) {
  using detail::number;
  detail::expect_keys(doc, {"bs", "trajectory", "clock", "schedule", "noise", "seed", "trials", "experiment"}, "config");

  if (doc.contains("bs")) {
    std::vector<Vector<N>> positions;
    for (const auto& q : doc["bs"]) positions.push_back(detail::vec<N>(q, "bs entry"));
    cfg.bs = BsConstellation<N>(std::move(positions));
    if (cfg.sigma.size() > 1 && cfg.sigma.size() != cfg.bs.size()) cfg.sigma = {cfg.sigma.front()};
    if (!cfg.schedule.bs_order.empty() && cfg.schedule.bs_order.size() != cfg.bs.size()) cfg.schedule.bs_order.clear();
  }

  if (doc.contains("trajectory")) {
    const Json& t = doc["trajectory"];
    if (!t.is_object() || !t.contains("type") || !t["type"].is_string()) {
      throw InvalidArgument("trajectory needs a string 'type'");
    }
    const std::string type = t["type"];
    if (type == "random") {
      detail::expect_keys(t, {"type", "center", "side", "speed"}, "trajectory");
      RandomPlacement<N> p = cfg.placement.value_or(RandomPlacement<N>{});
      if (t.contains("center")) p.center = detail::vec<N>(t["center"], "trajectory.center");
      if (t.contains("side")) p.side = number(t["side"], "trajectory.side");
      if (t.contains("speed")) p.speed = number(t["speed"], "trajectory.speed");
      cfg.placement = p;
    } else if (type == "stationary") {
      detail::expect_keys(t, {"type", "position"}, "trajectory");
      cfg.placement.reset();
      cfg.trajectory = Stationary<N>{detail::vec<N>(t.at("position"), "trajectory.position")};
    } else if (type == "constant_velocity") {
      detail::expect_keys(t, {"type", "position", "velocity", "t_ref"}, "trajectory");
      cfg.placement.reset();
      ConstantVelocity<N> cv;
      cv.position = detail::vec<N>(t.at("position"), "trajectory.position");
      cv.velocity = detail::vec<N>(t.at("velocity"), "trajectory.velocity");
      if (t.contains("t_ref")) cv.t_ref = number(t["t_ref"], "trajectory.t_ref");
      cfg.trajectory = cv;
    } else if (type == "circular") {
      detail::expect_keys(t, {"type", "center", "radius", "angular_rate", "phase"}, "trajectory");
      cfg.placement.reset();
      Circular<N> c;
      c.center = detail::vec<N>(t.at("center"), "trajectory.center");
      c.radius = number(t.at("radius"), "trajectory.radius");
      c.angular_rate = number(t.at("angular_rate"), "trajectory.angular_rate");
      if (t.contains("phase")) c.phase = number(t["phase"], "trajectory.phase");
      cfg.trajectory = c;
    } else {
      throw InvalidArgument("unknown trajectory type '" + type + "'");
    }
  }

  if (doc.contains("clock")) {
    const Json& c = doc["clock"];
    detail::expect_keys(c, {"offset_m", "drift_ppm", "drift_mps", "t_ref_s"}, "clock");
    if (c.contains("drift_ppm") && c.contains("drift_mps")) throw InvalidArgument("clock: give drift_ppm or drift_mps");
    if (c.contains("offset_m")) cfg.clock.b0 = number(c["offset_m"], "clock.offset_m");
    if (c.contains("drift_ppm")) cfg.clock.drift = drift_from_ppm(number(c["drift_ppm"], "clock.drift_ppm"));
    if (c.contains("drift_mps")) cfg.clock.drift = number(c["drift_mps"], "clock.drift_mps");
    if (c.contains("t_ref_s")) cfg.clock.t_ref = number(c["t_ref_s"], "clock.t_ref_s");
  }

  if (doc.contains("schedule")) {
    const Json& s = doc["schedule"];
    detail::expect_keys(s, {"slot_interval_s", "start_time_s", "order", "measurements_per_fix"}, "schedule");
    if (s.contains("slot_interval_s")) cfg.schedule.slot_interval = number(s["slot_interval_s"], "schedule.slot_interval_s");
    if (s.contains("start_time_s")) cfg.schedule.start_time = number(s["start_time_s"], "schedule.start_time_s");
    if (s.contains("order")) {
      cfg.schedule.bs_order.clear();
      for (double x : detail::numbers(s["order"], "schedule.order")) {
        if (x < 0 || x != std::floor(x)) throw InvalidArgument("schedule.order entries must be indices");
        cfg.schedule.bs_order.push_back(static_cast<std::size_t>(x));
      }
    }
    if (s.contains("measurements_per_fix")) {
      const double m = number(s["measurements_per_fix"], "schedule.measurements_per_fix");
      if (m < 1 || m != std::floor(m)) throw InvalidArgument("schedule.measurements_per_fix must be a positive integer");
      cfg.m_per_fix = static_cast<int>(m);
    }
  }

  if (doc.contains("noise")) {
    const Json& n = doc["noise"];
    detail::expect_keys(n, {"sigma_m", "enabled"}, "noise");
    if (n.contains("sigma_m")) {
      cfg.sigma = n["sigma_m"].is_array() ? detail::numbers(n["sigma_m"], "noise.sigma_m")
                                          : std::vector<double>{number(n["sigma_m"], "noise.sigma_m")};
      if (spec && cfg.sigma.size() == 1) spec->sigma = cfg.sigma.front();
    }
    if (n.contains("enabled")) {
      if (!n["enabled"].is_boolean()) throw InvalidArgument("noise.enabled must be a boolean");
      cfg.add_noise = n["enabled"].get<bool>();
    }
  }

  if (doc.contains("seed")) {
    if (!doc["seed"].is_number_unsigned()) throw InvalidArgument("seed must be a non-negative integer");
    cfg.seed = doc["seed"].get<std::uint64_t>();
  }

  std::optional<double> duration;
  if (doc.contains("experiment")) {
    const Json& e = doc["experiment"];
    detail::expect_keys(e, {"grid", "estimators", "prior_std_mps", "prior_mean", "speed_mps", "sigma_m", "duration_s"}, "experiment");
    if (spec) {
      if (e.contains("grid")) spec->grid = detail::numbers(e["grid"], "experiment.grid");
      if (e.contains("estimators")) {
        if (!e["estimators"].is_array()) throw InvalidArgument("experiment.estimators must be an array");
        spec->estimators.clear();
        for (const auto& s : e["estimators"]) {
          if (!s.is_string()) throw InvalidArgument("experiment.estimators entries must be strings");
          spec->estimators.push_back(parse_estimator(s.get<std::string>()));
        }
      }
      if (e.contains("prior_std_mps")) spec->prior_std = number(e["prior_std_mps"], "experiment.prior_std_mps");
      if (e.contains("prior_mean")) {
        const Json& m = e["prior_mean"];
        if (!m.is_string() || (m != "sampled" && m != "truth")) {
          throw InvalidArgument("experiment.prior_mean must be \"sampled\" or \"truth\"");
        }
        spec->sample_prior_mean = m == "sampled";
      }
      if (e.contains("speed_mps")) spec->speed = number(e["speed_mps"], "experiment.speed_mps");
      if (e.contains("sigma_m")) spec->sigma = number(e["sigma_m"], "experiment.sigma_m");
      if (e.contains("duration_s")) duration = spec->duration = number(e["duration_s"], "experiment.duration_s");
    }
  }

  if (doc.contains("trials")) {
    if (!doc["trials"].is_number_unsigned() || doc["trials"].get<std::uint64_t>() < 1) {
      throw InvalidArgument("trials must be a positive integer");
    }
    cfg.n_trials = static_cast<int>(doc["trials"].get<std::uint64_t>());
  } else if (spec && spec->name == ExperimentName::kCircular && (duration || doc.contains("schedule"))) {
    // One fix per consecutive window over the run.
    cfg.n_trials = static_cast<int>(std::floor(spec->duration / (cfg.m_per_fix * cfg.schedule.slot_interval) + 1e-9));
  }
  cfg.validate();
}

}  // namespace tdbps::harness
