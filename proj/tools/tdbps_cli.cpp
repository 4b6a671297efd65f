#include <CLI11.hpp>

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "tdbps/analysis.hpp"
#include "tdbps/estimators.hpp"
#include "tdbps/harness/config.hpp"
#include "tdbps/harness/experiment.hpp"
#include "tdbps/harness/output.hpp"
#include "tdbps/simulator.hpp"

namespace {

using namespace tdbps;
using namespace tdbps::harness;

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> trials;
  bool svg = false;
  unsigned threads = 0;

  std::string experiment;
  std::uint64_t fix = 0;
  std::string batch;
  std::string estimator = "kvd";
  std::vector<double> velocity;
  std::vector<double> position;
  double prior_std = 2.0;
  int max_iter = 20;
  double threshold = 1e-3;
};

std::string join(const auto& v) {
  std::string s;
  for (Eigen::Index i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt(v(i));
  return s;
}

template <int N>
Vector<N> to_vector(const std::vector<double>& v, const char* what) {
  if (v.size() != static_cast<std::size_t>(N)) {
    throw InvalidArgument(std::string(what) + " needs " + std::to_string(N) + " components");
  }
  return Eigen::Map<const Vector<N>>(v.data());
}

// Built-in scenario for the experiment, with the config document applied on top.
template <int N>
ScenarioConfig<N> load_scenario(ExperimentName name, const Json& doc, ExperimentSpec* spec) {
  ScenarioConfig<N> cfg = [&] {
    if constexpr (N == 2) {
      return default_scenario<2>(name);
    } else {
      // No built-in 3D layout: the document supplies the constellation and the
      // UD is drawn around its centroid unless a trajectory is given.
      std::vector<Vector<N>> positions;
      for (const auto& q : doc.at("bs")) positions.push_back(tdbps::harness::detail::vec<N>(q, "bs entry"));
      BsConstellation<N> bs(positions);
      ScenarioConfig<N> c{bs};
      Vector<N> centroid = Vector<N>::Zero();
      for (const auto& q : positions) centroid += q / static_cast<double>(positions.size());
      c.placement = RandomPlacement<N>{centroid, 10.0, 0.0};
      return c;
    }
  }();
  if (!doc.is_null()) apply_config<N>(doc, cfg, spec);
  return cfg;
}

template <int N>
void apply_overrides(const Options& o, ScenarioConfig<N>& cfg) {
  if (o.seed) cfg.seed = *o.seed;
  if (o.trials) cfg.n_trials = *o.trials;
  cfg.validate();
}

SolverConfig solver_config(const Options& o) {
  SolverConfig s;
  s.max_iter = o.max_iter;
  s.threshold = o.threshold;
  s.validate();
  return s;
}

unsigned thread_count(const Options& o) {
  if (o.threads > 0) return o.threads;
  return std::max(1u, std::thread::hardware_concurrency());
}

template <int N>
SyntheticFix<N> fix_from_config(const Options& o, const ScenarioConfig<N>& cfg) {
  Rng rng = trial_stream(cfg.seed, o.fix);
  if (cfg.placement) {
    const Trajectory<N> traj = draw_trajectory<N>(*cfg.placement, cfg.schedule.start_time, rng);
    return synthesize_batch<N>(cfg, traj, 0, rng);
  }
  return synthesize_batch<N>(cfg, cfg.trajectory, o.fix, rng);
}

void print_truth(std::ostream& os, const auto& truth) {
  os << "truth_p=" << join(truth.p) << "\ntruth_b=" << fmt(truth.b) << "\ntruth_d=" << fmt(truth.d)
     << "\ntruth_v=" << join(truth.v) << '\n';
}

template <int N>
int cmd_simulate(const Options& o, const Json& doc) {
  ScenarioConfig<N> cfg = load_scenario<N>(ExperimentName::kStationaryNoise, doc, nullptr);
  apply_overrides(o, cfg);
  const SyntheticFix<N> fix = fix_from_config<N>(o, cfg);
  if (o.out.empty()) {
    write_batch_csv(std::cout, fix.batch);
    print_truth(std::cerr, fix.truth);
    return 0;
  }
  std::filesystem::create_directories(o.out);
  std::ofstream csv(std::filesystem::path(o.out) / "batch.csv", std::ios::binary);
  std::ofstream truth(std::filesystem::path(o.out) / "truth.txt", std::ios::binary);
  if (!csv || !truth) throw InvalidArgument("cannot write into " + o.out);
  write_batch_csv(csv, fix.batch);
  print_truth(truth, fix.truth);
  truth << "rng=" << kRngAlgorithm << "\nseed=" << cfg.seed << "\nfix=" << o.fix << '\n';
  return 0;
}

MeasurementBatch read_batch(const std::string& path) {
  if (path.empty() || path == "-") return MeasurementBatch(read_batch_csv(std::cin));
  std::ifstream is(path);
  if (!is) throw InvalidArgument("cannot open batch " + path);
  return MeasurementBatch(read_batch_csv(is));
}

template <int N>
BsConstellation<N> constellation(const Json& doc) {
  return load_scenario<N>(ExperimentName::kStationaryNoise, doc, nullptr).bs;
}

template <typename Report>
void print_report(const Report& r, const std::string& estimator) {
  std::cout << "estimator=" << estimator << "\nstatus=" << to_string(r.status)
            << "\nconverged=" << (r.converged ? "true" : "false") << "\niterations=" << r.iterations
            << "\nfinal_step_norm=" << fmt(r.final_step_norm) << "\np=" << join(r.params.p) << "\nb=" << fmt(r.params.b)
            << "\nd=" << fmt(r.params.d) << '\n';
  if constexpr (requires { r.params.v; }) std::cout << "v=" << join(r.params.v) << '\n';
  if (r.covariance.size() > 0) std::cout << "covariance_diag=" << join(Eigen::VectorXd(r.covariance.diagonal())) << '\n';
}

template <int N>
int cmd_solve(const Options& o, const Json& doc) {
  const BsConstellation<N> bs = constellation<N>(doc);
  const MeasurementBatch batch = read_batch(o.batch);
  const SolverConfig solver = solver_config(o);
  const Vector<N> v = o.velocity.empty() ? Vector<N>::Zero() : to_vector<N>(o.velocity, "--velocity");
  switch (parse_estimator(o.estimator)) {
    case EstimatorKind::kKvd:
      print_report(solve_ilspm_kvd<N>(batch, bs, v, solver), o.estimator);
      break;
    case EstimatorKind::kLspmD:
      print_report(solve_lspm_d<N>(batch, bs, solver), o.estimator);
      break;
    case EstimatorKind::kUvd:
      print_report(solve_ilspm_uvd<N>(batch, bs, solver), o.estimator);
      break;
    case EstimatorKind::kPvd:
      print_report(solve_ilspm_pvd<N>(batch, bs, VelocityPrior<N>::isotropic(v, o.prior_std), solver), o.estimator);
      break;
  }
  return 0;
}

// Theory at a known truth. With --batch the truth comes from --position and
// --velocity; otherwise a noise-free fix is synthesized from the config.
template <int N>
int cmd_crlb(const Options& o, const Json& doc) {
  ScenarioConfig<N> cfg = load_scenario<N>(ExperimentName::kStationaryNoise, doc, nullptr);
  apply_overrides(o, cfg);
  std::optional<MeasurementBatch> batch;
  FullParams<N> truth;
  if (!o.batch.empty()) {
    batch = read_batch(o.batch);
    truth.p = to_vector<N>(o.position, "--position");
    truth.v = o.velocity.empty() ? Vector<N>::Zero() : to_vector<N>(o.velocity, "--velocity");
  } else {
    const SyntheticFix<N> fix = fix_from_config<N>(o, cfg);
    batch = fix.batch;
    truth = fix.truth;
    print_truth(std::cout, truth);
  }
  const auto prior = VelocityPrior<N>::isotropic(truth.v, o.prior_std);
  auto rmse = [](const FimMatrix& f) { return std::sqrt(position_crlb_trace<N>(f)); };
  std::cout << "crlb_rmse_kvd=" << fmt(rmse(fim<N>(*batch, cfg.bs, truth, Variant::kKvd))) << '\n';
  std::cout << "crlb_rmse_uvd=" << fmt(rmse(fim<N>(*batch, cfg.bs, truth, Variant::kUvd))) << '\n';
  std::cout << "crlb_rmse_pvd=" << fmt(rmse(fim<N>(*batch, cfg.bs, truth, Variant::kPvd, prior))) << '\n';
  const auto d = bias_lspm_d<N>(*batch, cfg.bs, truth);
  std::cout << "lspm_d_bias=" << join(d.bias) << "\nlspm_d_rmse=" << fmt(d.rmse) << '\n';
  return 0;
}

template <int N>
int cmd_experiment(const Options& o, const Json& doc) {
  const ExperimentName name = parse_experiment_name(o.experiment);
  ExperimentSpec spec = default_spec(name);
  ScenarioConfig<N> cfg = load_scenario<N>(name, doc, &spec);
  apply_overrides(o, cfg);
  spec.output_dir = o.out.empty() ? "." : o.out;
  const ResultTable table = run_experiment<N>(spec, cfg, thread_count(o), solver_config(o));
  for (const auto& path : write_outputs(table, spec.output_dir, o.svg)) std::cout << path.string() << '\n';
  int failed = 0;
  for (const auto& row : table.rows) failed += row.non_converged;
  std::cerr << to_string(name) << ": " << table.rows.size() << " rows, " << cfg.n_trials << " trials per point, "
            << failed << " excluded trial runs, rng " << kRngAlgorithm << " seed " << cfg.seed << '\n';
  return 0;
}

template <int N>
int dispatch(const std::string& command, const Options& o, const Json& doc) {
  if (command == "simulate") return cmd_simulate<N>(o, doc);
  if (command == "solve") return cmd_solve<N>(o, doc);
  if (command == "crlb") return cmd_crlb<N>(o, doc);
  return cmd_experiment<N>(o, doc);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequential-pseudorange localization toolkit"};
  app.require_subcommand(1);
  Options o;
  std::uint64_t seed = 0;
  int trials = 0;

  auto* config = app.add_option("--config", o.config, "JSON scenario document")->check(CLI::ExistingFile);
  auto* out = app.add_option("--out", o.out, "output directory");
  auto* seed_opt = app.add_option("--seed", seed, "RNG seed");
  auto* trials_opt = app.add_option("--trials", trials, "Monte Carlo trials per sweep point")->check(CLI::PositiveNumber);
  auto* svg = app.add_flag("--svg", o.svg, "also write an SVG chart");
  auto* threads = app.add_option("--threads", o.threads, "worker threads (default: all cores)");
  for (auto* opt : {config, out, seed_opt, trials_opt, svg, threads}) opt->configurable(false);

  auto* simulate = app.add_subcommand("simulate", "emit one synthesized batch as CSV (truth on stderr)");
  simulate->add_option("--fix", o.fix, "trial / fix index");

  auto* solve = app.add_subcommand("solve", "run one estimator on a batch CSV");
  solve->add_option("--batch", o.batch, "batch CSV path, '-' for stdin")->required();
  solve->add_option("--estimator", o.estimator, "kvd, uvd, pvd or lspm-d");
  solve->add_option("--velocity", o.velocity, "known velocity (kvd) or prior mean (pvd)")->delimiter(',');
  solve->add_option("--prior-std", o.prior_std, "prior STD per axis for pvd [m/s]");
  solve->add_option("--max-iter", o.max_iter, "Gauss-Newton iteration cap");
  solve->add_option("--threshold", o.threshold, "convergence threshold on the step norm");

  auto* crlb = app.add_subcommand("crlb", "theoretical bounds at a known truth");
  crlb->add_option("--fix", o.fix, "trial / fix index to synthesize");
  crlb->add_option("--batch", o.batch, "batch CSV (requires --position)");
  crlb->add_option("--position", o.position, "true position")->delimiter(',');
  crlb->add_option("--velocity", o.velocity, "true velocity")->delimiter(',');
  crlb->add_option("--prior-std", o.prior_std, "prior STD per axis for pvd [m/s]");

  auto* experiment = app.add_subcommand("experiment", "run a full sweep and write result CSVs");
  experiment->add_option("name", o.experiment,
                         "stationary-noise, speed-sweep, velocity-deviation, noise-sweep-uvd-pvd, speed-compare, circular")
      ->required();

  // Global flags may also follow the subcommand.
  for (auto* sub : {simulate, solve, crlb, experiment}) sub->fallthrough();

  CLI11_PARSE(app, argc, argv);
  if (!seed_opt->empty()) o.seed = seed;
  if (!trials_opt->empty()) o.trials = trials;

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    const Json doc = o.config.empty() ? Json() : load_config(o.config);
    if (!doc.is_null() && !doc.is_object()) throw InvalidArgument("config must be a JSON object");
    const int dim = config_dimension(doc);
    return dim == 3 ? dispatch<3>(command, o, doc) : dispatch<2>(command, o, doc);
  } catch (const tdbps::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}
