#pragma once

// CSV and SVG writers for experiment results, and the batch CSV format
// `bs_index,t,rho,sigma` used by the simulate and solve commands.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "tdbps/errors.hpp"
#include "tdbps/harness/experiment.hpp"
#include "tdbps/model.hpp"

namespace tdbps::harness {

// 9 significant digits, locale independent.
inline std::string fmt(double x) {
  if (std::isnan(x)) return "nan";
  if (x == 0.0) x = 0.0;  // no negative zero
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", x);
  return buf;
}

// Shortest form that reads back to the same double.
inline std::string fmt_exact(double x) {
  char buf[40];
  for (int digits = 9; digits <= 17; ++digits) {
    std::snprintf(buf, sizeof buf, "%.*g", digits, x);
    if (std::strtod(buf, nullptr) == x) break;
  }
  return buf;
}

// Batches are inputs to the solvers, so they keep full precision.
inline void write_batch_csv(std::ostream& os, const MeasurementBatch& batch) {
  os << "bs_index,t,rho,sigma\n";
  for (const auto& e : batch.entries()) {
    os << e.bs_index << ',' << fmt_exact(e.t) << ',' << fmt_exact(e.rho) << ',' << fmt_exact(e.sigma) << '\n';
  }
}

inline std::vector<Measurement> read_batch_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw InvalidArgument("batch CSV is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "bs_index,t,rho,sigma") throw InvalidArgument("batch CSV header must be 'bs_index,t,rho,sigma'");

  std::vector<Measurement> out;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 4) throw InvalidArgument("batch CSV line " + std::to_string(lineno) + " needs 4 columns");
    try {
      std::size_t used = 0;
      Measurement m;
      const long long idx = std::stoll(cells[0], &used);
      if (used != cells[0].size() || idx < 0) throw std::invalid_argument("index");
      m.bs_index = static_cast<std::size_t>(idx);
      m.t = std::stod(cells[1]);
      m.rho = std::stod(cells[2]);
      m.sigma = std::stod(cells[3]);
      out.push_back(m);
    } catch (const std::logic_error&) {
      throw InvalidArgument("batch CSV line " + std::to_string(lineno) + " is not numeric");
    }
  }
  if (out.empty()) throw EmptyInput("batch CSV has no measurements");
  return out;
}

inline void write_result_csv(std::ostream& os, const ResultTable& table) {
  if (table.experiment == ExperimentName::kCircular) {
    const std::size_t axes = table.rows.empty() ? 0 : table.rows.front().per_axis_rmse.size();
    static const char* kAxis[] = {"x", "y", "z"};
    os << "estimator";
    for (std::size_t a = 0; a < axes; ++a) os << ",rmse_" << kAxis[a] << "_m";
    os << ",rmse_m,theoretical_rmse_m,crlb_rmse_m,trials,non_converged\n";
    for (const auto& r : table.rows) {
      os << to_string(r.estimator);
      for (double v : r.per_axis_rmse) os << ',' << fmt(v);
      os << ',' << fmt(r.empirical_rmse) << ',' << fmt(r.theoretical_rmse) << ',' << fmt(r.crlb_rmse) << ','
         << r.trials << ',' << r.non_converged << '\n';
    }
    return;
  }
  os << "sweep_value,estimator,empirical_rmse_m,empirical_rmse_se_m,theoretical_rmse_m,crlb_rmse_m,trials,"
        "non_converged\n";
  for (const auto& r : table.rows) {
    os << fmt(r.sweep_value) << ',' << to_string(r.estimator) << ',' << fmt(r.empirical_rmse) << ','
       << fmt(r.empirical_rmse_se) << ',' << fmt(r.theoretical_rmse) << ',' << fmt(r.crlb_rmse) << ',' << r.trials
       << ',' << r.non_converged << '\n';
  }
}

inline void write_cdf_csv(std::ostream& os, const ResultTable& table) {
  os << "estimator,error_m,cumulative_fraction\n";
  for (const auto& series : table.cdf) {
    for (const auto& [value, frac] : series.points) {
      os << to_string(series.estimator) << ',' << fmt(value) << ',' << fmt(frac) << '\n';
    }
  }
}

namespace detail {

struct Series {
  std::string label;
  std::string color;
  std::string dash;  // empty for solid
  std::vector<std::pair<double, double>> points;
};

inline const char* estimator_color(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::kKvd:
      return "#1f77b4";
    case EstimatorKind::kUvd:
      return "#2ca02c";
    case EstimatorKind::kPvd:
      return "#ff7f0e";
    case EstimatorKind::kLspmD:
      return "#d62728";
  }
  return "#000000";
}

// Log scale when every value is positive and the range spans a decade.
struct Axis {
  double lo = 0.0;
  double hi = 1.0;
  bool log = false;

  static Axis fit(const std::vector<double>& values) {
    Axis a;
    if (values.empty()) return a;
    a.lo = *std::min_element(values.begin(), values.end());
    a.hi = *std::max_element(values.begin(), values.end());
    a.log = a.lo > 0.0 && a.hi / a.lo >= 10.0;
    if (a.log) {
      a.lo = std::log10(a.lo);
      a.hi = std::log10(a.hi);
    }
    if (a.hi - a.lo < 1e-12) {
      a.lo -= 0.5;
      a.hi += 0.5;
    }
    return a;
  }

  double unit(double v) const { return ((log ? std::log10(v) : v) - lo) / (hi - lo); }
  double value_at(double u) const {
    const double x = lo + u * (hi - lo);
    return log ? std::pow(10.0, x) : x;
  }
};

inline void write_svg_chart(std::ostream& os, const std::string& title, const std::string& x_label,
                            const std::string& y_label, const std::vector<Series>& series) {
  constexpr double kW = 640, kH = 420, kL = 70, kR = 170, kT = 40, kB = 50;
  std::vector<double> xs, ys;
  for (const auto& s : series) {
    for (const auto& [x, y] : s.points) {
      if (std::isfinite(x) && std::isfinite(y)) {
        xs.push_back(x);
        ys.push_back(y);
      }
    }
  }
  const Axis ax = Axis::fit(xs);
  const Axis ay = Axis::fit(ys);
  const double pw = kW - kL - kR, ph = kH - kT - kB;
  auto px = [&](double x) { return kL + ax.unit(x) * pw; };
  auto py = [&](double y) { return kT + (1.0 - ay.unit(y)) * ph; };

  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << kL + pw / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
  os << "<rect x=\"" << kL << "\" y=\"" << kT << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double u = i / 4.0;
    const double gx = kL + u * pw, gy = kT + (1.0 - u) * ph;
    os << "<line x1=\"" << gx << "\" y1=\"" << kT << "\" x2=\"" << gx << "\" y2=\"" << kT + ph
       << "\" stroke=\"#ddd\"/>\n";
    os << "<line x1=\"" << kL << "\" y1=\"" << gy << "\" x2=\"" << kL + pw << "\" y2=\"" << gy
       << "\" stroke=\"#ddd\"/>\n";
    os << "<text x=\"" << gx << "\" y=\"" << kT + ph + 15 << "\" text-anchor=\"middle\">" << fmt(ax.value_at(u))
       << "</text>\n";
    os << "<text x=\"" << kL - 5 << "\" y=\"" << gy + 4 << "\" text-anchor=\"end\">" << fmt(ay.value_at(u))
       << "</text>\n";
  }
  os << "<text x=\"" << kL + pw / 2 << "\" y=\"" << kH - 12 << "\" text-anchor=\"middle\">" << x_label
     << (ax.log ? " (log)" : "") << "</text>\n";
  os << "<text x=\"16\" y=\"" << kT + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << kT + ph / 2 << ")\">" << y_label << (ay.log ? " (log)" : "") << "</text>\n";

  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    os << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\"";
    if (!s.dash.empty()) os << " stroke-dasharray=\"" << s.dash << "\"";
    os << " points=\"";
    for (const auto& [x, y] : s.points) {
      if (std::isfinite(x) && std::isfinite(y)) os << fmt(px(x)) << ',' << fmt(py(y)) << ' ';
    }
    os << "\"/>\n";
    const double ly = kT + 14 + 16.0 * static_cast<double>(i);
    os << "<line x1=\"" << kW - kR + 10 << "\" y1=\"" << ly << "\" x2=\"" << kW - kR + 34 << "\" y2=\"" << ly
       << "\" stroke=\"" << s.color << "\" stroke-width=\"1.5\"";
    if (!s.dash.empty()) os << " stroke-dasharray=\"" << s.dash << "\"";
    os << "/>\n<text x=\"" << kW - kR + 40 << "\" y=\"" << ly + 4 << "\">" << s.label << "</text>\n";
  }
  os << "</svg>\n";
}

}  // namespace detail

inline void write_result_svg(std::ostream& os, const ResultTable& table) {
  std::vector<detail::Series> series;
  if (table.experiment == ExperimentName::kCircular) {
    for (const auto& c : table.cdf) {
      series.push_back({to_string(c.estimator), detail::estimator_color(c.estimator), "", c.points});
    }
    detail::write_svg_chart(os, "circular: position error CDF", "position error [m]", "fraction", series);
    return;
  }
  std::map<EstimatorKind, std::size_t> index;
  for (const auto& r : table.rows) {
    if (!index.count(r.estimator)) {
      index[r.estimator] = series.size();
      const char* color = detail::estimator_color(r.estimator);
      const std::string name = to_string(r.estimator);
      series.push_back({name + " empirical", color, "", {}});
      series.push_back({name + " crlb", color, "6,4", {}});
      series.push_back({name + " theory", color, "2,3", {}});
    }
    const std::size_t base = index[r.estimator];
    series[base].points.emplace_back(r.sweep_value, r.empirical_rmse);
    series[base + 1].points.emplace_back(r.sweep_value, r.crlb_rmse);
    series[base + 2].points.emplace_back(r.sweep_value, r.theoretical_rmse);
  }
  // Theory that coincides with the CRLB adds nothing to the chart.
  std::vector<detail::Series> shown;
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (i % 3 == 2) {
      bool same = true;
      for (std::size_t k = 0; k < series[i].points.size(); ++k) {
        const double a = series[i].points[k].second, b = series[i - 1].points[k].second;
        same = same && std::abs(a - b) <= 1e-12 * std::max(std::abs(a), std::abs(b));
      }
      if (same) continue;
    }
    shown.push_back(series[i]);
  }
  const char* x_label = "sweep";
  switch (sweep_kind(table.experiment)) {
    case SweepKind::kSigma:
      x_label = "sigma [m]";
      break;
    case SweepKind::kSpeed:
      x_label = "UD speed [m/s]";
      break;
    case SweepKind::kDeviation:
      x_label = "speed deviation [m/s]";
      break;
    case SweepKind::kNone:
      break;
  }
  detail::write_svg_chart(os, std::string(to_string(table.experiment)) + ": position RMSE", x_label,
                          "position RMSE [m]", shown);
}

/// Writes <name>.csv (and <name>_cdf.csv for circular, <name>.svg when
/// requested) into `dir`. Returns the paths written.
inline std::vector<std::filesystem::path> write_outputs(const ResultTable& table, const std::filesystem::path& dir,
                                                        bool svg) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  auto open = [&](const std::string& file) {
    const auto path = dir / file;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw InvalidArgument("cannot write " + path.string());
    written.push_back(path);
    return os;
  };
  const std::string stem = to_string(table.experiment);
  {
    auto os = open(stem + ".csv");
    write_result_csv(os, table);
  }
  if (!table.cdf.empty()) {
    auto os = open(stem + "_cdf.csv");
    write_cdf_csv(os, table);
  }
  if (svg) {
    auto os = open(stem + ".svg");
    write_result_svg(os, table);
  }
  return written;
}

}  // namespace tdbps::harness
