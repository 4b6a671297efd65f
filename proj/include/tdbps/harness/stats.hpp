#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "tdbps/errors.hpp"

namespace tdbps::harness {

template <int N>
struct RmseSummary {
  double total = 0.0;
  Eigen::Matrix<double, N, 1> per_axis = Eigen::Matrix<double, N, 1>::Zero();
  // Standard error of `total` by the delta method.
  double standard_error = 0.0;
};

/// sqrt(mean |e_k|^2) over the error vectors, with per-axis components.
template <int N>
RmseSummary<N> empirical_rmse(const std::vector<Eigen::Matrix<double, N, 1>>& errors) {
  if (errors.empty()) throw EmptyInput("no error samples");
  const auto n = static_cast<double>(errors.size());
  RmseSummary<N> out;
  double sum_sq = 0.0;
  for (const auto& e : errors) {
    sum_sq += e.squaredNorm();
    out.per_axis += e.cwiseAbs2();
  }
  const double mean_sq = sum_sq / n;
  out.total = std::sqrt(mean_sq);
  out.per_axis = (out.per_axis / n).cwiseSqrt();

  if (errors.size() > 1 && out.total > 0.0) {
    double var = 0.0;
    for (const auto& e : errors) var += (e.squaredNorm() - mean_sq) * (e.squaredNorm() - mean_sq);
    var /= (n - 1.0);
    out.standard_error = std::sqrt(var / n) / (2.0 * out.total);
  }
  return out;
}

/// Empirical CDF as (value, fraction <= value) at each distinct value.
inline std::vector<std::pair<double, double>> error_cdf(std::vector<double> values) {
  if (values.empty()) throw EmptyInput("no samples for CDF");
  std::sort(values.begin(), values.end());
  const auto n = static_cast<double>(values.size());
  std::vector<std::pair<double, double>> out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i + 1 < values.size() && values[i + 1] == values[i]) continue;
    out.emplace_back(values[i], static_cast<double>(i + 1) / n);
  }
  return out;
}

}  // namespace tdbps::harness
