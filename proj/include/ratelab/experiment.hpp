#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "ratelab/linalg.hpp"

namespace ratelab {

/// A rectangular table of named numeric columns; the raw-row store behind
/// every experiment.
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  int column_index(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return static_cast<int>(i);
    throw std::invalid_argument("no column named " + name);
  }

  void add_row(std::vector<double> row) {
    if (row.size() != columns.size()) throw std::invalid_argument("row width mismatch");
    rows.push_back(std::move(row));
  }
};

struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  double stderr_slope = 0.0;
  double target = 0.0;
  double tolerance = 0.0;
  bool pass = false;
  bool insufficient_points = false;
  std::string statistic;
};

/// Replicate-indexed results of one experiment plus the fitted log-log
/// slopes against their target exponents.
struct ExperimentResult {
  Table table;
  std::vector<RateFit> fits;
  bool pass = true;
  std::string note;
  long failed_cells = 0;
  long total_cells = 0;
  std::vector<std::pair<std::string, double>> extras;      // kind-specific summary scalars
  std::vector<std::pair<std::string, Table>> side_tables;  // extra CSV emissions
};

/// Mean of `statistic` per n, then least squares of ln(mean) on the
/// regressor (ln n, or ln(n / ln n) for the randomly truncated sieve).
/// Requires >= 4 distinct n values and positive means.
inline RateFit fit_rate(const Table& table, const std::string& statistic, double target,
                        double tolerance, bool log_over_loglog_regressor = false) {
  const int cn = table.column_index("n");
  const int cs = table.column_index(statistic);
  std::map<double, std::pair<double, long>> acc;  // n -> (sum, count)
  for (const auto& row : table.rows) {
    auto& a = acc[row[static_cast<std::size_t>(cn)]];
    a.first += row[static_cast<std::size_t>(cs)];
    a.second += 1;
  }
  RateFit fit;
  fit.statistic = statistic;
  fit.target = target;
  fit.tolerance = tolerance;
  if (acc.size() < 4) {
    fit.insufficient_points = true;
    fit.pass = false;
    return fit;
  }
  std::vector<double> xs, ys;
  for (const auto& [n, a] : acc) {
    const double mean = a.first / static_cast<double>(a.second);
    if (!(mean > 0.0))
      throw std::domain_error("fit_rate: non-positive mean of " + statistic + " at n = " +
                              std::to_string(static_cast<long>(n)));
    xs.push_back(log_over_loglog_regressor ? std::log(n / std::log(n)) : std::log(n));
    ys.push_back(std::log(mean));
  }
  const SlopeFit ls = least_squares_slope(xs, ys);
  fit.slope = ls.slope;
  fit.intercept = ls.intercept;
  fit.stderr_slope = ls.stderr_slope;
  fit.pass = std::abs(fit.slope - fit.target) <= fit.tolerance;
  return fit;
}

}  // namespace ratelab
