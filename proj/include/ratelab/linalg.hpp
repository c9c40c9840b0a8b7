#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "ratelab/errors.hpp"

namespace ratelab {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Cholesky with the fixed jitter ladder 0, 1e-12, 1e-10, 1e-8 (times the
/// mean diagonal).  Throws conditioning_error after the last rung.
inline Eigen::LLT<MatrixXd> cholesky_with_jitter(const MatrixXd& a, double* jitter_used = nullptr) {
  const double scale = a.diagonal().mean();
  for (double rung : {0.0, 1e-12, 1e-10, 1e-8}) {
    MatrixXd m = a;
    if (rung > 0.0) m.diagonal().array() += rung * scale;
    Eigen::LLT<MatrixXd> llt(m);
    if (llt.info() == Eigen::Success) {
      if (jitter_used) *jitter_used = rung * scale;
      return llt;
    }
  }
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(a, Eigen::EigenvaluesOnly);
  const double min_eig = es.info() == Eigen::Success
                             ? es.eigenvalues().minCoeff()
                             : -std::numeric_limits<double>::infinity();
  throw conditioning_error(
      "cholesky failed after jitter ladder; min eigenvalue estimate " + std::to_string(min_eig),
      min_eig);
}

/// Operator (spectral) norm of a symmetric matrix by full eigendecomposition.
inline double sym_operator_norm(const MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(a, Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

struct EigenRange {
  double min;
  double max;
};

inline EigenRange sym_eigen_range(const MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(a, Eigen::EigenvaluesOnly);
  return {es.eigenvalues().minCoeff(), es.eigenvalues().maxCoeff()};
}

struct SlopeFit {
  double slope;
  double intercept;
  double stderr_slope;
};

/// Ordinary least squares y ~ intercept + slope * x.
inline SlopeFit least_squares_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const auto m = static_cast<double>(x.size());
  if (x.size() != y.size() || x.size() < 2)
    throw std::invalid_argument("least_squares_slope needs >= 2 paired points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= m;
  my /= m;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0.0) throw std::invalid_argument("least_squares_slope: degenerate abscissae");
  const double slope = sxy / sxx;
  const double intercept = my - slope * mx;
  double rss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - intercept - slope * x[i];
    rss += r * r;
  }
  const double se = x.size() > 2 ? std::sqrt(rss / (m - 2.0) / sxx) : 0.0;
  return {slope, intercept, se};
}

inline double log_sum_exp(const std::vector<double>& logs) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : logs) m = std::max(m, v);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : logs) s += std::exp(v - m);
  return m + std::log(s);
}

/// Empirical quantile with linear interpolation, 0 <= p <= 1.
inline double quantile(std::vector<double> xs, double p) {
  std::sort(xs.begin(), xs.end());
  if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double pos = p * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const auto hi = std::min(lo + 1, xs.size() - 1);
  const double w = pos - static_cast<double>(lo);
  return (1.0 - w) * xs[lo] + w * xs[hi];
}

}  // namespace ratelab
