#pragma once

#include <cmath>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "ratelab/basis.hpp"
#include "ratelab/errors.hpp"
#include "ratelab/linalg.hpp"
#include "ratelab/spectral.hpp"

namespace ratelab {

struct RegressionData {
  std::vector<Point> design;
  Eigen::VectorXd responses;
  double sigma2 = 1.0;
  std::optional<TestFunction> truth;  // synthetic evaluation only

  int n() const { return static_cast<int>(design.size()); }
};

/// y_i = f0(x_i) + N(0, sigma^2) over an i.i.d. design from mu0.
inline RegressionData synthesize_data(const BasisFamily& family, const TestFunction& f0,
                                      const DesignMeasure& measure, int n, double sigma2,
                                      std::mt19937_64& rng) {
  if (n < 1) throw std::domain_error("need n >= 1 observations");
  if (sigma2 <= 0.0) throw std::domain_error("noise variance must be positive");
  RegressionData data;
  data.design.reserve(static_cast<std::size_t>(n));
  data.responses.resize(n);
  data.sigma2 = sigma2;
  data.truth = f0;
  std::normal_distribution<double> noise(0.0, std::sqrt(sigma2));
  for (int i = 0; i < n; ++i) {
    const Point x = measure.sample(rng);
    data.design.push_back(x);
    data.responses[i] = f0(family, x) + noise(rng);
  }
  return data;
}

/// Exact conjugate posterior state for a finite-rank spectral kernel:
/// Gram matrix A = k_XX + sigma^2 I, representer weights A^{-1} Y, and the
/// feature matrices U_L, M_L feeding the integrated-variance series.
class GpPosterior {
 public:
  GpPosterior(SpectralKernel kernel, RegressionData data, double kappa = 0.5)
      : kernel_(std::move(kernel)), data_(std::move(data)), kappa_(kappa) {
    const int n = data_.n();
    if (n < 1) throw std::domain_error("posterior needs n >= 1");
    rank_ = kernel_.eval_truncation();
    s_.resize(rank_);
    for (int l = 1; l <= rank_; ++l) s_[l - 1] = kernel_.eigenvalue(l);
    u_.resize(n, rank_);
    for (int i = 0; i < n; ++i)
      for (int l = 1; l <= rank_; ++l) u_(i, l - 1) = kernel_.family().evaluate(l, data_.design[i]);

    Eigen::MatrixXd a = u_ * s_.asDiagonal() * u_.transpose();
    a.diagonal().array() += data_.sigma2;
    llt_a_ = cholesky_with_jitter(a, &jitter_used_);
    weights_ = llt_a_.solve(data_.responses);
  }

  const SpectralKernel& kernel() const { return kernel_; }
  const RegressionData& data() const { return data_; }
  int n() const { return data_.n(); }
  int rank() const { return rank_; }
  double sigma2() const { return data_.sigma2; }
  double kappa() const { return kappa_; }
  const Eigen::MatrixXd& feature_matrix() const { return u_; }
  const Eigen::VectorXd& prior_eigenvalues() const { return s_; }
  const Eigen::VectorXd& representer_weights() const { return weights_; }

  Eigen::VectorXd cross_kernel(Point x) const {
    Eigen::VectorXd ux(rank_);
    for (int l = 1; l <= rank_; ++l) ux[l - 1] = kernel_.family().evaluate(l, x);
    return u_ * (s_.asDiagonal() * ux);
  }

  /// Posterior mean k_Xx^T A^{-1} Y.
  double mean(Point x) const { return cross_kernel(x).dot(weights_); }
  double mean(double x) const { return mean(Point{x, 0.0}); }

  /// Posterior kernel k_n(x,y) = k(x,y) - k_Xx^T A^{-1} k_Xy.
  double posterior_kernel(Point x, Point y) const {
    const Eigen::VectorXd kx = cross_kernel(x);
    const Eigen::VectorXd ky = cross_kernel(y);
    return kernel_(x, y) - kx.dot(llt_a_.solve(ky));
  }

  template <class Rhs>
  auto solve_gram(const Eigen::MatrixBase<Rhs>& rhs) const {
    return llt_a_.solve(rhs).eval();
  }

 private:
  SpectralKernel kernel_;
  RegressionData data_;
  double kappa_;
  int rank_ = 0;
  Eigen::VectorXd s_;
  Eigen::MatrixXd u_;
  Eigen::LLT<Eigen::MatrixXd> llt_a_;
  Eigen::VectorXd weights_;
  double jitter_used_ = 0.0;
};

inline GpPosterior fit_posterior(const SpectralKernel& kernel, RegressionData data,
                                 double kappa = 0.5) {
  return GpPosterior(kernel, std::move(data), kappa);
}

/// Posterior mean in coefficient space for the same finite-rank kernel:
/// solves (sigma^2 I + M^{1/2} U^T U M^{1/2}) b = M^{1/2} U^T Y and returns
/// M^{1/2} b.  Coincides with the representer form; the scaled system keeps
/// vanishing prior variances harmless.
inline Eigen::VectorXd posterior_mean_coefficients(const Eigen::MatrixXd& u,
                                                   const Eigen::VectorXd& s,
                                                   const Eigen::VectorXd& y, double sigma2) {
  const Eigen::VectorXd msqrt = s.array().max(0.0).sqrt();
  Eigen::MatrixXd b = msqrt.asDiagonal() * (u.transpose() * u) * msqrt.asDiagonal();
  b.diagonal().array() += sigma2;
  Eigen::LLT<Eigen::MatrixXd> llt = cholesky_with_jitter(b);
  const Eigen::VectorXd rhs = msqrt.asDiagonal() * (u.transpose() * y);
  return msqrt.asDiagonal() * llt.solve(rhs);
}

/// sigma_n^2 = sum_{l<=L} s_l (1 - s_l Tr[A^{-1} e_{l,X} e_{l,X}^T]); exact
/// for finite-rank kernels once L covers the rank.
inline double integrated_variance_series(const GpPosterior& post, int L) {
  if (L < 1 || L > post.rank())
    throw std::domain_error("integrated_variance_series needs 1 <= L <= kernel rank");
  const Eigen::MatrixXd v = post.solve_gram(post.feature_matrix().leftCols(L));
  double total = 0.0;
  for (int l = 0; l < L; ++l) {
    const double s = post.prior_eigenvalues()[l];
    total += s * (1.0 - s * post.feature_matrix().col(l).dot(v.col(l)));
  }
  if (total < -1e-10)
    throw numerical_error("integrated variance came out negative: " + std::to_string(total));
  return std::max(total, 0.0);
}

struct VarianceBound {
  double bound;
  bool event_E_holds;
  double lambda_min_gram;  // lambda_min of (1/n) U_L^T U_L
  double tail;
};

/// The proof-side bound sigma^2 L / (n kappa) + sum_{l>L} s_l, and whether
/// the event E = { lambda_min((1/n) U_L^T U_L) >= kappa } holds.
inline VarianceBound variance_upper_bound(const GpPosterior& post, int L) {
  if (L < 0 || L > post.rank())
    throw std::domain_error("variance_upper_bound needs 0 <= L <= kernel rank");
  const double tail = post.kernel().tail_sum(L);
  if (L == 0) return {tail, true, 0.0, tail};
  Eigen::MatrixXd g =
      post.feature_matrix().leftCols(L).transpose() * post.feature_matrix().leftCols(L) /
      static_cast<double>(post.n());
  const double lmin = sym_eigen_range(g).min;
  const double bound = post.sigma2() * L / (post.n() * post.kappa()) + tail;
  return {bound, lmin >= post.kappa(), lmin, tail};
}

struct TraceIdentity {
  double lhs;
  double rhs;
};

/// Both sides of the identity
///   Tr[M_L - A_L^{-1} U_L M_L^2 U_L^T] = sigma^2 Tr[(sigma^2 M_L^{-1} + U_L^T U_L)^{-1}],
/// computed by independent dense routes (n x n on the left, L x L on the
/// right).
inline TraceIdentity trace_identity_check(const GpPosterior& post, int L) {
  if (L < 1 || L > post.rank())
    throw std::domain_error("trace_identity_check needs 1 <= L <= kernel rank");
  const Eigen::VectorXd s = post.prior_eigenvalues().head(L);
  if ((s.array() <= 0.0).any())
    throw std::domain_error("trace identity needs s_l > 0 for all l <= L");
  const Eigen::MatrixXd ul = post.feature_matrix().leftCols(L);

  Eigen::MatrixXd a_l = ul * s.asDiagonal() * ul.transpose();
  a_l.diagonal().array() += post.sigma2();
  Eigen::LLT<Eigen::MatrixXd> llt = cholesky_with_jitter(a_l);
  double lhs = s.sum();
  const Eigen::MatrixXd v = llt.solve(ul);
  for (int l = 0; l < L; ++l) lhs -= s[l] * s[l] * ul.col(l).dot(v.col(l));

  Eigen::MatrixXd b = ul.transpose() * ul;
  b.diagonal() += post.sigma2() * s.cwiseInverse();
  Eigen::LLT<Eigen::MatrixXd> lltb = cholesky_with_jitter(b);
  const Eigen::MatrixXd binv = lltb.solve(Eigen::MatrixXd::Identity(L, L));
  const double rhs = post.sigma2() * binv.trace();
  return {lhs, rhs};
}

struct TPosterior {
  std::vector<double> t_grid;
  std::vector<double> log_weights;  // normalized over the grid
  std::vector<double> weights;

  double mean_t() const {
    double m = 0.0;
    for (std::size_t i = 0; i < t_grid.size(); ++i) m += t_grid[i] * weights[i];
    return m;
  }
};

/// Grid hyperposterior over the heat-kernel bandwidth t:
/// weights proportional to pi_1(t) N(Y; 0, K_t + sigma^2 I) with
/// pi_1(t) = t^{-a} exp(-t^{-d/2} ln^{1+d/2}(1/t)), all in the log domain.
inline TPosterior hierarchical_t_posterior(const RegressionData& data,
                                           std::shared_ptr<const BasisFamily> basis,
                                           const std::vector<double>& t_grid,
                                           double hyper_a) {
  if (t_grid.empty()) throw std::domain_error("t grid must be nonempty");
  for (std::size_t i = 0; i < t_grid.size(); ++i) {
    if (t_grid[i] <= 0.0 || t_grid[i] >= 1.0)
      throw std::domain_error("t grid must lie strictly inside (0,1)");
    if (i > 0 && t_grid[i] <= t_grid[i - 1])
      throw std::domain_error("t grid must be strictly increasing");
  }
  const double d = basis->dim();
  const int n = data.n();
  const double sigma2 = data.sigma2;

  std::vector<double> logw(t_grid.size());
  for (std::size_t k = 0; k < t_grid.size(); ++k) {
    const double t = t_grid[k];
    SpectralKernel kt = SpectralKernel::heat(basis, t).certify_eval_truncation(1e-10);
    const int rank = kt.eval_truncation();
    Eigen::MatrixXd phi(n, rank);  // features sqrt(s_j) u_j(x_i)
    for (int j = 1; j <= rank; ++j) {
      const double sq = std::sqrt(kt.eigenvalue(j));
      for (int i = 0; i < n; ++i)
        phi(i, j - 1) = sq == 0.0 ? 0.0 : sq * basis->evaluate(j, data.design[i]);
    }
    Eigen::MatrixXd b = phi.transpose() * phi / sigma2;
    b.diagonal().array() += 1.0;
    Eigen::LLT<Eigen::MatrixXd> llt = cholesky_with_jitter(b);
    double logdet_b = 0.0;
    for (int i = 0; i < rank; ++i) logdet_b += 2.0 * std::log(llt.matrixLLT()(i, i));
    const Eigen::VectorXd py = phi.transpose() * data.responses;
    const double quad =
        (data.responses.squaredNorm() - py.dot(llt.solve(py)) / sigma2) / sigma2;
    const double loglik = -0.5 * (n * std::log(2.0 * std::numbers::pi * sigma2) + logdet_b + quad);
    const double logprior =
        -hyper_a * std::log(t) - std::pow(t, -d / 2.0) * std::pow(std::log(1.0 / t), 1.0 + d / 2.0);
    logw[k] = loglik + logprior;
  }

  const double lse = log_sum_exp(logw);
  if (!std::isfinite(lse)) {
    double best = -std::numeric_limits<double>::infinity();
    for (double v : logw) best = std::max(best, v);
    throw numerical_error("all hyperposterior weights underflowed; max log weight " +
                          std::to_string(best));
  }
  TPosterior out;
  out.t_grid = t_grid;
  out.log_weights.resize(t_grid.size());
  out.weights.resize(t_grid.size());
  for (std::size_t k = 0; k < t_grid.size(); ++k) {
    out.log_weights[k] = logw[k] - lse;
    out.weights[k] = std::exp(out.log_weights[k]);
  }
  return out;
}

/// One draw from N(fhat(grid), k_n(grid, grid)) by symmetric factorization
/// with a 1e-10 * trace jitter.
inline Eigen::VectorXd posterior_function_draw(const GpPosterior& post,
                                               const std::vector<Point>& eval_grid,
                                               std::mt19937_64& rng) {
  const auto g = static_cast<Eigen::Index>(eval_grid.size());
  if (g < 1 || g > 4096) throw std::domain_error("eval grid must have between 1 and 4096 points");
  const int rank = post.rank();
  Eigen::MatrixXd ug(g, rank);
  for (Eigen::Index i = 0; i < g; ++i)
    for (int l = 1; l <= rank; ++l)
      ug(i, l - 1) = post.kernel().family().evaluate(l, eval_grid[static_cast<std::size_t>(i)]);

  const Eigen::MatrixXd k_gx =
      ug * post.prior_eigenvalues().asDiagonal() * post.feature_matrix().transpose();
  const Eigen::VectorXd mean = k_gx * post.representer_weights();
  Eigen::MatrixXd cov = ug * post.prior_eigenvalues().asDiagonal() * ug.transpose() -
                        k_gx * post.solve_gram(k_gx.transpose());
  cov.diagonal().array() += 1e-10 * std::max(cov.trace(), 0.0);
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success)
    throw numerical_error("posterior covariance factorization failed after jitter");
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::VectorXd z(g);
  for (Eigen::Index i = 0; i < g; ++i) z[i] = gauss(rng);
  return mean + llt.matrixL() * z;
}

/// KL(P_{f0}, P_f) = (n / 2 sigma^2) ||f - f0||_n^2 for the Gaussian model;
/// a prior-mass diagnostic, not an inference quantity.
inline double kl_divergence_empirical(const BasisFamily& family, const TestFunction& f,
                                      const TestFunction& f0, const std::vector<Point>& design,
                                      double sigma2) {
  double ss = 0.0;
  for (const Point& x : design) {
    const double d = f(family, x) - f0(family, x);
    ss += d * d;
  }
  return ss / (2.0 * sigma2);
}

}  // namespace ratelab
