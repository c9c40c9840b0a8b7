#pragma once

#include <atomic>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "ratelab/basis.hpp"
#include "ratelab/errors.hpp"
#include "ratelab/gp.hpp"
#include "ratelab/linalg.hpp"

namespace ratelab {

namespace truncation {

struct Fixed {
  int J;
};
/// P(J = j) = (1-q) q^{j-1}, q = e^{-b}.
struct Geometric {
  double b;
};
/// Poisson conditioned on J >= 1.
struct Poisson {
  double rate;
};

}  // namespace truncation

namespace coefficient_density {

struct StdGaussian {};
struct Custom {
  std::function<double(std::mt19937_64&)> sampler;
  double tail_c1 = 0.0, tail_c2 = 0.0, tail_c3 = 0.0;  // Assumption-style tail record
};

}  // namespace coefficient_density

/// Random series prior f = sum_{j<=J} Z_j u_j with i.i.d. coefficients and
/// a deterministic or randomized truncation, capped at J_max (draws above
/// the cap clamp and are counted).
class SievePrior {
 public:
  using Truncation = std::variant<truncation::Fixed, truncation::Geometric, truncation::Poisson>;
  using Psi = std::variant<coefficient_density::StdGaussian, coefficient_density::Custom>;

  SievePrior(std::shared_ptr<const BasisFamily> basis, Truncation trunc, int J_max,
             Psi psi = coefficient_density::StdGaussian{})
      : basis_(std::move(basis)), truncation_(trunc), psi_(std::move(psi)), j_max_(J_max) {
    if (!basis_) throw std::invalid_argument("sieve prior needs a basis");
    if (j_max_ < 1) throw std::domain_error("J_max must be >= 1");
    if (const auto* f = std::get_if<truncation::Fixed>(&truncation_)) {
      if (f->J < 1 || f->J > j_max_) throw std::domain_error("fixed truncation out of range");
    }
    build_pmf();
  }

  const BasisFamily& basis() const { return *basis_; }
  std::shared_ptr<const BasisFamily> basis_ptr() const { return basis_; }
  int j_max() const { return j_max_; }
  bool gaussian_coefficients() const {
    return std::holds_alternative<coefficient_density::StdGaussian>(psi_);
  }
  long clamp_count() const { return clamp_count_->load(); }

  /// pi_J(j) with the mass beyond J_max folded onto J_max.
  double truncation_pmf(int j) const {
    if (j < 1 || j > j_max_) return 0.0;
    return pmf_[static_cast<std::size_t>(j - 1)];
  }

  /// Exact sum of pi_J over (J_n, J_max].
  double prior_tail_mass(int j_n) const {
    if (j_n < 0 || j_n >= j_max_) {
      if (j_n == j_max_) return 0.0;
      throw std::domain_error("prior_tail_mass needs 0 <= J_n <= J_max");
    }
    double s = 0.0;
    for (int j = j_n + 1; j <= j_max_; ++j) s += pmf_[static_cast<std::size_t>(j - 1)];
    return s;
  }

  int sample_truncation(std::mt19937_64& rng) const {
    if (const auto* f = std::get_if<truncation::Fixed>(&truncation_)) return f->J;
    int j;
    if (const auto* g = std::get_if<truncation::Geometric>(&truncation_)) {
      std::uniform_real_distribution<double> unif(0.0, 1.0);
      const double q = std::exp(-g->b);
      j = 1 + static_cast<int>(std::floor(std::log1p(-unif(rng)) / std::log(q)));
    } else {
      const auto& p = std::get<truncation::Poisson>(truncation_);
      std::poisson_distribution<int> pois(p.rate);
      do {
        j = pois(rng);
      } while (j < 1);
    }
    if (j > j_max_) {
      clamp_count_->fetch_add(1, std::memory_order_relaxed);
      j = j_max_;
    }
    return j;
  }

  double sample_coefficient(std::mt19937_64& rng) const {
    if (gaussian_coefficients()) {
      std::normal_distribution<double> gauss(0.0, 1.0);
      return gauss(rng);
    }
    return std::get<coefficient_density::Custom>(psi_).sampler(rng);
  }

  struct Draw {
    int J;
    Eigen::VectorXd coefficients;

    double operator()(const BasisFamily& basis, Point x) const {
      double v = 0.0;
      for (int j = 1; j <= J; ++j) v += coefficients[j - 1] * basis.evaluate(j, x);
      return v;
    }
  };

  Draw sample_prior(std::mt19937_64& rng) const {
    Draw d;
    d.J = sample_truncation(rng);
    d.coefficients.resize(d.J);
    for (int j = 0; j < d.J; ++j) d.coefficients[j] = sample_coefficient(rng);
    return d;
  }

 private:
  void build_pmf() {
    pmf_.assign(static_cast<std::size_t>(j_max_), 0.0);
    if (const auto* f = std::get_if<truncation::Fixed>(&truncation_)) {
      pmf_[static_cast<std::size_t>(f->J - 1)] = 1.0;
      return;
    }
    if (const auto* g = std::get_if<truncation::Geometric>(&truncation_)) {
      const double q = std::exp(-g->b);
      double above = 1.0;  // P(J > j-1)
      for (int j = 1; j < j_max_; ++j) {
        pmf_[static_cast<std::size_t>(j - 1)] = (1.0 - q) * std::pow(q, j - 1);
        above -= pmf_[static_cast<std::size_t>(j - 1)];
      }
      pmf_[static_cast<std::size_t>(j_max_ - 1)] = std::max(0.0, above);  // folded tail
      return;
    }
    const auto& p = std::get<truncation::Poisson>(truncation_);
    double logfact = 0.0;
    std::vector<double> logs(static_cast<std::size_t>(j_max_));
    for (int j = 1; j <= j_max_; ++j) {
      logfact += std::log(static_cast<double>(j));
      logs[static_cast<std::size_t>(j - 1)] = j * std::log(p.rate) - p.rate - logfact;
    }
    const double lse = log_sum_exp(logs);
    // normalize over {1..J_max}; the residual above J_max folds onto J_max,
    // which for the configured caps carries less than 1e-10 mass
    double total = 0.0;
    for (int j = 1; j <= j_max_; ++j) {
      pmf_[static_cast<std::size_t>(j - 1)] = std::exp(logs[static_cast<std::size_t>(j - 1)] - lse);
      total += pmf_[static_cast<std::size_t>(j - 1)];
    }
    for (auto& v : pmf_) v /= total;
  }

  std::shared_ptr<const BasisFamily> basis_;
  Truncation truncation_;
  Psi psi_;
  int j_max_;
  std::vector<double> pmf_;
  // shared so copies keep reporting into one clamp log
  std::shared_ptr<std::atomic<long>> clamp_count_ = std::make_shared<std::atomic<long>>(0);
};

/// Posterior over the truncation level for unit-Gaussian coefficients:
/// log weights log pi_J(J) + log N(Y; 0, U_J U_J^T + sigma^2 I), swept over
/// J = 1..J_max with an incrementally grown Cholesky factor.  Works for any
/// feature matrix whose column j holds the j-th basis element at the design
/// points.
struct TruncationPosterior {
  std::vector<double> log_weights;  // index j-1, normalized
  std::vector<double> weights;

  int mode() const {
    int best = 1;
    for (std::size_t j = 1; j < weights.size(); ++j)
      if (weights[j] > weights[static_cast<std::size_t>(best - 1)]) best = static_cast<int>(j) + 1;
    return best;
  }

  int sample(std::mt19937_64& rng) const {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    double u = unif(rng);
    for (std::size_t j = 0; j < weights.size(); ++j) {
      u -= weights[j];
      if (u <= 0.0) return static_cast<int>(j) + 1;
    }
    return static_cast<int>(weights.size());
  }

  double tail_mass(int j_n) const {
    double s = 0.0;
    for (std::size_t j = static_cast<std::size_t>(j_n); j < weights.size(); ++j) s += weights[j];
    return s;
  }
};

inline TruncationPosterior posterior_over_truncation_features(
    const Eigen::MatrixXd& features, const Eigen::VectorXd& y, double sigma2,
    const std::function<double(int)>& log_prior_j) {
  const auto n = features.rows();
  const int j_max = static_cast<int>(features.cols());
  if (j_max < 1) throw std::domain_error("need at least one candidate truncation");

  // Cholesky of sigma^2 I_J + U_J^T U_J grown one column at a time.
  Eigen::MatrixXd chol(j_max, j_max);
  Eigen::VectorXd z(j_max);  // L^{-1} U^T Y
  const Eigen::VectorXd uty = features.transpose() * y;
  const double yy = y.squaredNorm();
  const double base = n * std::log(2.0 * std::numbers::pi);

  std::vector<double> logw(static_cast<std::size_t>(j_max));
  double logdet = 0.0, quad_part = 0.0;
  for (int j = 0; j < j_max; ++j) {
    Eigen::VectorXd col = features.leftCols(j + 1).transpose() * features.col(j);
    col[j] += sigma2;
    double d2 = col[j];
    double znew = uty[j];
    if (j > 0) {
      const auto lj = chol.topLeftCorner(j, j).triangularView<Eigen::Lower>();
      const Eigen::VectorXd c = lj.solve(col.head(j));
      chol.row(j).head(j) = c.transpose();
      d2 -= c.squaredNorm();
      znew -= c.dot(z.head(j));
    }
    if (d2 <= 0.0)
      throw conditioning_error("incremental cholesky broke down at J = " + std::to_string(j + 1),
                               d2);
    const double d = std::sqrt(d2);
    chol(j, j) = d;
    znew /= d;
    z[j] = znew;

    logdet += 2.0 * std::log(d);
    quad_part += znew * znew;
    const double logdet_omega = (n - (j + 1)) * std::log(sigma2) + logdet;
    const double quad = (yy - quad_part) / sigma2;
    const double prior = log_prior_j(j + 1);
    logw[static_cast<std::size_t>(j)] =
        prior <= -std::numeric_limits<double>::infinity()
            ? -std::numeric_limits<double>::infinity()
            : prior - 0.5 * (base + logdet_omega + quad);
  }

  const double lse = log_sum_exp(logw);
  if (!std::isfinite(lse)) throw numerical_error("all truncation log-weights are -inf");
  TruncationPosterior out;
  out.log_weights.resize(logw.size());
  out.weights.resize(logw.size());
  for (std::size_t j = 0; j < logw.size(); ++j) {
    out.log_weights[j] = logw[j] - lse;
    out.weights[j] = std::exp(out.log_weights[j]);
  }
  return out;
}

inline Eigen::MatrixXd sieve_feature_matrix(const BasisFamily& basis, int j_max,
                                            const std::vector<Point>& design) {
  const auto n = static_cast<Eigen::Index>(design.size());
  Eigen::MatrixXd u(n, j_max);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int j = 1; j <= j_max; ++j)
      u(i, j - 1) = basis.evaluate(j, design[static_cast<std::size_t>(i)]);
  return u;
}

inline TruncationPosterior posterior_over_truncation(const SievePrior& prior,
                                                     const RegressionData& data) {
  if (!prior.gaussian_coefficients())
    throw std::domain_error("truncation posterior requires the Gaussian coefficient density");
  const Eigen::MatrixXd u = sieve_feature_matrix(prior.basis(), prior.j_max(), data.design);
  return posterior_over_truncation_features(u, data.responses, data.sigma2, [&](int j) {
    const double p = prior.truncation_pmf(j);
    return p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity();
  });
}

/// Conjugate coefficient posterior for a fixed truncation:
/// N((U^T U / sigma^2 + I)^{-1} U^T Y / sigma^2, (U^T U / sigma^2 + I)^{-1}).
struct ConditionalCoefficientPosterior {
  Eigen::VectorXd mean;
  Eigen::LLT<Eigen::MatrixXd> precision_chol;  // of I + G/sigma^2

  Eigen::VectorXd sample(std::mt19937_64& rng) const {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::VectorXd zvec(mean.size());
    for (Eigen::Index i = 0; i < zvec.size(); ++i) zvec[i] = gauss(rng);
    // cov = P^{-1} = L^{-T} L^{-1}; mean + L^{-T} z has covariance P^{-1}
    return mean + precision_chol.matrixU().solve(zvec);
  }
};

inline ConditionalCoefficientPosterior conditional_coefficients(const Eigen::MatrixXd& features,
                                                                const Eigen::VectorXd& y,
                                                                double sigma2, int J) {
  const Eigen::MatrixXd u = features.leftCols(J);
  Eigen::MatrixXd p = u.transpose() * u / sigma2;
  p.diagonal().array() += 1.0;
  ConditionalCoefficientPosterior out;
  out.precision_chol = cholesky_with_jitter(p);
  out.mean = out.precision_chol.solve(u.transpose() * y / sigma2);
  return out;
}

/// Draw (J, coefficients) from the joint posterior: J from the truncation
/// posterior, then the conjugate Gaussian conditional.
inline SievePrior::Draw sample_posterior(const SievePrior& prior, const RegressionData& data,
                                         const TruncationPosterior& tp,
                                         const Eigen::MatrixXd& features, std::mt19937_64& rng) {
  SievePrior::Draw d;
  d.J = tp.sample(rng);
  d.coefficients = conditional_coefficients(features, data.responses, data.sigma2, d.J).sample(rng);
  return d;
}

inline SievePrior::Draw sample_posterior(const SievePrior& prior, const RegressionData& data,
                                         std::mt19937_64& rng) {
  const Eigen::MatrixXd u = sieve_feature_matrix(prior.basis(), prior.j_max(), data.design);
  const TruncationPosterior tp = posterior_over_truncation(prior, data);
  return sample_posterior(prior, data, tp, u, rng);
}

}  // namespace ratelab
