#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "ratelab/basis.hpp"
#include "ratelab/errors.hpp"
#include "ratelab/linalg.hpp"
#include "ratelab/rng.hpp"

namespace ratelab {

/// (Sigma_n)_{jk} = (1/n) sum_i u_j(x_i) u_k(x_i).
inline Eigen::MatrixXd empirical_gram(const BasisFamily& family, int J,
                                      const std::vector<Point>& design) {
  if (J < 1) throw std::domain_error("empirical_gram needs J >= 1");
  if (design.empty()) throw std::domain_error("empirical_gram needs n >= 1");
  const auto n = static_cast<Eigen::Index>(design.size());
  Eigen::MatrixXd u(n, J);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int j = 1; j <= J; ++j) u(i, j - 1) = family.evaluate(j, design[static_cast<std::size_t>(i)]);
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(J, J);
  g.selfadjointView<Eigen::Lower>().rankUpdate(u.transpose(), 1.0 / static_cast<double>(n));
  return g.selfadjointView<Eigen::Lower>();
}

/// Population Gram Sigma_{jk} = int u_j u_k p0 dmu under the basis module's
/// grid-refinement policy.
inline Eigen::MatrixXd population_gram(const BasisFamily& family, int J,
                                       const DesignMeasure& measure, int start_grid = 4096,
                                       int cap = 65536) {
  if (J < 1) throw std::domain_error("population_gram needs J >= 1");
  auto assemble = [&](const QuadratureGrid& grid) {
    const auto m = static_cast<Eigen::Index>(grid.nodes.size());
    Eigen::MatrixXd u(m, J);
    Eigen::VectorXd w(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      const Point& x = grid.nodes[static_cast<std::size_t>(i)];
      w[i] = grid.weights[static_cast<std::size_t>(i)] * measure.density(x);
      for (int j = 1; j <= J; ++j) u(i, j - 1) = family.evaluate(j, x);
    }
    return Eigen::MatrixXd(u.transpose() * w.asDiagonal() * u);
  };
  int g = start_grid;
  Eigen::MatrixXd prev = assemble(make_grid(family.space(), g));
  while (g < cap) {
    g *= 2;
    Eigen::MatrixXd next = assemble(make_grid(family.space(), g));
    const double scale = std::max(prev.cwiseAbs().maxCoeff(), next.cwiseAbs().maxCoeff());
    const double diff = (next - prev).cwiseAbs().maxCoeff();
    prev = std::move(next);
    if (scale == 0.0 || diff <= 1e-3 * scale) break;
  }
  return prev;
}

/// Empirical vs population inner-product matrices with the Theorem-style
/// thresholds lambda_- = p_-/2, lambda_+ = p_+ + p_-/2 and the extreme
/// eigenvalue event flag.
struct GramReport {
  int J = 0;
  int n = 0;
  Eigen::MatrixXd sigma_n;
  Eigen::MatrixXd sigma;
  double lambda_min = 0.0;
  double lambda_max = 0.0;
  double lambda_minus = 0.0;
  double lambda_plus = 0.0;
  double p_minus = 0.0;
  bool event = false;
};

inline GramReport make_gram_report(const BasisFamily& family, int J,
                                   const std::vector<Point>& design,
                                   const DesignMeasure& measure,
                                   const Eigen::MatrixXd* population = nullptr) {
  GramReport r;
  r.J = J;
  r.n = static_cast<int>(design.size());
  r.sigma_n = empirical_gram(family, J, design);
  r.sigma = population ? *population : population_gram(family, J, measure);
  const EigenRange range = sym_eigen_range(r.sigma_n);
  r.lambda_min = range.min;
  r.lambda_max = range.max;
  r.p_minus = measure.p_minus();
  r.lambda_minus = measure.p_minus() / 2.0;
  r.lambda_plus = measure.p_plus() + measure.p_minus() / 2.0;
  r.event = r.lambda_minus <= r.lambda_min && r.lambda_max <= r.lambda_plus;
  return r;
}

struct ConcentrationRow {
  int replicate;
  int J;
  int n;
  double lambda_min;
  double lambda_max;
  double op_deviation;
  bool event_bracket;  // extreme eigenvalues inside [lambda_-, lambda_+]
  bool event_kappa;    // lambda_min >= kappa
};

struct ConcentrationResult {
  double event_frequency = 0.0;        // bracket event
  double event_kappa_frequency = 0.0;  // event E with the given kappa
  double deviation_median = 0.0;
  double deviation_p90 = 0.0;
  double deviation_max = 0.0;
  double dimensionless_ratio = 0.0;  // n / (C_J^2 J ln J)
  std::vector<ConcentrationRow> rows;
};

/// Monte-Carlo frequencies of the concentration event over i.i.d. designs,
/// with operator-norm deviation quantiles.
inline ConcentrationResult concentration_experiment(const BasisFamily& family, int J, int n,
                                                    const DesignMeasure& measure, int replicates,
                                                    std::uint64_t seed, double kappa = 0.5) {
  if (replicates < 1) throw std::domain_error("need at least one replicate");
  ConcentrationResult out;
  const Eigen::MatrixXd sigma = population_gram(family, J, measure);
  const double lambda_minus = measure.p_minus() / 2.0;
  const double lambda_plus = measure.p_plus() + measure.p_minus() / 2.0;
  const double cj = cj_constant(family, J);
  out.dimensionless_ratio = J > 1 ? n / (cj * cj * J * std::log(static_cast<double>(J))) : 0.0;

  std::vector<double> deviations;
  deviations.reserve(static_cast<std::size_t>(replicates));
  int hits = 0, kappa_hits = 0;
  for (int rep = 0; rep < replicates; ++rep) {
    std::mt19937_64 rng = make_cell_engine(seed, static_cast<std::uint64_t>(n),
                                           static_cast<std::uint64_t>(rep));
    std::vector<Point> design(static_cast<std::size_t>(n));
    for (auto& x : design) x = measure.sample(rng);
    const Eigen::MatrixXd gram = empirical_gram(family, J, design);
    const EigenRange range = sym_eigen_range(gram);
    const double dev = sym_operator_norm(gram - sigma);
    const bool ev = lambda_minus <= range.min && range.max <= lambda_plus;
    const bool evk = range.min >= kappa;
    hits += ev;
    kappa_hits += evk;
    deviations.push_back(dev);
    out.rows.push_back({rep, J, n, range.min, range.max, dev, ev, evk});
  }
  out.event_frequency = static_cast<double>(hits) / replicates;
  out.event_kappa_frequency = static_cast<double>(kappa_hits) / replicates;
  out.deviation_median = quantile(deviations, 0.5);
  out.deviation_p90 = quantile(deviations, 0.9);
  out.deviation_max = quantile(deviations, 1.0);
  return out;
}

struct WithoutReplacementRow {
  double t;
  double empirical_tail;
  double bound;
};

struct WithoutReplacementResult {
  double c_squared = 0.0;  // max over the population of (1/J) sum u_j^2
  std::vector<WithoutReplacementRow> rows;
  std::vector<double> deviations;
};

/// Empirical tail of ||Sigma_n - Sigma_N|| under uniform sampling without
/// replacement from a finite population, against the explicit bound
///   2 N exp(-(1/4) min((n t / C^2 J)^2, n t / C^2 J)).
inline WithoutReplacementResult without_replacement_experiment(
    const BasisFamily& family, int J, const std::vector<Point>& population, int n, int replicates,
    const std::vector<double>& t_grid, std::uint64_t seed) {
  const auto big_n = static_cast<int>(population.size());
  if (n < 1 || n > big_n) throw std::domain_error("need 1 <= n <= N");
  if (replicates < 1) throw std::domain_error("need at least one replicate");

  const auto nn = static_cast<Eigen::Index>(big_n);
  Eigen::MatrixXd u(nn, J);
  for (Eigen::Index i = 0; i < nn; ++i)
    for (int j = 1; j <= J; ++j)
      u(i, j - 1) = family.evaluate(j, population[static_cast<std::size_t>(i)]);

  WithoutReplacementResult out;
  out.c_squared = u.array().square().rowwise().sum().maxCoeff() / J;

  const Eigen::MatrixXd sigma_big = u.transpose() * u / static_cast<double>(big_n);

  out.deviations.reserve(static_cast<std::size_t>(replicates));
  std::vector<int> idx(static_cast<std::size_t>(big_n));
  for (int rep = 0; rep < replicates; ++rep) {
    std::mt19937_64 rng = make_cell_engine(seed, static_cast<std::uint64_t>(n),
                                           static_cast<std::uint64_t>(rep));
    for (int i = 0; i < big_n; ++i) idx[static_cast<std::size_t>(i)] = i;
    // partial Fisher-Yates: the first n entries are a uniform sample
    // without replacement
    for (int i = 0; i < n; ++i) {
      std::uniform_int_distribution<int> pick(i, big_n - 1);
      std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
    }
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(J, J);
    for (int i = 0; i < n; ++i) {
      const auto row = u.row(idx[static_cast<std::size_t>(i)]);
      gram.selfadjointView<Eigen::Lower>().rankUpdate(row.transpose(), 1.0 / n);
    }
    out.deviations.push_back(
        sym_operator_norm(Eigen::MatrixXd(gram.selfadjointView<Eigen::Lower>()) - sigma_big));
  }

  for (double t : t_grid) {
    int exceed = 0;
    for (double dev : out.deviations) exceed += dev > t;
    const double a = n * t / (out.c_squared * J);
    const double bound = 2.0 * big_n * std::exp(-0.25 * std::min(a * a, a));
    out.rows.push_back({t, static_cast<double>(exceed) / replicates, bound});
  }
  return out;
}

struct NormTransfer {
  double l2_norm;
  double empirical_norm;
  double factor;          // realized l2 / empirical
  double certified_factor;  // sqrt(2 / p_-)
};

/// Under the Gram event, ||f||_2 = ||a|| <= sqrt(2/p_-) ||f||_n for
/// f = sum a_j u_j with mu-orthonormal u_j.  Refuses to certify when the
/// event flag is down.
inline NormTransfer norm_transfer_certificate(const GramReport& report, const Eigen::VectorXd& a) {
  if (!report.event)
    throw certificate_unavailable(
        "gram event does not hold; the norm-transfer certificate is unavailable");
  if (a.size() != report.J) throw std::domain_error("coefficient length must equal J");
  NormTransfer t;
  t.l2_norm = a.norm();
  t.empirical_norm = std::sqrt(std::max(0.0, a.dot(report.sigma_n * a)));
  t.factor = t.empirical_norm > 0.0
                 ? t.l2_norm / t.empirical_norm
                 : (t.l2_norm > 0.0 ? std::numeric_limits<double>::infinity() : 1.0);
  t.certified_factor = std::sqrt(2.0 / report.p_minus);
  return t;
}

}  // namespace ratelab
