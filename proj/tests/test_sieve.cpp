#include <doctest.h>

#include <cmath>
#include <memory>
#include <numbers>
#include <random>

#include "ratelab/gram.hpp"
#include "ratelab/harness.hpp"
#include "ratelab/sieve.hpp"

using namespace ratelab;
using doctest::Approx;

namespace {

std::shared_ptr<const BasisFamily> circle_ptr() {
  static auto p = std::make_shared<const BasisFamily>(BasisFamily::circle());
  return p;
}

}  // namespace

TEST_CASE("fixed truncation at one term draws a single gaussian level") {
  const SievePrior prior(circle_ptr(), truncation::Fixed{1}, 8);
  std::mt19937_64 rng(2);
  const auto draw = prior.sample_prior(rng);
  CHECK(draw.J == 1);
  CHECK(draw.coefficients.size() == 1);
  CHECK(draw(*circle_ptr(), {0.1, 0.0}) == Approx(draw.coefficients[0]));
  CHECK(draw(*circle_ptr(), {0.9, 0.0}) == Approx(draw.coefficients[0]));
}

TEST_CASE("geometric truncation matches its analytic tail and envelopes") {
  const double b = 0.25;
  const SievePrior prior(circle_ptr(), truncation::Geometric{b}, 256);
  const double q = std::exp(-b);

  // pmf sits inside exponential envelopes with fitted constants
  for (int j = 1; j < 256; ++j) {
    const double pmf = prior.truncation_pmf(j);
    CHECK(pmf <= 1.1 * (1.0 - q) * std::exp(-b * (j - 1)));
    CHECK(pmf >= 0.9 * (1.0 - q) * std::exp(-b * j));
  }

  // analytic remainder q^{J_n} for every J_n below the cap
  for (int j_n : {0, 1, 5, 50, 200}) {
    CHECK(prior.prior_tail_mass(j_n) == Approx(std::pow(q, j_n)).epsilon(1e-12));
  }
  CHECK(prior.prior_tail_mass(256) == 0.0);

  // empirical CCDF over 1e5 draws against the exact geometric tail
  std::mt19937_64 rng(7);
  const int draws = 100000;
  std::vector<int> counts(300, 0);
  for (int i = 0; i < draws; ++i) {
    const int j = prior.sample_truncation(rng);
    for (int t = 0; t < j && t < 300; ++t) ++counts[static_cast<std::size_t>(t)];
  }
  for (int j : {1, 2, 4, 8, 16}) {
    const double emp = double(counts[static_cast<std::size_t>(j)]) / draws;  // P(J > j)
    const double exact = std::pow(q, j);
    CHECK(std::abs(emp - exact) <= 4.0 * std::sqrt(exact * (1 - exact) / draws) + 1e-4);
  }
}

TEST_CASE("poisson truncation decays super-geometrically and clamps are logged") {
  const SievePrior prior(circle_ptr(), truncation::Poisson{6.0}, 64);
  double prev_ratio = 1.0;
  for (int j = 8; j < 40; ++j) {
    const double ratio = prior.truncation_pmf(j + 1) / prior.truncation_pmf(j);
    CHECK(ratio < prev_ratio + 1e-12);
    prev_ratio = ratio;
  }

  const SievePrior tight(circle_ptr(), truncation::Geometric{0.01}, 4);
  std::mt19937_64 rng(5);
  for (int i = 0; i < 200; ++i) (void)tight.sample_truncation(rng);
  CHECK(tight.clamp_count() > 0);

  double total = 0.0;
  for (int j = 1; j <= 4; ++j) total += tight.truncation_pmf(j);
  CHECK(total == Approx(1.0).epsilon(1e-12));
}

TEST_CASE("standard gaussian tail frequency matches 2(1 - Phi(3))") {
  const SievePrior prior(circle_ptr(), truncation::Fixed{1}, 1);
  std::mt19937_64 rng(11);
  const int draws = 1000000;
  int tail = 0;
  for (int i = 0; i < draws; ++i) tail += std::abs(prior.sample_coefficient(rng)) > 3.0;
  const double exact = std::erfc(3.0 / std::numbers::sqrt2);
  CHECK(double(tail) / draws == Approx(exact).epsilon(0.12));
  CHECK(exact == Approx(0.0027).epsilon(0.01));
}

TEST_CASE("truncation posterior is a proper distribution") {
  std::mt19937_64 rng(3);
  const DesignMeasure uniform = DesignMeasure::uniform(Space::circle_d1);
  const SievePrior one(circle_ptr(), truncation::Geometric{0.2}, 1);
  RegressionData data = synthesize_data(*circle_ptr(), TestFunction::weierstrass(0.5), uniform,
                                        40, 1.0, rng);
  const TruncationPosterior single = posterior_over_truncation(one, data);
  CHECK(single.weights.size() == 1);
  CHECK(single.weights[0] == Approx(1.0).epsilon(1e-15));

  const SievePrior prior(circle_ptr(), truncation::Geometric{0.15}, 48);
  for (int rep = 0; rep < 5; ++rep) {
    std::mt19937_64 r2 = make_cell_engine(4, 200, static_cast<std::uint64_t>(rep));
    RegressionData d = synthesize_data(*circle_ptr(), TestFunction::weierstrass(0.5), uniform,
                                       200, 1.0, r2);
    const TruncationPosterior tp = posterior_over_truncation(prior, d);
    double total = 0.0;
    for (double w : tp.weights) total += w;
    CHECK(total == Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("posterior mode covers the truth's support") {
  const DesignMeasure uniform = DesignMeasure::uniform(Space::circle_d1);
  std::vector<double> c8(8, 0.0);
  c8[1] = 1.0;
  c8[4] = -0.8;
  c8[7] = 0.9;  // cutoff exactly 8
  const TestFunction f0 = TestFunction::finite_series(*circle_ptr(), c8);
  const SievePrior prior(circle_ptr(), truncation::Geometric{0.2}, 64);

  int covered = 0;
  const int reps = 50;
  for (int rep = 0; rep < reps; ++rep) {
    std::mt19937_64 rng = make_cell_engine(8, 2000, static_cast<std::uint64_t>(rep));
    RegressionData d = synthesize_data(*circle_ptr(), f0, uniform, 2000, 1.0, rng);
    const TruncationPosterior tp = posterior_over_truncation(prior, d);
    covered += tp.mode() >= 8;
  }
  CHECK(covered >= static_cast<int>(0.95 * reps));
}

TEST_CASE("no-information limit returns prior draws") {
  std::mt19937_64 rng(31);
  const DesignMeasure uniform = DesignMeasure::uniform(Space::circle_d1);
  const SievePrior prior(circle_ptr(), truncation::Fixed{6}, 6);
  RegressionData d = synthesize_data(*circle_ptr(), TestFunction::weierstrass(0.5), uniform, 30,
                                     1.0, rng);
  d.sigma2 = 1e12;
  const Eigen::MatrixXd u = sieve_feature_matrix(*circle_ptr(), 6, d.design);
  const auto cond = conditional_coefficients(u, d.responses, d.sigma2, 6);

  double sq = 0.0;
  long count = 0;
  for (int k = 0; k < 5000; ++k) {
    const Eigen::VectorXd z = cond.sample(rng);
    sq += z.squaredNorm();
    count += z.size();
  }
  CHECK(sq / double(count) == Approx(1.0).epsilon(0.05));
}

TEST_CASE("conditional mean equals the ridge solution with penalty sigma^2") {
  std::mt19937_64 rng(17);
  const DesignMeasure uniform = DesignMeasure::uniform(Space::circle_d1);
  RegressionData d = synthesize_data(*circle_ptr(), TestFunction::weierstrass(0.6), uniform, 90,
                                     0.7, rng);
  const int J = 12;
  const Eigen::MatrixXd u = sieve_feature_matrix(*circle_ptr(), J, d.design);
  const auto cond = conditional_coefficients(u, d.responses, d.sigma2, J);

  Eigen::MatrixXd normal = u.transpose() * u;
  normal.diagonal().array() += d.sigma2;
  const Eigen::VectorXd ridge = normal.fullPivLu().solve(u.transpose() * d.responses);
  CHECK((cond.mean - ridge).cwiseAbs().maxCoeff() <= 1e-8);

  // sampler unbiasedness at the design points
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(J);
  const int draws = 4000;
  for (int k = 0; k < draws; ++k) acc += cond.sample(rng);
  acc /= draws;
  const Eigen::MatrixXd cov_chol =
      cond.precision_chol.matrixU().solve(Eigen::MatrixXd::Identity(J, J));
  for (int j = 0; j < J; ++j) {
    const double sd = cov_chol.row(j).norm();
    CHECK(std::abs(acc[j] - cond.mean[j]) <= 4.0 * sd / std::sqrt(double(draws)));
  }
}

TEST_CASE("joint posterior draw composes truncation and conditional") {
  std::mt19937_64 rng(19);
  const DesignMeasure uniform = DesignMeasure::uniform(Space::circle_d1);
  const SievePrior prior(circle_ptr(), truncation::Geometric{0.3}, 32);
  RegressionData d = synthesize_data(*circle_ptr(), TestFunction::weierstrass(0.5), uniform, 150,
                                     0.8, rng);
  const auto draw = sample_posterior(prior, d, rng);
  CHECK(draw.J >= 1);
  CHECK(draw.J <= 32);
  CHECK(draw.coefficients.size() == draw.J);
  CHECK(std::isfinite(draw(*circle_ptr(), {0.5, 0.0})));
}

TEST_CASE("custom coefficient densities sample but refuse the conjugate path") {
  coefficient_density::Custom laplace;
  laplace.sampler = [](std::mt19937_64& rng) {
    std::exponential_distribution<double> expo(1.0);
    std::bernoulli_distribution sign(0.5);
    return sign(rng) ? expo(rng) : -expo(rng);
  };
  laplace.tail_c1 = 1.0;
  laplace.tail_c2 = 1.0;
  laplace.tail_c3 = 1.0;
  auto circle = std::make_shared<const BasisFamily>(BasisFamily::circle());
  const SievePrior prior(circle, truncation::Geometric{0.2}, 32, laplace);
  CHECK(!prior.gaussian_coefficients());

  std::mt19937_64 rng(9);
  const auto draw = prior.sample_prior(rng);
  CHECK(draw.coefficients.size() == draw.J);

  // laplace tails: P(|Z| > a) = e^{-a}
  int tail = 0;
  const int m = 200000;
  for (int i = 0; i < m; ++i) tail += std::abs(prior.sample_coefficient(rng)) > 2.0;
  CHECK(double(tail) / m == Approx(std::exp(-2.0)).epsilon(0.05));

  const DesignMeasure uniform = DesignMeasure::uniform(Space::circle_d1);
  RegressionData d = synthesize_data(*circle, TestFunction::weierstrass(0.5), uniform, 30, 1.0,
                                     rng);
  CHECK_THROWS_AS(posterior_over_truncation(prior, d), std::domain_error);
}

TEST_CASE("fixed truncation tail mass is a step function") {
  const SievePrior prior(circle_ptr(), truncation::Fixed{5}, 16);
  CHECK(prior.prior_tail_mass(4) == Approx(1.0));
  CHECK(prior.prior_tail_mass(5) == 0.0);
  CHECK(prior.prior_tail_mass(16) == 0.0);
  CHECK_THROWS_AS(prior.prior_tail_mass(-1), std::domain_error);
  CHECK_THROWS_AS(prior.prior_tail_mass(17), std::domain_error);
}

TEST_CASE("consistency sanity: tiny noise and zero truth empty the epsilon ball") {
  const DesignMeasure uniform = DesignMeasure::uniform(Space::circle_d1);
  const SievePrior prior(circle_ptr(), truncation::Geometric{0.1}, 64);
  const TestFunction zero = TestFunction::zero(*circle_ptr());
  std::mt19937_64 rng = make_cell_engine(12, 1024, 0);
  const auto cell = experiments::sieve_rate_cell(prior, zero, uniform, 1024, 0.01, 2.0, 0.5, 40,
                                                 rng);
  CHECK(cell.post_mass_outside_ball <= 0.05);
  CHECK(cell.l2_error <= 0.05);
}

TEST_CASE("posterior tail mass above the remaining-mass cutoff stays small") {
  const DesignMeasure uniform = DesignMeasure::uniform(Space::circle_d1);
  const SievePrior prior(circle_ptr(), truncation::Geometric{0.1}, 128);
  const TestFunction f0 = TestFunction::weierstrass(0.5);
  double mean_tail = 0.0;
  const int reps = 10;
  for (int rep = 0; rep < reps; ++rep) {
    std::mt19937_64 rng = make_cell_engine(13, 2048, static_cast<std::uint64_t>(rep));
    const auto cell =
        experiments::sieve_rate_cell(prior, f0, uniform, 2048, 1.0, 2.0, 0.5, 10, rng);
    mean_tail += cell.tail_mass;
  }
  CHECK(mean_tail / reps <= 0.05);
}

TEST_CASE("deterministic truncation: empirical and integrated errors agree within 2x") {
  const DesignMeasure uniform = DesignMeasure::uniform(Space::circle_d1);
  auto circle = std::make_shared<const BasisFamily>(BasisFamily::circle());
  const long n = 2000;
  const double s = 0.5;
  const int j_star = static_cast<int>(std::ceil(std::pow(double(n), 1.0 / (2.0 * s + 1.0))));
  const SievePrior prior(circle, truncation::Fixed{j_star}, j_star);
  const TestFunction f0 = TestFunction::weierstrass(s);
  for (int rep = 0; rep < 5; ++rep) {
    std::mt19937_64 rng = make_cell_engine(77, static_cast<std::uint64_t>(n),
                                           static_cast<std::uint64_t>(rep));
    // event E over the prior's span (the cell redraws the same design)
    std::mt19937_64 probe = rng;
    std::vector<Point> design(static_cast<std::size_t>(n));
    for (auto& x : design) x = uniform.sample(probe);
    const Eigen::MatrixXd gram = empirical_gram(*circle, j_star, design);
    REQUIRE(sym_eigen_range(gram).min >= 0.5);

    const auto cell = experiments::sieve_rate_cell(prior, f0, uniform, n, 1.0, 2.0, s, 10, rng);
    CHECK(cell.l2_error <= 2.0 * cell.emp_norm_error);
    CHECK(cell.emp_norm_error <= 2.0 * cell.l2_error);
  }
}

TEST_CASE("norm ordering under the gram event, per draw") {
  // || f - f0 ||_2 <= sqrt(2/p_-) || f - f0 ||_n + (1 + sqrt 2) E_J(f - f0)
  // with the projection surrogate for the sup-approximation term
  std::mt19937_64 rng(23);
  const DesignMeasure uniform = DesignMeasure::uniform(Space::circle_d1);
  const int j_max = 32, n = 2000;
  const TestFunction f0 = TestFunction::weierstrass(0.5);
  RegressionData d = synthesize_data(*circle_ptr(), f0, uniform, n, 0.5, rng);
  const Eigen::MatrixXd u = sieve_feature_matrix(*circle_ptr(), j_max, d.design);

  const GramReport rep = make_gram_report(*circle_ptr(), j_max, d.design, uniform);
  REQUIRE(rep.event);

  const SievePrior prior(circle_ptr(), truncation::Geometric{0.2}, j_max);
  const TruncationPosterior tp = posterior_over_truncation(prior, d);

  Eigen::VectorXd f0_coeffs;
  double f0_tail_sup = 0.0, f0_tail_l2 = 0.0;
  REQUIRE(f0.exact_coefficients(*circle_ptr(), j_max, f0_coeffs, &f0_tail_sup, &f0_tail_l2));

  for (int k = 0; k < 100; ++k) {
    const auto draw = sample_posterior(prior, d, tp, u, rng);
    Eigen::VectorXd g = -f0_coeffs;  // coefficients of f - f0 up to j_max
    g.head(draw.J) += draw.coefficients;
    const double l2 = std::sqrt(g.squaredNorm() + f0_tail_l2);

    double emp = 0.0;
    for (int i = 0; i < n; ++i) {
      double fx = 0.0;
      for (int j = 1; j <= j_max; ++j)
        if (g[j - 1] != 0.0) fx += g[j - 1] * u(i, j - 1);
      const double tail =
          f0(*circle_ptr(), d.design[static_cast<std::size_t>(i)]) -
          [&] {
            double s = 0.0;
            for (int j = 1; j <= j_max; ++j)
              if (f0_coeffs[j - 1] != 0.0) s += f0_coeffs[j - 1] * u(i, j - 1);
            return s;
          }();
      const double diff = fx - tail;
      emp += diff * diff;
    }
    emp = std::sqrt(emp / n);

    // projection residual of f - f0 beyond the draw's level: f lives in
    // V_J <= V_jmax so only the f0 tail survives past j_max, plus the
    // explicit coefficients between J and j_max
    double tail_sup = f0_tail_sup;
    for (int j = draw.J + 1; j <= j_max; ++j)
      tail_sup += std::abs(g[j - 1]) * std::numbers::sqrt2;
    const double rhs = std::sqrt(2.0 / rep.p_minus) * emp + (1.0 + std::numbers::sqrt2) *
                                                               tail_sup;
    CHECK(l2 <= rhs * (1.0 + 1e-9));
  }
}
