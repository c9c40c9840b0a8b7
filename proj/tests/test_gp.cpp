#include <doctest.h>

#include <cmath>
#include <memory>
#include <numbers>
#include <random>

#include "ratelab/gp.hpp"
#include "ratelab/rng.hpp"

using namespace ratelab;
using doctest::Approx;

namespace {

std::shared_ptr<const BasisFamily> circle_ptr() {
  static auto p = std::make_shared<const BasisFamily>(BasisFamily::circle());
  return p;
}

RegressionData make_data(const std::vector<double>& xs, const std::vector<double>& ys,
                         double sigma2) {
  RegressionData d;
  for (double x : xs) d.design.push_back({x, 0.0});
  d.responses = Eigen::Map<const Eigen::VectorXd>(ys.data(), static_cast<Eigen::Index>(ys.size()));
  d.sigma2 = sigma2;
  return d;
}

}  // namespace

TEST_CASE("scalar conjugate shrinkage: rank-1 constant kernel") {
  const SpectralKernel k = SpectralKernel::explicit_sequence(circle_ptr(), {1.0});
  const GpPosterior post = fit_posterior(k, make_data({0.3}, {2.0}, 1.0));
  // y s / (s + sigma^2) = 2 / 2 = 1 at every point
  CHECK(post.mean(0.11) == Approx(1.0).epsilon(1e-12));
  CHECK(post.mean(0.87) == Approx(1.0).epsilon(1e-12));
}

TEST_CASE("interpolation limit as the noise vanishes") {
  std::mt19937_64 rng(11);
  const SpectralKernel k = SpectralKernel::sobolev(circle_ptr(), 1.0).truncated(64);
  const DesignMeasure uniform = DesignMeasure::uniform(Space::circle_d1);
  const TestFunction f0 = TestFunction::weierstrass(1.0);
  RegressionData data = synthesize_data(*circle_ptr(), f0, uniform, 8, 1.0, rng);
  data.sigma2 = 1e-8;
  const GpPosterior post = fit_posterior(k, data);
  for (int i = 0; i < data.n(); ++i)
    CHECK(std::abs(post.mean(data.design[static_cast<std::size_t>(i)]) - data.responses[i]) <=
          1e-4);
}

TEST_CASE("posterior mean equals the feature-space ridge oracle") {
  std::mt19937_64 rng(23);
  const int L = 32, n = 60;
  const SpectralKernel k = SpectralKernel::sobolev(circle_ptr(), 0.7).truncated(L);
  const DesignMeasure uniform = DesignMeasure::uniform(Space::circle_d1);
  RegressionData data = synthesize_data(*circle_ptr(), TestFunction::weierstrass(0.6), uniform,
                                        n, 0.5, rng);
  const GpPosterior post = fit_posterior(k, data);

  // independent oracle: L x L normal equations on features sqrt(s_l) e_l
  Eigen::MatrixXd phi(n, L);
  for (int i = 0; i < n; ++i)
    for (int l = 1; l <= L; ++l)
      phi(i, l - 1) = std::sqrt(k.eigenvalue(l)) *
                      circle_ptr()->evaluate(l, data.design[static_cast<std::size_t>(i)]);
  Eigen::MatrixXd normal = phi.transpose() * phi;
  normal.diagonal().array() += data.sigma2;
  const Eigen::VectorXd w = normal.fullPivLu().solve(phi.transpose() * data.responses);

  for (double x : {0.05, 0.31, 0.62, 0.99}) {
    double oracle = 0.0;
    for (int l = 1; l <= L; ++l)
      oracle += w[l - 1] * std::sqrt(k.eigenvalue(l)) * circle_ptr()->evaluate(l, x);
    CHECK(post.mean(x) == Approx(oracle).epsilon(1e-8));
  }

  // the coefficient-space solver matches too
  Eigen::MatrixXd u(n, L);
  for (int i = 0; i < n; ++i)
    for (int l = 1; l <= L; ++l)
      u(i, l - 1) = circle_ptr()->evaluate(l, data.design[static_cast<std::size_t>(i)]);
  Eigen::VectorXd s(L);
  for (int l = 1; l <= L; ++l) s[l - 1] = k.eigenvalue(l);
  const Eigen::VectorXd coeffs = posterior_mean_coefficients(u, s, data.responses, data.sigma2);
  for (double x : {0.17, 0.44}) {
    double fx = 0.0;
    for (int l = 1; l <= L; ++l) fx += coeffs[l - 1] * circle_ptr()->evaluate(l, x);
    CHECK(post.mean(x) == Approx(fx).epsilon(1e-8));
  }
}

TEST_CASE("gram matrix keeps its sigma^2 eigenvalue floor") {
  std::mt19937_64 rng(5);
  const SpectralKernel k = SpectralKernel::sobolev(circle_ptr(), 0.5).truncated(16);
  const DesignMeasure uniform = DesignMeasure::uniform(Space::circle_d1);
  RegressionData data = synthesize_data(*circle_ptr(), TestFunction::weierstrass(0.5), uniform,
                                        40, 0.3, rng);
  const GpPosterior post = fit_posterior(k, data);
  Eigen::MatrixXd a = post.feature_matrix() * post.prior_eigenvalues().asDiagonal() *
                      post.feature_matrix().transpose();
  a.diagonal().array() += data.sigma2;
  CHECK(sym_eigen_range(a).min >= data.sigma2 * (1.0 - 1e-10));
}

TEST_CASE("scalar posterior variance: sigma^2 / (1 + sigma^2)") {
  for (double sigma2 : {0.25, 1.0, 3.0}) {
    const SpectralKernel k = SpectralKernel::explicit_sequence(circle_ptr(), {1.0});
    const GpPosterior post = fit_posterior(k, make_data({0.42}, {1.3}, sigma2));
    CHECK(integrated_variance_series(post, 1) ==
          Approx(sigma2 / (1.0 + sigma2)).epsilon(1e-12));
  }
}

TEST_CASE("variance series equals the posterior-kernel quadrature") {
  std::mt19937_64 rng(31);
  const int rank = 48;
  const SpectralKernel k = SpectralKernel::sobolev(circle_ptr(), 0.6).truncated(rank);
  const DesignMeasure uniform = DesignMeasure::uniform(Space::circle_d1);
  RegressionData data = synthesize_data(*circle_ptr(), TestFunction::weierstrass(0.5), uniform,
                                        50, 0.7, rng);
  const GpPosterior post = fit_posterior(k, data);
  const double series = integrated_variance_series(post, rank);

  const QuadratureGrid grid = make_grid(Space::circle_d1, 4096);
  double quad = 0.0;
  for (std::size_t i = 0; i < grid.nodes.size(); ++i)
    quad += grid.weights[i] * post.posterior_kernel(grid.nodes[i], grid.nodes[i]);
  CHECK(series == Approx(quad).epsilon(1e-6));
  CHECK(series >= 0.0);
  CHECK(series <= k.tail_sum(0) + 1e-12);  // never exceeds the prior trace
}

TEST_CASE("variance series scales linearly under joint rescaling") {
  std::mt19937_64 rng(41);
  const std::vector<double> s = {0.9, 0.5, 0.2, 0.05};
  const double c = 3.7, sigma2 = 0.8;
  std::vector<double> scaled = s;
  for (auto& v : scaled) v *= c;

  const DesignMeasure uniform = DesignMeasure::uniform(Space::circle_d1);
  RegressionData data = synthesize_data(*circle_ptr(), TestFunction::weierstrass(1.0), uniform,
                                        20, sigma2, rng);
  RegressionData data_scaled = data;
  data_scaled.sigma2 = c * sigma2;

  const GpPosterior post = fit_posterior(
      SpectralKernel::explicit_sequence(circle_ptr(), s), data);
  const GpPosterior post_scaled = fit_posterior(
      SpectralKernel::explicit_sequence(circle_ptr(), scaled), data_scaled);
  CHECK(integrated_variance_series(post_scaled, 4) ==
        Approx(c * integrated_variance_series(post, 4)).epsilon(1e-12));
}

TEST_CASE("variance bound dominates the series whenever event E holds") {
  std::mt19937_64 rng(57);
  const DesignMeasure uniform = DesignMeasure::uniform(Space::circle_d1);
  int events = 0;
  for (int inst = 0; inst < 50; ++inst) {
    std::uniform_int_distribution<int> pick_n(200, 500);
    std::uniform_real_distribution<double> pick_alpha(0.3, 1.2);
    const int n = pick_n(rng);
    const double alpha = pick_alpha(rng);
    const int L = 20, rank = 60;
    const SpectralKernel k = SpectralKernel::sobolev(circle_ptr(), alpha).truncated(rank);
    RegressionData data = synthesize_data(*circle_ptr(), TestFunction::weierstrass(0.5), uniform,
                                          n, 1.0, rng);
    const GpPosterior post = fit_posterior(k, data);
    const VarianceBound vb = variance_upper_bound(post, L);
    if (!vb.event_E_holds) continue;
    ++events;
    CHECK(integrated_variance_series(post, rank) <= vb.bound * (1.0 + 1e-10));
  }
  CHECK(events >= 40);  // the event is overwhelmingly likely at these sizes
}

TEST_CASE("L = 0 bound reduces to the prior trace") {
  const SpectralKernel k = SpectralKernel::explicit_sequence(circle_ptr(), {0.8, 0.3, 0.1});
  const GpPosterior post = fit_posterior(k, make_data({0.1, 0.6}, {0.5, -0.2}, 1.0));
  const VarianceBound vb = variance_upper_bound(post, 0);
  CHECK(vb.bound == Approx(1.2).epsilon(1e-12));
  CHECK(vb.event_E_holds);
  CHECK(integrated_variance_series(post, 3) <= vb.bound);
}

TEST_CASE("trace identity: scalar case and random instances") {
  const SpectralKernel k1 = SpectralKernel::explicit_sequence(circle_ptr(), {1.0});
  const GpPosterior scalar = fit_posterior(k1, make_data({0.0}, {0.7}, 1.0));
  const TraceIdentity ti = trace_identity_check(scalar, 1);
  CHECK(ti.lhs == Approx(0.5).epsilon(1e-12));
  CHECK(ti.rhs == Approx(0.5).epsilon(1e-12));

  std::mt19937_64 rng(71);
  const DesignMeasure uniform = DesignMeasure::uniform(Space::circle_d1);
  for (int inst = 0; inst < 20; ++inst) {
    std::uniform_int_distribution<int> pick_n(10, 150);
    std::uniform_int_distribution<int> pick_l(2, 40);
    const int n = pick_n(rng);
    const int L = pick_l(rng);
    const SpectralKernel k = SpectralKernel::sobolev(circle_ptr(), 0.4).truncated(L + 10);
    RegressionData data = synthesize_data(*circle_ptr(), TestFunction::weierstrass(0.8), uniform,
                                          n, 0.9, rng);
    const GpPosterior post = fit_posterior(k, data);
    const TraceIdentity t = trace_identity_check(post, L);
    CHECK(std::abs(t.lhs - t.rhs) <= 1e-8 * std::abs(t.rhs));
  }
}

TEST_CASE("trace identity right side vanishes with the noise") {
  std::mt19937_64 rng(3);
  const DesignMeasure uniform = DesignMeasure::uniform(Space::circle_d1);
  RegressionData data = synthesize_data(*circle_ptr(), TestFunction::weierstrass(0.5), uniform,
                                        30, 1.0, rng);
  data.sigma2 = 1e-12;
  const SpectralKernel k = SpectralKernel::sobolev(circle_ptr(), 0.5).truncated(8);
  const GpPosterior post = fit_posterior(k, data);
  const TraceIdentity t = trace_identity_check(post, 8);
  CHECK(std::abs(t.rhs) <= 1e-9);
}

TEST_CASE("hierarchical t posterior: normalization and grid validation") {
  std::mt19937_64 rng(13);
  const DesignMeasure uniform = DesignMeasure::uniform(Space::circle_d1);
  RegressionData data = synthesize_data(*circle_ptr(), TestFunction::weierstrass(0.5), uniform,
                                        60, 0.5, rng);

  const TPosterior single = hierarchical_t_posterior(data, circle_ptr(), {0.07}, 1.0);
  CHECK(single.weights[0] == Approx(1.0).epsilon(1e-15));

  std::vector<double> grid;
  for (int i = 0; i < 10; ++i) grid.push_back(0.01 * std::pow(1.5, i));
  const TPosterior tp = hierarchical_t_posterior(data, circle_ptr(), grid, 1.0);
  double total = 0.0;
  for (double w : tp.weights) total += w;
  CHECK(total == Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS(hierarchical_t_posterior(data, circle_ptr(), {0.2, 0.1}, 1.0),
                  std::domain_error);
  CHECK_THROWS_AS(hierarchical_t_posterior(data, circle_ptr(), {0.5, 1.5}, 1.0),
                  std::domain_error);
  CHECK_THROWS_AS(hierarchical_t_posterior(data, circle_ptr(), {}, 1.0), std::domain_error);
}

TEST_CASE("smoother truths pull the bandwidth posterior toward larger t") {
  const DesignMeasure uniform = DesignMeasure::uniform(Space::circle_d1);
  std::vector<double> grid;
  for (int i = 0; i < 8; ++i) grid.push_back(0.005 * std::pow(2.0, i));

  const TestFunction smooth = TestFunction::finite_series(
      *circle_ptr(), {0.0, 1.0, 0.6, 0.4, 0.3});
  const TestFunction rough = TestFunction::weierstrass(0.3);

  int smooth_wins = 0;
  const int pairs = 50;
  for (int rep = 0; rep < pairs; ++rep) {
    std::mt19937_64 rng_s = make_cell_engine(99, 500, static_cast<std::uint64_t>(rep));
    std::mt19937_64 rng_r = make_cell_engine(99, 500, static_cast<std::uint64_t>(rep));
    RegressionData ds = synthesize_data(*circle_ptr(), smooth, uniform, 500, 0.25, rng_s);
    RegressionData dr = synthesize_data(*circle_ptr(), rough, uniform, 500, 0.25, rng_r);
    const double ts = hierarchical_t_posterior(ds, circle_ptr(), grid, 1.0).mean_t();
    const double tr = hierarchical_t_posterior(dr, circle_ptr(), grid, 1.0).mean_t();
    smooth_wins += ts > tr;
  }
  CHECK(smooth_wins >= static_cast<int>(0.9 * pairs));
}

TEST_CASE("posterior draws: huge-noise prior limit") {
  std::mt19937_64 rng(121);
  const SpectralKernel k = SpectralKernel::sobolev(circle_ptr(), 0.8).truncated(12);
  RegressionData data = make_data({0.2, 0.5, 0.8}, {0.4, -0.1, 0.2}, 1e12);
  const GpPosterior post = fit_posterior(k, data);
  const std::vector<Point> where = {{0.33, 0.0}};
  double mean = 0.0, sq = 0.0;
  const int draws = 2000;
  for (int i = 0; i < draws; ++i) {
    const double v = posterior_function_draw(post, where, rng)[0];
    mean += v;
    sq += v * v;
  }
  mean /= draws;
  const double var = sq / draws - mean * mean;
  CHECK(var == Approx(k(0.33, 0.33)).epsilon(0.05));
}

TEST_CASE("posterior draws: sampler mean and covariance match the conjugate state") {
  std::mt19937_64 rng(770);
  const SpectralKernel k = SpectralKernel::sobolev(circle_ptr(), 0.7).truncated(16);
  const DesignMeasure uniform = DesignMeasure::uniform(Space::circle_d1);
  RegressionData data = synthesize_data(*circle_ptr(), TestFunction::weierstrass(0.7), uniform,
                                        25, 0.5, rng);
  const GpPosterior post = fit_posterior(k, data);

  const std::vector<Point> pts = {{0.1, 0.0}, {0.45, 0.0}, {0.83, 0.0}};
  const int draws = 5000;
  Eigen::MatrixXd samples(draws, 3);
  for (int i = 0; i < draws; ++i) samples.row(i) = posterior_function_draw(post, pts, rng).transpose();

  // mean within 3 standard errors
  for (int c = 0; c < 3; ++c) {
    const double m = samples.col(c).mean();
    const double sd = std::sqrt((samples.col(c).array() - m).square().sum() / (draws - 1));
    CHECK(std::abs(m - post.mean(pts[static_cast<std::size_t>(c)])) <=
          3.0 * sd / std::sqrt(double(draws)));
  }

  // empirical covariance against k_n entries
  Eigen::MatrixXd centered = samples.rowwise() - samples.colwise().mean();
  Eigen::MatrixXd cov = centered.transpose() * centered / (draws - 1.0);
  const double scale = post.posterior_kernel(pts[0], pts[0]);
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) {
      const double kn = post.posterior_kernel(pts[static_cast<std::size_t>(a)],
                                              pts[static_cast<std::size_t>(b)]);
      CHECK(std::abs(cov(a, b) - kn) <= 0.05 * std::max(std::abs(kn), scale));
    }

  CHECK_THROWS_AS(posterior_function_draw(post, std::vector<Point>(5000), rng),
                  std::domain_error);
}

TEST_CASE("empirical KL diagnostic matches the closed form") {
  const BasisFamily& f = *circle_ptr();
  const TestFunction a = TestFunction::finite_series(f, {1.0});
  const TestFunction b = TestFunction::finite_series(f, {0.0});
  const std::vector<Point> design = {{0.1, 0.0}, {0.2, 0.0}, {0.9, 0.0}};
  // ||f - f0||_n^2 = 1 at every point; KL = n/(2 sigma^2) * 1... divided by n
  CHECK(kl_divergence_empirical(f, a, b, design, 0.5) == Approx(3.0 / (2.0 * 0.5)));
}
