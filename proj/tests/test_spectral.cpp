#include <doctest.h>

#include <cmath>
#include <memory>
#include <numbers>

#include "ratelab/spectral.hpp"

using namespace ratelab;
using doctest::Approx;

namespace {

std::shared_ptr<const BasisFamily> circle_ptr() {
  static auto p = std::make_shared<const BasisFamily>(BasisFamily::circle());
  return p;
}

std::shared_ptr<const BasisFamily> interval_ptr() {
  static auto p = std::make_shared<const BasisFamily>(BasisFamily::interval());
  return p;
}

}  // namespace

TEST_CASE("sobolev eigenvalues follow the closed form and the power law") {
  const SpectralKernel k = SpectralKernel::sobolev(circle_ptr(), 0.5);
  CHECK(mercer_eigenvalue(k, 1) == Approx(1.0));
  const double pi2 = 4.0 * std::numbers::pi * std::numbers::pi;
  CHECK(mercer_eigenvalue(k, 2) == Approx(1.0 / (1.0 + pi2)).epsilon(1e-12));
  CHECK(mercer_eigenvalue(k, 2) == Approx(0.024706).epsilon(1e-4));

  std::vector<double> xs, ys;
  for (int j = 64; j <= 4096; j = j * 5 / 4) {
    xs.push_back(std::log(double(j)));
    ys.push_back(std::log(k.eigenvalue(j)));
  }
  const SlopeFit fit = least_squares_slope(xs, ys);
  CHECK(std::abs(fit.slope - (-2.0)) <= 0.05);

  for (int j = 2; j <= 512; ++j) CHECK(k.eigenvalue(j) <= k.eigenvalue(j - 1));
}

TEST_CASE("heat eigenvalues underflow to an exact zero") {
  const SpectralKernel k = SpectralKernel::heat(circle_ptr(), 1.0);
  CHECK(k.eigenvalue(1) == 1.0);
  CHECK(k.eigenvalue(2) == Approx(std::exp(-4.0 * std::numbers::pi * std::numbers::pi)));
  CHECK(k.eigenvalue(100) == 0.0);  // t lambda_j far beyond 745
}

TEST_CASE("tail sums telescope and match brute force where it converges") {
  const SpectralKernel k = SpectralKernel::sobolev(circle_ptr(), 0.5);
  // partial sums of eigenvalues are exactly the difference of tails
  double direct = 0.0;
  for (int j = 11; j <= 200; ++j) direct += k.eigenvalue(j);
  CHECK(k.tail_sum(10) - k.tail_sum(200) == Approx(direct).epsilon(1e-12));

  // at alpha = 1.5 the series converges fast enough for brute force
  const SpectralKernel fast = SpectralKernel::sobolev(circle_ptr(), 1.5);
  double brute = 0.0;
  for (int j = 11; j <= 2000000; ++j) brute += fast.eigenvalue(j);
  CHECK(fast.tail_sum(10) == Approx(brute).epsilon(1e-10));

  const SpectralKernel interval = SpectralKernel::sobolev(interval_ptr(), 1.5);
  double brute2 = 0.0;
  for (int j = 6; j <= 2000000; ++j) brute2 += interval.eigenvalue(j);
  CHECK(interval.tail_sum(5) == Approx(brute2).epsilon(1e-10));

  // heat tails: direct summation oracle
  const SpectralKernel heat = SpectralKernel::heat(circle_ptr(), 0.05);
  double heat_direct = 0.0;
  for (int j = 4; j <= 5000; ++j) heat_direct += heat.eigenvalue(j);
  CHECK(heat.tail_sum(3) == Approx(heat_direct).epsilon(1e-12));
}

TEST_CASE("tail certification picks the smallest truncation or reports failure") {
  SpectralKernel heat = SpectralKernel::heat(circle_ptr(), 0.2);
  heat.certify_eval_truncation(1e-10);
  const int L = heat.eval_truncation();
  CHECK(2.0 * heat.tail_sum(L) < 1e-10);
  CHECK(2.0 * heat.tail_sum(L - 1) >= 1e-10);

  // polynomial decay at alpha = 0.5 cannot reach 1e-10 within 10^6 terms
  SpectralKernel slow = SpectralKernel::sobolev(circle_ptr(), 0.5);
  CHECK_THROWS_AS(slow.certify_eval_truncation(1e-10), precision_error);
  try {
    slow.certify_eval_truncation(1e-10);
  } catch (const precision_error& e) {
    CHECK(e.achievable > 1e-10);
    CHECK(e.achievable < 1e-5);
  }
  // a reachable tolerance certifies
  slow.certify_eval_truncation(1e-4);
  CHECK(2.0 * slow.tail_sum(slow.eval_truncation()) < 1e-4);
}

TEST_CASE("kernel evaluation: constant limit, trace identity, long-sum oracle") {
  // large t keeps only the constant mode
  SpectralKernel heat = SpectralKernel::heat(circle_ptr(), 50.0);
  heat.certify_eval_truncation(1e-12);
  CHECK(heat(0.12, 0.93) == Approx(1.0).epsilon(1e-12));
  CHECK(heat(0.5, 0.5) == Approx(1.0).epsilon(1e-12));

  // quadrature of k(x,x) over the uniform measure collapses to the trace
  SpectralKernel k = SpectralKernel::sobolev(circle_ptr(), 1.0).truncated(64);
  double partial = 0.0;
  for (int j = 1; j <= 64; ++j) partial += k.eigenvalue(j);
  const DesignMeasure uniform = DesignMeasure::uniform(Space::circle_d1);
  CHECK(k.trace_quadrature(uniform) == Approx(partial).epsilon(1e-12));

  // heat-trace identity against the eigenvalue sum
  SpectralKernel ht = SpectralKernel::heat(circle_ptr(), 0.03).certify_eval_truncation(1e-12);
  double trace = 0.0;
  for (int j = 1; j <= ht.eval_truncation(); ++j) trace += ht.eigenvalue(j);
  CHECK(ht.trace_quadrature(uniform) == Approx(trace).epsilon(1e-8));

  // brute-force long-truncation oracle at alpha = 0.5: one million terms,
  // summed through the closed form rather than the kernel machinery
  SpectralKernel slow = SpectralKernel::sobolev(circle_ptr(), 0.5).set_eval_truncation(1000000);
  const double pi2 = 4.0 * std::numbers::pi * std::numbers::pi;
  double reference = 1.0;
  for (long m = 500000; m >= 1; --m) reference += 2.0 / (1.0 + pi2 * double(m) * double(m));
  CHECK(slow(0.0, 0.0) == Approx(reference).epsilon(1e-9));
}

TEST_CASE("sup of squared eigenfunction sums on the circle") {
  const SpectralKernel k = SpectralKernel::sobolev(circle_ptr(), 1.0).truncated(1024);
  for (int L : {1, 3, 7, 33, 129, 1023}) CHECK(sup_sum_squares(k, L) == Approx(double(L)).epsilon(1e-12));
  for (int L : {2, 8, 64, 256, 1024}) CHECK(sup_sum_squares(k, L) <= 2.0 * L + 1e-9);
}

TEST_CASE("nystrom under the uniform measure reproduces the analytic spectrum") {
  const SpectralKernel k = SpectralKernel::sobolev(circle_ptr(), 0.5).truncated(256);
  const DesignMeasure uniform = DesignMeasure::uniform(Space::circle_d1);
  const NystromEigensystem eig = nystrom_eigens(k, uniform, 2048, 64);
  for (int l = 1; l <= 64; ++l)
    CHECK(eig.eigenvalues[l - 1] == Approx(k.eigenvalue(l)).epsilon(1e-4));

  // weighted Gram of the eigenfunctions is the identity
  const Eigen::MatrixXd gram =
      eig.eigenfunctions.transpose() * eig.weights.asDiagonal() * eig.eigenfunctions;
  CHECK((gram - Eigen::MatrixXd::Identity(64, 64)).cwiseAbs().maxCoeff() <= 1e-6);

  // trace consistency: recovered eigenvalues cannot exceed the trace
  double top = eig.eigenvalues.sum();
  CHECK(top <= k.trace_quadrature(uniform) + 1e-6);

  CHECK_THROWS_AS(nystrom_eigens(k, uniform, 100, 64), std::domain_error);
}

TEST_CASE("factored and dense nystrom routes agree") {
  const SpectralKernel k = SpectralKernel::sobolev(interval_ptr(), 0.7).truncated(48);
  const DesignMeasure tilt = DesignMeasure::linear_tilt(Space::interval_cosine, 0.5, 1.0);
  const NystromEigensystem fast = nystrom_eigens(k, tilt, 256, 24, false);
  const NystromEigensystem dense = nystrom_eigens(k, tilt, 256, 24, true);
  CHECK((fast.eigenvalues - dense.eigenvalues).cwiseAbs().maxCoeff() <= 1e-10);
  for (int l = 0; l < 24; ++l) {
    const double diff = (fast.eigenfunctions.col(l) - dense.eigenfunctions.col(l))
                            .cwiseAbs()
                            .maxCoeff();
    CHECK(diff <= 1e-7);
  }
}

TEST_CASE("nystrom decay fit recovers -(1 + 2 alpha / d)") {
  const DesignMeasure uniform = DesignMeasure::uniform(Space::circle_d1);
  for (double alpha : {0.5, 1.0}) {
    const SpectralKernel k = SpectralKernel::sobolev(circle_ptr(), alpha).truncated(512);
    const NystromEigensystem eig = nystrom_eigens(k, uniform, 1024, 128);
    std::vector<double> xs, ys;
    for (int l = 16; l <= 64; ++l) {
      xs.push_back(std::log(double(l)));
      ys.push_back(std::log(eig.eigenvalues[l - 1]));
    }
    const SlopeFit fit = least_squares_slope(xs, ys);
    CHECK(std::abs(fit.slope - (-(1.0 + 2.0 * alpha))) <= 0.1);
  }
}

TEST_CASE("sup-norm report: trigonometric sups and ratio decay under uniform sampling") {
  const SpectralKernel k = SpectralKernel::sobolev(circle_ptr(), 0.5).truncated(256);
  const DesignMeasure uniform = DesignMeasure::uniform(Space::circle_d1);
  const NystromEigensystem eig = nystrom_eigens(k, uniform, 1024, 64);
  const auto report = mercer_sup_norm_report(eig, 0.25);
  CHECK(report.size() == 64);
  CHECK(report[0].ratio == Approx(report[0].sup_norm));  // l = 1 denominator is 1
  // nodal sup undershoots the true sup by O((l/m)^2)
  for (int l = 2; l <= 64; ++l)
    CHECK(report[static_cast<std::size_t>(l - 1)].sup_norm ==
          Approx(std::numbers::sqrt2).epsilon(1e-3));
  // ratios fall like l^{-3/4}
  CHECK(report[63].ratio < report[1].ratio / 5.0);
  CHECK_THROWS_AS(mercer_sup_norm_report(eig, 0.0), std::domain_error);
}

TEST_CASE("nystrom sup-norms under a tilted design stay below 3 l^{3/4}") {
  const SpectralKernel k = SpectralKernel::sobolev(interval_ptr(), 0.5).truncated(256);
  const DesignMeasure tilt = DesignMeasure::linear_tilt(Space::interval_cosine, 0.5, 1.0);
  const NystromEigensystem eig = nystrom_eigens(k, tilt, 1024, 64);
  for (int l = 1; l <= 64; ++l)
    CHECK(eig.sup_norm(l) <= 3.0 * std::pow(double(l), 0.75));

  // eigenfunction-square sums grow no faster than L^{1+delta}
  double base = 0.0;
  for (int L : {16, 32, 64}) {
    const double ratio = sup_sum_squares(eig, L) / std::pow(double(L), 1.25);
    if (base == 0.0) base = ratio;
    CHECK(ratio <= 2.0 * base);
  }
}

TEST_CASE("torus tails: heat works inside the table, slow sobolev refuses") {
  auto torus = std::make_shared<const BasisFamily>(BasisFamily::torus(4096));
  const SpectralKernel heat = SpectralKernel::heat(torus, 0.05);
  double direct = 0.0;
  for (int j = 3; j <= 4096; ++j) direct += heat.eigenvalue(j);
  CHECK(heat.tail_sum(2) == Approx(direct).epsilon(1e-12));

  // alpha = 1 on the torus decays like j^{-2}; the table cannot absorb the
  // remainder at double precision and the kernel says so
  const SpectralKernel slow = SpectralKernel::sobolev(torus, 1.0);
  CHECK_THROWS_AS(slow.tail_sum(10), precision_error);
}

TEST_CASE("cj profile rows match the pointwise constant") {
  const BasisFamily f = BasisFamily::circle();
  const auto rows = cj_profile(f, 8, 1024);
  CHECK(rows.size() == 8);
  for (const auto& [j, value] : rows) CHECK(value == Approx(cj_constant(f, j, 1024)).epsilon(1e-12));
}

TEST_CASE("explicit sequences validate monotonicity and carry their rank") {
  CHECK_THROWS_AS(SpectralKernel::explicit_sequence(circle_ptr(), {0.5, 1.0}),
                  std::domain_error);
  CHECK_THROWS_AS(SpectralKernel::explicit_sequence(circle_ptr(), {1.0, -0.5}),
                  std::domain_error);
  const SpectralKernel k = SpectralKernel::explicit_sequence(circle_ptr(), {1.0, 0.5, 0.25});
  CHECK(k.finite_rank());
  CHECK(k.rank() == 3);
  CHECK(k.eigenvalue(4) == 0.0);
  CHECK(k.tail_sum(1) == Approx(0.75));
  CHECK(k.tail_sum(3) == 0.0);
}
