#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "ratelab/errors.hpp"

namespace ratelab {

enum class Space { circle_d1, torus_d2, interval_cosine };

inline const char* space_name(Space s) {
  switch (s) {
    case Space::circle_d1: return "circle_d1";
    case Space::torus_d2: return "torus_d2";
    case Space::interval_cosine: return "interval_cosine";
  }
  return "?";
}

/// A point in the canonical coordinates of a space: the circle and the
/// interval use x0 in [0,1); the torus uses (x0, x1) in [0,1)^2.
struct Point {
  double x0 = 0.0;
  double x1 = 0.0;
};

namespace detail {

inline double wrap_unit(double x) {
  double y = x - std::floor(x);
  return y < 1.0 ? y : 0.0;
}

// Circle basis in the frequency-interleaved order: u_1 = 1,
// u_{2m} = sqrt(2) cos(2 pi m x), u_{2m+1} = sqrt(2) sin(2 pi m x).
inline double circle_eval(int j, double x) {
  if (j == 1) return 1.0;
  const int m = j / 2;
  const double a = 2.0 * std::numbers::pi * m * x;
  return std::numbers::sqrt2 * (j % 2 == 0 ? std::cos(a) : std::sin(a));
}

inline double circle_lambda(int j) {
  const int m = j / 2;
  const double w = 2.0 * std::numbers::pi * m;
  return w * w;
}

// Cosine basis on [0,1]: u_1 = 1, u_j = sqrt(2) cos(pi (j-1) x).
inline double interval_eval(int j, double x) {
  if (j == 1) return 1.0;
  return std::numbers::sqrt2 * std::cos(std::numbers::pi * (j - 1) * x);
}

inline double interval_lambda(int j) {
  const double w = std::numbers::pi * (j - 1);
  return w * w;
}

}  // namespace detail

/// An indexed orthonormal system on a concrete space, together with the
/// Laplacian eigenvalues of its elements.  Immutable; evaluation is pure.
class BasisFamily {
 public:
  static BasisFamily circle() { return BasisFamily(Space::circle_d1, 1, 0); }
  static BasisFamily interval() { return BasisFamily(Space::interval_cosine, 1, 0); }

  /// Tensor products of circle elements ordered by eigenvalue sum with
  /// lexicographic tie-breaking; the index table is frozen at construction.
  static BasisFamily torus(int max_index = 8192) {
    BasisFamily f(Space::torus_d2, 2, max_index);
    f.build_torus_table(max_index);
    return f;
  }

  Space space() const { return space_; }
  int dim() const { return dim_; }

  /// Largest index this family can evaluate (unbounded for the 1-d spaces).
  int max_index() const {
    return space_ == Space::torus_d2 ? static_cast<int>(torus_pairs_.size()) : 1 << 30;
  }

  double evaluate(int j, Point x) const {
    check_index(j);
    switch (space_) {
      case Space::circle_d1:
        return detail::circle_eval(j, detail::wrap_unit(x.x0));
      case Space::interval_cosine:
        // The cosine formula is its own even-periodic extension, so any
        // real coordinate lands on the wrapped value.
        return detail::interval_eval(j, x.x0);
      case Space::torus_d2: {
        const auto [a, b] = torus_pairs_[static_cast<std::size_t>(j - 1)];
        return detail::circle_eval(a, detail::wrap_unit(x.x0)) *
               detail::circle_eval(b, detail::wrap_unit(x.x1));
      }
    }
    return 0.0;
  }

  double evaluate(int j, double x) const { return evaluate(j, Point{x, 0.0}); }

  double laplacian_eigenvalue(int j) const {
    check_index(j);
    switch (space_) {
      case Space::circle_d1: return detail::circle_lambda(j);
      case Space::interval_cosine: return detail::interval_lambda(j);
      case Space::torus_d2: {
        const auto [a, b] = torus_pairs_[static_cast<std::size_t>(j - 1)];
        return detail::circle_lambda(a) + detail::circle_lambda(b);
      }
    }
    return 0.0;
  }

 private:
  BasisFamily(Space s, int d, int) : space_(s), dim_(d) {}

  void check_index(int j) const {
    if (j < 1) throw std::domain_error("basis index must be >= 1, got " + std::to_string(j));
    if (space_ == Space::torus_d2 && j > max_index())
      throw std::out_of_range("torus basis frozen at max_index " + std::to_string(max_index()) +
                              "; construct with a larger table for index " + std::to_string(j));
  }

  void build_torus_table(int count) {
    // Enumerate pairs over [1,B]^2, sorted by (lambda_a + lambda_b, a, b).
    // The first `count` entries are exact once the count-th smallest sum
    // does not exceed lambda_{B+1}, the cheapest sum escaping the box.
    int box = std::max(8, 2 * static_cast<int>(std::sqrt(static_cast<double>(count))) + 4);
    for (;;) {
      std::vector<std::pair<int, int>> pairs;
      pairs.reserve(static_cast<std::size_t>(box) * box);
      for (int a = 1; a <= box; ++a)
        for (int b = 1; b <= box; ++b) pairs.emplace_back(a, b);
      std::sort(pairs.begin(), pairs.end(), [](const auto& p, const auto& q) {
        const double lp = detail::circle_lambda(p.first) + detail::circle_lambda(p.second);
        const double lq = detail::circle_lambda(q.first) + detail::circle_lambda(q.second);
        if (lp != lq) return lp < lq;
        return p < q;
      });
      const auto& last = pairs[static_cast<std::size_t>(count - 1)];
      const double kth = detail::circle_lambda(last.first) + detail::circle_lambda(last.second);
      if (kth <= detail::circle_lambda(box + 1)) {
        pairs.resize(static_cast<std::size_t>(count));
        torus_pairs_ = std::move(pairs);
        return;
      }
      box *= 2;
    }
  }

  Space space_;
  int dim_;
  std::vector<std::pair<int, int>> torus_pairs_;
};

/// Uniform quadrature over the reference measure: equispaced nodes on the
/// circle/torus, midpoints on the interval.  Weights sum to one and the
/// rule is exact on products of the implemented basis elements below the
/// grid's Nyquist index.
struct QuadratureGrid {
  std::vector<Point> nodes;
  std::vector<double> weights;
};

inline QuadratureGrid make_grid(Space space, int target_points) {
  if (target_points < 1) throw std::domain_error("grid size must be positive");
  QuadratureGrid g;
  switch (space) {
    case Space::circle_d1: {
      g.nodes.reserve(static_cast<std::size_t>(target_points));
      for (int i = 0; i < target_points; ++i)
        g.nodes.push_back({static_cast<double>(i) / target_points, 0.0});
      g.weights.assign(static_cast<std::size_t>(target_points), 1.0 / target_points);
      break;
    }
    case Space::interval_cosine: {
      g.nodes.reserve(static_cast<std::size_t>(target_points));
      for (int i = 0; i < target_points; ++i)
        g.nodes.push_back({(i + 0.5) / target_points, 0.0});
      g.weights.assign(static_cast<std::size_t>(target_points), 1.0 / target_points);
      break;
    }
    case Space::torus_d2: {
      const int side = std::max(2, static_cast<int>(std::lround(std::sqrt(double(target_points)))));
      g.nodes.reserve(static_cast<std::size_t>(side) * side);
      for (int i = 0; i < side; ++i)
        for (int k = 0; k < side; ++k)
          g.nodes.push_back({static_cast<double>(i) / side, static_cast<double>(k) / side});
      g.weights.assign(g.nodes.size(), 1.0 / static_cast<double>(g.nodes.size()));
      break;
    }
  }
  return g;
}

/// Grid-refinement policy: evaluate at 4096 points, double until the
/// statistic moves by less than 0.1% or the 2^16 cap is reached.
template <class F>
double refine_grid_statistic(Space space, F&& statistic, int start = 4096, int cap = 65536) {
  int n = start;
  double prev = statistic(make_grid(space, n));
  while (n < cap) {
    n *= 2;
    const double next = statistic(make_grid(space, n));
    const double scale = std::max(std::abs(prev), std::abs(next));
    const bool settled = scale == 0.0 || std::abs(next - prev) <= 1e-3 * scale;
    prev = next;
    if (settled) break;
  }
  return prev;
}

/// Sampling distribution of the design: a density over the reference
/// coordinates with explicit bounds and an inverse-CDF sampler.
class DesignMeasure {
 public:
  /// p0 == 1.
  static DesignMeasure uniform(Space space) {
    DesignMeasure m;
    m.space_ = space;
    m.c0_ = 1.0;
    m.c1_ = 0.0;
    m.p_minus_ = m.p_plus_ = 1.0;
    return m;
  }

  /// p0(x) = c0 + c1 x on the 1-d spaces; requires c0 + c1/2 = 1 and a
  /// strictly positive minimum.
  static DesignMeasure linear_tilt(Space space, double c0, double c1) {
    if (space == Space::torus_d2)
      throw std::domain_error("linear_tilt is defined on the 1-d spaces only");
    if (std::abs(c0 + 0.5 * c1 - 1.0) > 1e-8)
      throw std::domain_error("linear_tilt density does not integrate to 1");
    DesignMeasure m;
    m.space_ = space;
    m.c0_ = c0;
    m.c1_ = c1;
    m.p_minus_ = std::min(c0, c0 + c1);
    m.p_plus_ = std::max(c0, c0 + c1);
    if (m.p_minus_ <= 0.0) throw std::domain_error("linear_tilt density must stay positive");
    return m;
  }

  Space space() const { return space_; }
  double p_minus() const { return p_minus_; }
  double p_plus() const { return p_plus_; }
  bool is_uniform() const { return c1_ == 0.0; }

  double density(Point x) const { return c0_ + c1_ * x.x0; }

  Point sample(std::mt19937_64& rng) const {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double u = unif(rng);
    double x0;
    if (c1_ == 0.0) {
      x0 = u;
    } else {
      // F(x) = c0 x + c1 x^2 / 2 inverted in closed form.
      x0 = (-c0_ + std::sqrt(c0_ * c0_ + 2.0 * c1_ * u)) / c1_;
    }
    Point p{x0, 0.0};
    if (space_ == Space::torus_d2) p.x1 = unif(rng);
    return p;
  }

 private:
  Space space_ = Space::circle_d1;
  double c0_ = 1.0, c1_ = 0.0;
  double p_minus_ = 1.0, p_plus_ = 1.0;
};

/// A regression truth: either an explicit expansion in a basis family, the
/// lacunary cosine series
///   f_s(x) = sum_{l >= 0} 2^{-l s} cos(2 pi 2^l x)
/// truncated once 2^{-l s} < 1e-14, or an arbitrary evaluator.  The first
/// two kinds expose their exact basis coefficients, which keeps projections
/// free of quadrature aliasing.
class TestFunction {
 public:
  enum class Kind { finite_series, weierstrass, user };

  static TestFunction finite_series(const BasisFamily& family, std::vector<double> coefficients) {
    TestFunction f;
    f.kind_ = Kind::finite_series;
    f.space_ = family.space();
    f.coefficients_ = std::move(coefficients);
    f.smoothness_ = 0.0;
    return f;
  }

  static TestFunction zero(const BasisFamily& family) { return finite_series(family, {}); }

  static TestFunction weierstrass(double s) {
    if (s <= 0.0) throw std::domain_error("weierstrass smoothness must be positive");
    TestFunction f;
    f.kind_ = Kind::weierstrass;
    f.smoothness_ = s;
    f.terms_ = 0;
    while (std::pow(2.0, -s * f.terms_) >= 1e-14) ++f.terms_;
    return f;
  }

  static TestFunction user(std::function<double(Point)> evaluator) {
    TestFunction f;
    f.kind_ = Kind::user;
    f.eval_ = std::move(evaluator);
    return f;
  }

  Kind kind() const { return kind_; }
  double smoothness() const { return smoothness_; }

  double operator()(const BasisFamily& family, Point x) const {
    switch (kind_) {
      case Kind::finite_series: {
        double v = 0.0;
        for (std::size_t j = 0; j < coefficients_.size(); ++j)
          if (coefficients_[j] != 0.0) v += coefficients_[j] * family.evaluate(int(j) + 1, x);
        return v;
      }
      case Kind::weierstrass: {
        double v = 0.0;
        for (int l = 0; l < terms_; ++l)
          v += std::pow(2.0, -smoothness_ * l) *
               std::cos(2.0 * std::numbers::pi * std::pow(2.0, l) * x.x0);
        return v;
      }
      case Kind::user:
        return eval_(x);
    }
    return 0.0;
  }

  /// Exact expansion in `family` up to index J, when known.  On success also
  /// reports the dropped tail: its coefficient-absolute sum (a sup-norm
  /// bound attained at x = 0 for the lacunary series) and its squared L2
  /// mass under the reference measure.
  bool exact_coefficients(const BasisFamily& family, int J, Eigen::VectorXd& out,
                          double* tail_sup = nullptr, double* tail_l2_sq = nullptr) const {
    if (kind_ == Kind::user) return false;
    out = Eigen::VectorXd::Zero(J);
    double tsup = 0.0, tl2 = 0.0;
    if (kind_ == Kind::finite_series) {
      for (std::size_t j = 0; j < coefficients_.size(); ++j) {
        if (int(j) < J) {
          out[static_cast<Eigen::Index>(j)] = coefficients_[j];
        } else {
          tsup += std::abs(coefficients_[j]) * sup_norm_of_element(family, int(j) + 1);
          tl2 += coefficients_[j] * coefficients_[j];
        }
      }
    } else {
      // cos(2 pi m x) is u_{2m}/sqrt(2) on the circle and u_{2m+1}/sqrt(2)
      // in the interval cosine family.
      if (family.space() == Space::torus_d2) return false;
      for (int l = 0; l < terms_; ++l) {
        const double c = std::pow(2.0, -smoothness_ * l);
        const double m = std::pow(2.0, l);
        if (m > (1 << 29)) break;
        const int j = family.space() == Space::circle_d1 ? 2 * static_cast<int>(m)
                                                         : 2 * static_cast<int>(m) + 1;
        if (j <= J) {
          out[j - 1] = c / std::numbers::sqrt2;
        } else {
          tsup += c;
          tl2 += c * c / 2.0;
        }
      }
    }
    if (tail_sup) *tail_sup = tsup;
    if (tail_l2_sq) *tail_l2_sq = tl2;
    return true;
  }

 private:
  static double sup_norm_of_element(const BasisFamily& family, int j) {
    if (j == 1) return 1.0;
    return family.space() == Space::torus_d2 ? 2.0 : std::numbers::sqrt2;
  }

  Kind kind_ = Kind::user;
  Space space_ = Space::circle_d1;
  std::vector<double> coefficients_;
  double smoothness_ = 0.0;
  int terms_ = 0;
  std::function<double(Point)> eval_;
};

/// u_j(x) with precondition checks; coordinates outside the fundamental
/// domain wrap.
inline double evaluate_basis(const BasisFamily& family, int j, Point x) {
  return family.evaluate(j, x);
}

inline double evaluate_basis(const BasisFamily& family, int j, double x) {
  return family.evaluate(j, x);
}

/// C_J as the grid maximum of sqrt((1/J) sum_{j<=J} u_j^2); a lower bound
/// of the essential sup that converges under grid refinement.
inline double cj_constant(const BasisFamily& family, int J, int grid_size = 4096) {
  if (J < 1) throw std::domain_error("cj_constant needs J >= 1");
  if (grid_size < 1024) throw std::domain_error("cj_constant needs grid_size >= 1024");
  const QuadratureGrid grid = make_grid(family.space(), grid_size);
  double best = 0.0;
  for (const Point& x : grid.nodes) {
    double s = 0.0;
    for (int j = 1; j <= J; ++j) {
      const double v = family.evaluate(j, x);
      s += v * v;
    }
    best = std::max(best, s / J);
  }
  return std::sqrt(best);
}

namespace detail {

// Quadrature coefficients of f against u_1..u_J; subject to aliasing for
// functions with energy above the grid's Nyquist index.
inline Eigen::VectorXd quadrature_coefficients(const BasisFamily& family, const TestFunction& f,
                                               int J, const QuadratureGrid& grid) {
  Eigen::VectorXd c = Eigen::VectorXd::Zero(J);
  for (std::size_t i = 0; i < grid.nodes.size(); ++i) {
    const double fv = f(family, grid.nodes[i]) * grid.weights[i];
    for (int j = 1; j <= J; ++j) c[j - 1] += fv * family.evaluate(j, grid.nodes[i]);
  }
  return c;
}

}  // namespace detail

/// Sup norm on the grid of f - P_J f, with P_J the L2 projection onto
/// span{u_1..u_J}.  An upper-bound surrogate for the Chebyshev infimum with
/// the same order in J for the implemented bases.
inline double approx_error_sup(const BasisFamily& family, const TestFunction& f, int J,
                               int grid_size = 4096) {
  if (J < 0) throw std::domain_error("approx_error_sup needs J >= 0");
  const QuadratureGrid grid = make_grid(family.space(), grid_size);
  Eigen::VectorXd c;
  if (!f.exact_coefficients(family, J, c)) c = detail::quadrature_coefficients(family, f, J, grid);
  double best = 0.0;
  for (const Point& x : grid.nodes) {
    double r = f(family, x);
    for (int j = 1; j <= J; ++j)
      if (c[j - 1] != 0.0) r -= c[j - 1] * family.evaluate(j, x);
    best = std::max(best, std::abs(r));
  }
  return best;
}

/// ||f||_inf(grid) + max_{J <= J_max} J^{s/d} E_J(f); the Besov-norm proxy.
inline double besov_norm_proxy(const BasisFamily& family, const TestFunction& f, double s,
                               int J_max, int grid_size = 4096) {
  if (s <= 0.0) throw std::domain_error("besov_norm_proxy needs s > 0");
  if (J_max < 8) throw std::domain_error("besov_norm_proxy needs J_max >= 8");
  const QuadratureGrid grid = make_grid(family.space(), grid_size);
  Eigen::VectorXd c;
  if (!f.exact_coefficients(family, J_max, c))
    c = detail::quadrature_coefficients(family, f, J_max, grid);

  const std::size_t npts = grid.nodes.size();
  std::vector<double> residual(npts);
  double sup_f = 0.0;
  for (std::size_t i = 0; i < npts; ++i) {
    residual[i] = f(family, grid.nodes[i]);
    sup_f = std::max(sup_f, std::abs(residual[i]));
  }

  const double inv_d = 1.0 / family.dim();
  double best = 0.0;
  for (int J = 1; J <= J_max; ++J) {
    if (c[J - 1] != 0.0)
      for (std::size_t i = 0; i < npts; ++i)
        residual[i] -= c[J - 1] * family.evaluate(J, grid.nodes[i]);
    double sup_r = 0.0;
    for (double r : residual) sup_r = std::max(sup_r, std::abs(r));
    best = std::max(best, std::pow(static_cast<double>(J), s * inv_d) * sup_r);
  }
  return sup_f + best;
}

/// C_J for J = 1..J_max on one shared grid; rows (J, value) ready for CSV
/// export.
inline std::vector<std::pair<int, double>> cj_profile(const BasisFamily& family, int J_max,
                                                      int grid_size = 4096) {
  if (J_max < 1) throw std::domain_error("cj_profile needs J_max >= 1");
  const QuadratureGrid grid = make_grid(family.space(), grid_size);
  std::vector<double> running(grid.nodes.size(), 0.0);
  std::vector<std::pair<int, double>> rows;
  rows.reserve(static_cast<std::size_t>(J_max));
  for (int j = 1; j <= J_max; ++j) {
    double best = 0.0;
    for (std::size_t i = 0; i < grid.nodes.size(); ++i) {
      const double v = family.evaluate(j, grid.nodes[i]);
      running[i] += v * v;
      best = std::max(best, running[i]);
    }
    rows.emplace_back(j, std::sqrt(best / j));
  }
  return rows;
}

/// Quadrature of u_j u_k against a design density; the orthonormality and
/// population-Gram workhorse.
inline double quadrature_inner(const BasisFamily& family, int j, int k,
                               const QuadratureGrid& grid,
                               const DesignMeasure* measure = nullptr) {
  double s = 0.0;
  for (std::size_t i = 0; i < grid.nodes.size(); ++i) {
    double w = grid.weights[i];
    if (measure) w *= measure->density(grid.nodes[i]);
    s += w * family.evaluate(j, grid.nodes[i]) * family.evaluate(k, grid.nodes[i]);
  }
  return s;
}

}  // namespace ratelab
