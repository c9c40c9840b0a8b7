#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "ratelab/basis.hpp"
#include "ratelab/errors.hpp"
#include "ratelab/linalg.hpp"

namespace ratelab {

/// Decay exponents carried as metadata; the artifact fits them empirically
/// and never assumes the comparison constants.
struct ExponentRecord {
  double p = 0.0;
  double tau = 0.0;
  double beta = 0.0;
};

namespace decay {

struct Sobolev {
  double alpha;
};
struct Heat {
  double t;
};
struct Explicit {
  std::vector<double> s;
};

}  // namespace decay

namespace detail {

// Tail of sum_{m > M} (1 + c m^2)^(-ex) for a smooth monotone summand:
// direct terms up to m = M + K, then Euler-Maclaurin from there.  The
// integral uses the two-term expansion of (1 + c x^2)^(-ex) around
// (c x^2)^(-ex); at the switch point the neglected orders are far below
// 1e-15 absolute.
inline double quadratic_decay_tail(double c, double ex, long M, long direct_terms = 20000) {
  double sum = 0.0;
  const long a = M + direct_terms + 1;
  for (long m = M + 1; m < a; ++m) {
    const double x = static_cast<double>(m);
    sum += std::pow(1.0 + c * x * x, -ex);
  }
  const double x = static_cast<double>(a);
  const double g = std::pow(1.0 + c * x * x, -ex);
  const double gp = -2.0 * ex * c * x * std::pow(1.0 + c * x * x, -(ex + 1.0));
  const double integral = std::pow(c, -ex) * (std::pow(x, 1.0 - 2.0 * ex) / (2.0 * ex - 1.0) -
                                              (ex / c) * std::pow(x, -1.0 - 2.0 * ex) /
                                                  (2.0 * ex + 1.0));
  return sum + integral + g / 2.0 - gp / 12.0;
}

}  // namespace detail

/// A Mercer kernel k(x,y) = sum_j s_j u_j(x) u_j(y) over a basis family,
/// with polynomial (Sobolev), heat, or explicit eigenvalue decay.  A kernel
/// may be declared finite rank, in which case s_j = 0 beyond the rank and
/// series identities over it are exact finite sums.
class SpectralKernel {
 public:
  using Decay = std::variant<decay::Sobolev, decay::Heat, decay::Explicit>;

  /// s_j = (1 + lambda_j)^{-(alpha + d/2)}.
  static SpectralKernel sobolev(std::shared_ptr<const BasisFamily> family, double alpha) {
    if (alpha <= 0.0) throw std::domain_error("sobolev decay needs alpha > 0");
    SpectralKernel k(std::move(family), decay::Sobolev{alpha});
    k.exponents_.p = k.family().dim() / (2.0 * alpha + k.family().dim());
    return k;
  }

  /// s_j = exp(-t lambda_j).
  static SpectralKernel heat(std::shared_ptr<const BasisFamily> family, double t) {
    if (t <= 0.0) throw std::domain_error("heat decay needs t > 0");
    return SpectralKernel(std::move(family), decay::Heat{t});
  }

  /// Finite explicit non-increasing sequence; rank equals its length.
  static SpectralKernel explicit_sequence(std::shared_ptr<const BasisFamily> family,
                                          std::vector<double> s) {
    for (std::size_t i = 0; i + 1 < s.size(); ++i)
      if (s[i] < s[i + 1]) throw std::domain_error("explicit eigenvalues must be non-increasing");
    for (double v : s)
      if (v < 0.0) throw std::domain_error("eigenvalues must be non-negative");
    const int rank = static_cast<int>(s.size());
    SpectralKernel k(std::move(family), decay::Explicit{std::move(s)});
    k.rank_ = rank;
    k.eval_truncation_ = rank;
    return k;
  }

  /// The finite-rank truncation of this kernel: s_j = 0 for j > rank.
  SpectralKernel truncated(int rank) const {
    if (rank < 1) throw std::domain_error("rank must be >= 1");
    SpectralKernel k = *this;
    k.rank_ = rank;
    k.eval_truncation_ = rank;
    return k;
  }

  /// Pick the evaluation truncation L so the certified tail
  /// sum_{j > L} s_j sup|u_j(x) u_j(y)| drops below `tol`, using the crude
  /// bound sup|u_j| <= sqrt(2) per axis.  Throws precision_error with the
  /// achievable tail when L <= 10^6 does not suffice.
  SpectralKernel& certify_eval_truncation(double tol = 1e-10) {
    if (rank_ > 0) {
      eval_truncation_ = rank_;
      return *this;
    }
    const double sup_factor = family().space() == Space::torus_d2 ? 4.0 : 2.0;
    long lo = 1;
    while (lo <= 1000000) {
      if (sup_factor * tail_sum(static_cast<int>(lo)) < tol) break;
      lo *= 2;
    }
    if (lo > 1000000) {
      const double achievable = sup_factor * tail_sum(1000000);
      if (achievable >= tol)
        throw precision_error("kernel tail certificate " + std::to_string(tol) +
                                  " unreachable at truncation 1e6; achievable tail " +
                                  std::to_string(achievable),
                              achievable);
      lo = 1000000;
    }
    // shrink to the smallest passing L
    long hi = lo, base = lo / 2;
    while (base + 1 < hi) {
      const long mid = (base + hi) / 2;
      if (sup_factor * tail_sum(static_cast<int>(mid)) < tol)
        hi = mid;
      else
        base = mid;
    }
    eval_truncation_ = static_cast<int>(hi);
    return *this;
  }

  SpectralKernel& set_eval_truncation(int L) {
    if (L < 1) throw std::domain_error("eval truncation must be >= 1");
    eval_truncation_ = rank_ > 0 ? std::min(L, rank_) : L;
    return *this;
  }

  const BasisFamily& family() const { return *family_; }
  std::shared_ptr<const BasisFamily> family_ptr() const { return family_; }
  bool finite_rank() const { return rank_ > 0; }
  int rank() const { return rank_; }
  int eval_truncation() const {
    if (eval_truncation_ <= 0)
      throw std::logic_error("kernel evaluation truncation not set; certify or truncate first");
    return eval_truncation_;
  }

  const ExponentRecord& exponents() const { return exponents_; }
  ExponentRecord& exponents() { return exponents_; }

  /// s_j per the decay rule (0 beyond a finite rank).  Heat decay returns
  /// exactly 0 once t lambda_j > 745, before exp underflows.
  double eigenvalue(int j) const {
    if (j < 1) throw std::domain_error("eigenvalue index must be >= 1");
    if (rank_ > 0 && j > rank_) return 0.0;
    if (const auto* s = std::get_if<decay::Sobolev>(&decay_)) {
      const double ex = s->alpha + 0.5 * family().dim();
      return std::pow(1.0 + family().laplacian_eigenvalue(j), -ex);
    }
    if (const auto* h = std::get_if<decay::Heat>(&decay_)) {
      const double a = h->t * family().laplacian_eigenvalue(j);
      return a > 745.0 ? 0.0 : std::exp(-a);
    }
    const auto& e = std::get<decay::Explicit>(decay_);
    return e.s[static_cast<std::size_t>(j - 1)];
  }

  /// sum_{j > L} s_j, to better than 1e-12 absolute for the closed-form
  /// decays on the 1-d spaces.
  double tail_sum(int L) const {
    if (L < 0) throw std::domain_error("tail_sum needs L >= 0");
    if (rank_ > 0) {
      double s = 0.0;
      for (int j = L + 1; j <= rank_; ++j) s += eigenvalue(j);
      return s;
    }
    if (const auto* sb = std::get_if<decay::Sobolev>(&decay_)) return sobolev_tail(sb->alpha, L);
    if (std::get_if<decay::Heat>(&decay_)) {
      double s = 0.0;
      const int top = family().max_index();
      for (int j = L + 1;; ++j) {
        if (j > top || j > L + 2000000)
          throw precision_error("heat tail not exhausted within the index table", s);
        const double v = eigenvalue(j);
        s += v;
        if (v < 1e-300) break;
      }
      return s;
    }
    return 0.0;
  }

  /// Truncated Mercer series; deterministic for a fixed evaluation
  /// truncation.
  double operator()(Point x, Point y) const {
    const int L = eval_truncation();
    double v = 0.0;
    for (int j = 1; j <= L; ++j) {
      const double s = eigenvalue(j);
      if (s == 0.0) continue;
      v += s * family().evaluate(j, x) * family().evaluate(j, y);
    }
    return v;
  }

  double operator()(double x, double y) const { return (*this)(Point{x, 0.0}, Point{y, 0.0}); }

  /// Quadrature of k(x,x) against mu0 (the operator trace).
  double trace_quadrature(const DesignMeasure& measure, int grid_size = 4096) const {
    const QuadratureGrid grid = make_grid(family().space(), grid_size);
    double s = 0.0;
    for (std::size_t i = 0; i < grid.nodes.size(); ++i)
      s += grid.weights[i] * measure.density(grid.nodes[i]) * (*this)(grid.nodes[i], grid.nodes[i]);
    return s;
  }

 private:
  SpectralKernel(std::shared_ptr<const BasisFamily> family, Decay d)
      : family_(std::move(family)), decay_(std::move(d)) {
    if (!family_) throw std::invalid_argument("kernel needs a basis family");
  }

  double sobolev_tail(double alpha, int L) const {
    const double ex = alpha + 0.5 * family().dim();
    const double pi2 = std::numbers::pi * std::numbers::pi;
    switch (family().space()) {
      case Space::circle_d1: {
        // s_1 = 1, s_{2m} = s_{2m+1} = (1 + 4 pi^2 m^2)^{-ex}.
        const double c = 4.0 * pi2;
        if (L == 0) return 1.0 + 2.0 * detail::quadratic_decay_tail(c, ex, 0);
        const long M = L / 2;  // complete pairs up to index L
        double tail = 2.0 * detail::quadratic_decay_tail(c, ex, M);
        if (L % 2 == 0) tail += std::pow(1.0 + c * double(M) * double(M), -ex);
        return tail;
      }
      case Space::interval_cosine: {
        // s_j = (1 + pi^2 (j-1)^2)^{-ex}, smooth in the shifted index.
        if (L == 0) return 1.0 + detail::quadratic_decay_tail(pi2, ex, 0);
        return detail::quadratic_decay_tail(pi2, ex, L - 1);
      }
      case Space::torus_d2: {
        // Direct summation over the frozen index table; the table must be
        // deep enough for the remainder to vanish at double precision.
        double s = 0.0;
        const int top = family().max_index();
        for (int j = L + 1; j <= top; ++j) s += eigenvalue(j);
        const double last = top >= 1 ? eigenvalue(top) : 0.0;
        if (last > 1e-16 * std::max(s, 1e-300) && last * top > 1e-14)
          throw precision_error(
              "torus sobolev tail needs a deeper basis table beyond index " + std::to_string(top),
              last * top);
        return s;
      }
    }
    return 0.0;
  }

  std::shared_ptr<const BasisFamily> family_;
  Decay decay_;
  int rank_ = 0;             // 0 = infinite
  int eval_truncation_ = 0;  // 0 = unset
  ExponentRecord exponents_;
};

inline double mercer_eigenvalue(const SpectralKernel& kernel, int j) {
  return kernel.eigenvalue(j);
}

inline double kernel_eval(const SpectralKernel& kernel, Point x, Point y) { return kernel(x, y); }

/// Discrete spectral data of the kernel integral operator under a design
/// measure: quadrature nodes and mu0-weights, descending eigenvalues, and
/// eigenfunction values at the nodes, orthonormal in the weighted inner
/// product.
struct NystromEigensystem {
  std::vector<Point> nodes;
  Eigen::VectorXd weights;
  Eigen::VectorXd eigenvalues;
  Eigen::MatrixXd eigenfunctions;  // m x L, column l holds e_l at the nodes

  int count() const { return static_cast<int>(eigenvalues.size()); }

  /// max_i |e_l(x_i)|.
  double sup_norm(int l) const {
    return eigenfunctions.col(l - 1).cwiseAbs().maxCoeff();
  }
};

namespace detail {

inline void clamp_spectrum(Eigen::VectorXd& eigs, double trace) {
  const double floor = -1e-10 * std::max(trace, 0.0);
  for (Eigen::Index i = 0; i < eigs.size(); ++i) {
    if (eigs[i] < floor)
      throw numerical_error("kernel matrix indefinite: eigenvalue " + std::to_string(eigs[i]) +
                            " below clamp threshold " + std::to_string(floor));
    if (eigs[i] < 0.0) eigs[i] = 0.0;
  }
}

}  // namespace detail

/// Top-L eigenpairs of the weighted kernel matrix W^{1/2} K W^{1/2}.  The
/// kernel must carry a finite rank or a certified evaluation truncation T;
/// the factored form of the rank-T matrix gives the same nonzero spectrum
/// and nodal eigenfunctions through a T x T solve.
inline NystromEigensystem nystrom_eigens(const SpectralKernel& kernel,
                                         const DesignMeasure& measure, int m_nodes, int L,
                                         bool dense_route = false) {
  const int T = kernel.eval_truncation();
  if (L < 1 || L > T) throw std::domain_error("nystrom_eigens needs 1 <= L <= kernel truncation");
  if (m_nodes < 4 * L) throw std::domain_error("nystrom_eigens needs m >= 4L");

  const QuadratureGrid grid = make_grid(kernel.family().space(), m_nodes);
  const auto m = static_cast<Eigen::Index>(grid.nodes.size());

  Eigen::VectorXd w(m);
  for (Eigen::Index i = 0; i < m; ++i)
    w[i] = grid.weights[static_cast<std::size_t>(i)] * measure.density(grid.nodes[i]);

  Eigen::VectorXd s(T);
  for (int j = 1; j <= T; ++j) s[j - 1] = kernel.eigenvalue(j);
  Eigen::MatrixXd u(m, T);
  for (Eigen::Index i = 0; i < m; ++i)
    for (int j = 1; j <= T; ++j) u(i, j - 1) = kernel.family().evaluate(j, grid.nodes[i]);

  const Eigen::VectorXd kxx_diag = u.array().square().matrix() * s;
  const double trace = w.dot(kxx_diag);

  NystromEigensystem out;
  out.nodes = grid.nodes;
  out.weights = w;

  if (dense_route) {
    // Literal m x m route, kept as the cross-check for the factored one.
    Eigen::MatrixXd kxx = u * s.asDiagonal() * u.transpose();
    Eigen::VectorXd wsqrt = w.array().sqrt();
    Eigen::MatrixXd a = wsqrt.asDiagonal() * kxx * wsqrt.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
    if (es.info() != Eigen::Success) throw numerical_error("nystrom eigensolve failed");
    Eigen::VectorXd eigs = es.eigenvalues().reverse();
    detail::clamp_spectrum(eigs, trace);
    out.eigenvalues = eigs.head(L);
    out.eigenfunctions.resize(m, L);
    for (int l = 0; l < L; ++l)
      out.eigenfunctions.col(l) =
          es.eigenvectors().col(m - 1 - l).array() / wsqrt.array();
  } else {
    Eigen::VectorXd ssqrt = s.array().sqrt();
    Eigen::MatrixXd c = u * ssqrt.asDiagonal();  // W^{1/2} K W^{1/2} = (W^{1/2}C)(W^{1/2}C)^T
    Eigen::MatrixXd b = c.transpose() * w.asDiagonal() * c;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(b);
    if (es.info() != Eigen::Success) throw numerical_error("nystrom eigensolve failed");
    Eigen::VectorXd eigs = es.eigenvalues().reverse();
    detail::clamp_spectrum(eigs, trace);
    out.eigenvalues = eigs.head(L);
    out.eigenfunctions.resize(m, L);
    for (int l = 0; l < L; ++l) {
      const double theta = out.eigenvalues[l];
      if (theta <= 0.0)
        throw numerical_error("nystrom eigenvalue " + std::to_string(l + 1) +
                              " vanished; cannot orthonormalize that eigenfunction");
      out.eigenfunctions.col(l) = c * es.eigenvectors().col(T - 1 - l) / std::sqrt(theta);
    }
  }

  // Deterministic sign: largest-magnitude nodal value positive.
  for (int l = 0; l < L; ++l) {
    Eigen::Index imax = 0;
    out.eigenfunctions.col(l).cwiseAbs().maxCoeff(&imax);
    if (out.eigenfunctions(imax, l) < 0.0) out.eigenfunctions.col(l) *= -1.0;
  }
  return out;
}

/// max over the grid of sum_{l<=L} u_l(x)^2 for the analytic basis (the
/// uniform-measure eigenfunctions).
inline double sup_sum_squares(const SpectralKernel& kernel, int L, int grid_size = 4096) {
  if (L < 1) throw std::domain_error("sup_sum_squares needs L >= 1");
  const QuadratureGrid grid = make_grid(kernel.family().space(), grid_size);
  double best = 0.0;
  for (const Point& x : grid.nodes) {
    double s = 0.0;
    for (int l = 1; l <= L; ++l) {
      const double v = kernel.family().evaluate(l, x);
      s += v * v;
    }
    best = std::max(best, s);
  }
  return best;
}

/// Same statistic over the nodes of a Nystrom eigensystem.
inline double sup_sum_squares(const NystromEigensystem& eig, int L) {
  if (L < 1 || L > eig.count()) throw std::domain_error("sup_sum_squares: L out of range");
  return eig.eigenfunctions.leftCols(L).array().square().rowwise().sum().maxCoeff();
}

struct SupNormRow {
  int l;
  double s_hat;
  double sup_norm;
  double ratio;  // sup_norm / l^{1/2+delta}
};

/// Per-eigenfunction sup-norm growth table for a chosen delta.
inline std::vector<SupNormRow> mercer_sup_norm_report(const NystromEigensystem& eig, double delta) {
  if (delta <= 0.0) throw std::domain_error("mercer_sup_norm_report needs delta > 0");
  std::vector<SupNormRow> rows;
  rows.reserve(static_cast<std::size_t>(eig.count()));
  for (int l = 1; l <= eig.count(); ++l) {
    const double sup = eig.sup_norm(l);
    rows.push_back({l, eig.eigenvalues[l - 1], sup,
                    sup / std::pow(static_cast<double>(l), 0.5 + delta)});
  }
  return rows;
}

}  // namespace ratelab
