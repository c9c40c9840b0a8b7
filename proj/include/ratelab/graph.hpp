#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <queue>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include "ratelab/basis.hpp"
#include "ratelab/errors.hpp"
#include "ratelab/linalg.hpp"
#include "ratelab/rng.hpp"
#include "ratelab/sieve.hpp"

namespace ratelab {

/// Points on the unit circle embedded in R^D (first two coordinates carry
/// the embedding, the rest are zero).  coords holds the angle fractions in
/// [0,1); points are kept sorted by coordinate.
struct PointCloud {
  int ambient_dim = 2;
  std::vector<double> coords;
  Eigen::MatrixXd points;  // N x D
  int labeled_count = 0;
  double cap_exponent = 0.0;  // B in the N <= n^B bookkeeping

  int size() const { return static_cast<int>(coords.size()); }

  bool respects_cap() const {
    if (labeled_count < 2 || cap_exponent <= 0.0) return true;
    return size() <= std::pow(static_cast<double>(labeled_count), cap_exponent);
  }
};

namespace detail {

inline Eigen::MatrixXd embed_circle(const std::vector<double>& coords, int ambient_dim) {
  const auto n = static_cast<Eigen::Index>(coords.size());
  Eigen::MatrixXd pts = Eigen::MatrixXd::Zero(n, ambient_dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double a = 2.0 * std::numbers::pi * coords[static_cast<std::size_t>(i)];
    pts(i, 0) = std::cos(a);
    pts(i, 1) = std::sin(a);
  }
  return pts;
}

}  // namespace detail

/// Angles drawn by inverse CDF from the density, embedded as
/// (cos theta, sin theta, 0, ...).
inline PointCloud sample_cloud(int N, const DesignMeasure& density, int ambient_dim,
                               std::mt19937_64& rng) {
  if (N < 16) throw std::domain_error("sample_cloud needs N >= 16");
  if (ambient_dim < 2) throw std::domain_error("circle embedding needs ambient dimension >= 2");
  PointCloud cloud;
  cloud.ambient_dim = ambient_dim;
  cloud.coords.resize(static_cast<std::size_t>(N));
  for (auto& c : cloud.coords) c = density.sample(rng).x0;
  std::sort(cloud.coords.begin(), cloud.coords.end());
  cloud.points = detail::embed_circle(cloud.coords, ambient_dim);
  return cloud;
}

inline PointCloud equally_spaced_cloud(int N, int ambient_dim = 2) {
  PointCloud cloud;
  cloud.ambient_dim = ambient_dim;
  cloud.coords.resize(static_cast<std::size_t>(N));
  for (int i = 0; i < N; ++i) cloud.coords[static_cast<std::size_t>(i)] = double(i) / N;
  cloud.points = detail::embed_circle(cloud.coords, ambient_dim);
  return cloud;
}

/// h_J = J^{-1/d} / ln^{tau/d}(n); an optional scale rebases the unit.
inline double bandwidth_rule(int J, int d, double n, double tau, double scale = 1.0) {
  if (J < 1 || n <= std::numbers::e) throw std::domain_error("bandwidth rule needs J >= 1, n > e");
  return scale * std::pow(static_cast<double>(J), -1.0 / d) / std::pow(std::log(n), tau / d);
}

/// Fixed spectrum scaling convention: multiplying the graph eigenvalues by
/// this factor lands them on the continuum scale (2 pi m)^2 of the circle
/// in the angle-fraction coordinate.  Derived from the small-h limit
/// lambda_hat_m ~ (2 pi m)^2 x_h^2 / (6 h^2) with x_h the angular window,
/// and checked empirically on N = 2000 uniform clouds.
inline double graph_continuum_scale(double h) {
  const double x_h = std::asin(std::min(1.0, h / 2.0)) / std::numbers::pi;
  return 6.0 * h * h / (x_h * x_h);
}

struct GraphEigs {
  Eigen::VectorXd lambda_hat;  // ascending, lambda_hat[0] = 0
  Eigen::MatrixXd vectors;     // N x count, orthonormal in L2(nu)
};

/// Random geometric graph on a circle cloud: x ~ y iff ||x-y|| < h, the
/// normalized Laplacian (L f)(x) = (1/(h^2 deg x)) sum_{y~x} (f(x)-f(y)),
/// self-adjoint in L2(nu) for the normalized degree measure nu.
class GeometricGraph {
 public:
  GeometricGraph(const PointCloud& cloud, double h) : cloud_(cloud), h_(h) {
    if (h <= 0.0) throw std::domain_error("bandwidth must be positive");
    build_adjacency();
    check_connected();
    const auto n = static_cast<Eigen::Index>(cloud_.size());
    degrees_.resize(n);
    for (Eigen::Index i = 0; i < n; ++i)
      degrees_[i] = static_cast<double>(neighbors_[static_cast<std::size_t>(i)].size());
    nu_ = degrees_ / degrees_.sum();
  }

  const PointCloud& cloud() const { return cloud_; }
  double bandwidth() const { return h_; }
  int size() const { return cloud_.size(); }
  const Eigen::VectorXd& degrees() const { return degrees_; }
  const Eigen::VectorXd& nu() const { return nu_; }
  const std::vector<std::vector<int>>& neighbors() const { return neighbors_; }

  /// (1/h^2)(I - D^{-1} A); rows sum to zero.
  Eigen::MatrixXd laplacian_dense() const {
    const int n = size();
    Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) {
      l(i, i) = 1.0;
      const double inv = 1.0 / degrees_[i];
      for (int j : neighbors_[static_cast<std::size_t>(i)]) l(i, j) -= inv;
    }
    return l / (h_ * h_);
  }

  /// S = I - D^{-1/2} A D^{-1/2}; the degree-symmetrized form whose
  /// spectrum equals h^2 times the Laplacian's.
  Eigen::SparseMatrix<double> symmetrized_sparse() const {
    const int n = size();
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(degrees_.sum()) + static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      trip.emplace_back(i, i, 1.0);
      for (int j : neighbors_[static_cast<std::size_t>(i)])
        trip.emplace_back(i, j, -1.0 / std::sqrt(degrees_[i] * degrees_[j]));
    }
    Eigen::SparseMatrix<double> s(n, n);
    s.setFromTriplets(trip.begin(), trip.end());
    return s;
  }

  /// Full spectrum via a dense symmetric solve; eigenvectors are
  /// back-transformed to L2(nu)-orthonormal form.
  GraphEigs eigs_dense() const {
    const int n = size();
    Eigen::MatrixXd s = Eigen::MatrixXd(symmetrized_sparse());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
    if (es.info() != Eigen::Success) throw numerical_error("graph eigensolve failed");
    GraphEigs out;
    out.lambda_hat = es.eigenvalues().cwiseMax(0.0) / (h_ * h_);
    out.vectors = back_transform(es.eigenvectors());
    return out;
  }

  /// Smallest `count` eigenpairs by blocked inverse iteration on the sparse
  /// symmetrized matrix, with the exact null vector deflated analytically.
  GraphEigs eigs_smallest(int count, int max_iterations = 400, double tol = 1e-12) const {
    const int n = size();
    if (count < 1 || count > n) throw std::domain_error("eigs_smallest: count out of range");
    GraphEigs out;
    const double total = degrees_.sum();
    Eigen::VectorXd null_vec = degrees_.cwiseSqrt() / std::sqrt(total);  // exact kernel of S
    if (count == 1) {
      out.lambda_hat = Eigen::VectorXd::Zero(1);
      out.vectors = back_transform(null_vec);
      return out;
    }

    const int want = count - 1;
    const int block = std::min(n - 1, want + 4);
    Eigen::SparseMatrix<double> s = symmetrized_sparse();
    Eigen::SparseMatrix<double> shifted = s;
    const double delta = 1e-8;
    for (int i = 0; i < n; ++i) shifted.coeffRef(i, i) += delta;
    Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> llt(shifted);
    if (llt.info() != Eigen::Success)
      throw numerical_error("sparse factorization of the shifted graph matrix failed");

    std::mt19937_64 rng =
        make_engine(0x9d2c5680u ^ (static_cast<std::uint64_t>(n) << 20) ^
                    static_cast<std::uint64_t>(count));
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::MatrixXd x(n, block);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = gauss(rng);

    Eigen::VectorXd prev = Eigen::VectorXd::Constant(want, -1.0);
    Eigen::VectorXd ritz;
    Eigen::MatrixXd vecs;
    for (int it = 0; it < max_iterations; ++it) {
      x -= null_vec * (null_vec.transpose() * x);
      Eigen::HouseholderQR<Eigen::MatrixXd> qr(x);
      x = qr.householderQ() * Eigen::MatrixXd::Identity(n, block);
      const Eigen::MatrixXd sx = s * x;
      Eigen::MatrixXd r = x.transpose() * sx;
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(r);
      ritz = es.eigenvalues().head(want);
      vecs = x * es.eigenvectors();
      const double rel = (ritz - prev).cwiseAbs().maxCoeff() /
                         std::max(ritz.cwiseAbs().maxCoeff(), 1e-300);
      if (rel < tol && it > 2) break;
      prev = ritz;
      x = llt.solve(vecs.leftCols(block));
    }

    out.lambda_hat.resize(count);
    out.lambda_hat[0] = 0.0;
    out.lambda_hat.tail(want) = ritz.cwiseMax(0.0) / (h_ * h_);
    Eigen::MatrixXd stacked(n, count);
    stacked.col(0) = null_vec;
    stacked.rightCols(want) = vecs.leftCols(want);
    out.vectors = back_transform(stacked);
    return out;
  }

 private:
  // u = sqrt(T) D^{-1/2} v turns S-eigenvectors into nu-orthonormal
  // Laplacian eigenfunctions; sign fixed by the largest-magnitude entry.
  Eigen::MatrixXd back_transform(const Eigen::MatrixXd& v) const {
    const double total = degrees_.sum();
    Eigen::MatrixXd u = std::sqrt(total) * degrees_.cwiseSqrt().cwiseInverse().asDiagonal() * v;
    for (Eigen::Index c = 0; c < u.cols(); ++c) {
      Eigen::Index imax = 0;
      u.col(c).cwiseAbs().maxCoeff(&imax);
      if (u(imax, c) < 0.0) u.col(c) *= -1.0;
    }
    return u;
  }

  void build_adjacency() {
    const int n = cloud_.size();
    if (n < 2) throw std::domain_error("graph needs at least two points");
    neighbors_.assign(static_cast<std::size_t>(n), {});
    // chord < h on the circle means angular gap < x_h; the coords are
    // sorted, so a wrap-around window scan finds all pairs
    const double x_h = h_ >= 2.0 ? 0.5 : std::asin(h_ / 2.0) / std::numbers::pi;
    const auto& c = cloud_.coords;
    for (int i = 0; i < n; ++i) {
      for (int step = 1; step < n; ++step) {
        const int j = (i + step) % n;
        double gap = c[static_cast<std::size_t>(j)] - c[static_cast<std::size_t>(i)];
        gap -= std::floor(gap);
        gap = std::min(gap, 1.0 - gap);
        if (gap >= x_h) break;
        neighbors_[static_cast<std::size_t>(i)].push_back(j);
        neighbors_[static_cast<std::size_t>(j)].push_back(i);
      }
    }
    for (auto& list : neighbors_) {
      std::sort(list.begin(), list.end());
      list.erase(std::unique(list.begin(), list.end()), list.end());
    }
    for (std::size_t i = 0; i < neighbors_.size(); ++i)
      if (neighbors_[i].empty())
        throw structural_error("geometric graph has an isolated vertex at index " +
                               std::to_string(i));
  }

  void check_connected() const {
    const int n = cloud_.size();
    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    int components = 0;
    for (int root = 0; root < n; ++root) {
      if (seen[static_cast<std::size_t>(root)]) continue;
      ++components;
      if (components > 1) break;
      std::queue<int> q;
      q.push(root);
      seen[static_cast<std::size_t>(root)] = 1;
      while (!q.empty()) {
        const int v = q.front();
        q.pop();
        for (int w : neighbors_[static_cast<std::size_t>(v)])
          if (!seen[static_cast<std::size_t>(w)]) {
            seen[static_cast<std::size_t>(w)] = 1;
            q.push(w);
          }
      }
    }
    if (components > 1) {
      // count the rest for the error message
      std::vector<char> seen2(static_cast<std::size_t>(n), 0);
      int total = 0;
      for (int root = 0; root < n; ++root) {
        if (seen2[static_cast<std::size_t>(root)]) continue;
        ++total;
        std::queue<int> q;
        q.push(root);
        seen2[static_cast<std::size_t>(root)] = 1;
        while (!q.empty()) {
          const int v = q.front();
          q.pop();
          for (int w : neighbors_[static_cast<std::size_t>(v)])
            if (!seen2[static_cast<std::size_t>(w)]) {
              seen2[static_cast<std::size_t>(w)] = 1;
              q.push(w);
            }
        }
      }
      throw structural_error("geometric graph disconnected: " + std::to_string(total) +
                             " components at h = " + std::to_string(h_));
    }
  }

  PointCloud cloud_;
  double h_;
  std::vector<std::vector<int>> neighbors_;
  Eigen::VectorXd degrees_;
  Eigen::VectorXd nu_;
};

inline GeometricGraph build_graph(const PointCloud& cloud, double h) {
  return GeometricGraph(cloud, h);
}

/// Conjugate posterior over graph eigen-coefficients for a fixed truncation
/// J, with unit-variance Gaussian coefficients and labeled responses y.
struct SslPosterior {
  int J = 0;
  Eigen::MatrixXd basis;  // N x J cloud eigenvectors
  ConditionalCoefficientPosterior coefficients;

  Eigen::VectorXd mean_on_cloud() const { return basis * coefficients.mean; }
  Eigen::VectorXd draw_on_cloud(std::mt19937_64& rng) const {
    return basis * coefficients.sample(rng);
  }
};

inline SslPosterior ssl_posterior(const GraphEigs& eigs, const std::vector<int>& labeled,
                                  const Eigen::VectorXd& y, double sigma2, int J) {
  const auto big_n = static_cast<int>(eigs.vectors.rows());
  if (J < 1 || J > big_n) throw std::domain_error("ssl_posterior needs 1 <= J <= N");
  if (J > eigs.vectors.cols()) throw std::domain_error("ssl_posterior: not enough eigenvectors");
  const auto n = static_cast<Eigen::Index>(labeled.size());
  if (n != y.size()) throw std::domain_error("labeled index and response lengths differ");
  Eigen::MatrixXd features(n, J);
  for (Eigen::Index i = 0; i < n; ++i)
    features.row(i) = eigs.vectors.row(labeled[static_cast<std::size_t>(i)]).head(J);
  SslPosterior out;
  out.J = J;
  out.basis = eigs.vectors.leftCols(J);
  out.coefficients = conditional_coefficients(features, y, sigma2, J);
  return out;
}

/// Circulant oracle for equally spaced clouds where h spans k neighbors on
/// each side: ascending eigenvalues of (1/h^2)(I - A/(2k)).
inline Eigen::VectorXd circulant_laplacian_spectrum(int N, int k, double h) {
  Eigen::VectorXd lambda(N);
  for (int f = 0; f < N; ++f) {
    double a = 0.0;
    for (int r = 1; r <= k; ++r) a += 2.0 * std::cos(2.0 * std::numbers::pi * r * f / N);
    lambda[f] = (1.0 - a / (2.0 * k)) / (h * h);
  }
  std::sort(lambda.data(), lambda.data() + N);
  return lambda;
}

/// Uniform without-replacement choice of n labeled indices out of N.
inline std::vector<int> sample_labeled_indices(int N, int n, std::mt19937_64& rng) {
  if (n < 1 || n > N) throw std::domain_error("need 1 <= n <= N");
  std::vector<int> idx(static_cast<std::size_t>(N));
  for (int i = 0; i < N; ++i) idx[static_cast<std::size_t>(i)] = i;
  for (int i = 0; i < n; ++i) {
    std::uniform_int_distribution<int> pick(i, N - 1);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
  }
  idx.resize(static_cast<std::size_t>(n));
  return idx;
}

struct NormComparison {
  double event_frequency = 0.0;  // all test vectors satisfied ||f||_N <= 2 ||f||_n
  double worst_factor = 0.0;
  double c_squared = 0.0;  // max over the cloud of (1/J) sum u_j^2
};

/// Frequency over uniform relabelings of the event
/// { ||f||_N <= 2 ||f||_n for all test coefficient vectors }, f in the span
/// of the first J graph eigenvectors.
inline NormComparison norm_comparison(const GraphEigs& eigs, int J, int n, int replicates,
                                      std::uint64_t seed, int vectors_per_replicate = 100) {
  const auto big_n = static_cast<int>(eigs.vectors.rows());
  if (J < 1 || J > eigs.vectors.cols()) throw std::domain_error("norm_comparison: J out of range");
  if (n < 1 || n > big_n) throw std::domain_error("norm_comparison: need 1 <= n <= N");
  const Eigen::MatrixXd u = eigs.vectors.leftCols(J);
  const Eigen::MatrixXd sigma_big = u.transpose() * u / static_cast<double>(big_n);

  NormComparison out;
  out.c_squared = u.array().square().rowwise().sum().maxCoeff() / J;
  int hits = 0;
  for (int rep = 0; rep < replicates; ++rep) {
    std::mt19937_64 rng = make_cell_engine(seed, static_cast<std::uint64_t>(n),
                                           static_cast<std::uint64_t>(rep));
    const std::vector<int> labeled = sample_labeled_indices(big_n, n, rng);
    Eigen::MatrixXd un(n, J);
    for (int i = 0; i < n; ++i) un.row(i) = u.row(labeled[static_cast<std::size_t>(i)]);
    const Eigen::MatrixXd sigma_n = un.transpose() * un / static_cast<double>(n);

    std::normal_distribution<double> gauss(0.0, 1.0);
    bool all_ok = true;
    for (int v = 0; v < vectors_per_replicate; ++v) {
      Eigen::VectorXd a(J);
      for (int j = 0; j < J; ++j) a[j] = gauss(rng);
      const double big = a.dot(sigma_big * a);
      const double small = a.dot(sigma_n * a);
      const double factor = small > 0.0 ? std::sqrt(big / small)
                                        : std::numeric_limits<double>::infinity();
      out.worst_factor = std::max(out.worst_factor, factor);
      if (factor > 2.0) all_ok = false;
    }
    hits += all_ok;
  }
  out.event_frequency = static_cast<double>(hits) / replicates;
  return out;
}

}  // namespace ratelab
