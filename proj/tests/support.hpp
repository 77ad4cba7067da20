#pragma once

// Random instances and independent oracles shared by the test suites. The
// oracles evaluate the defining formulas directly (plain loops, explicit
// assembly, a generic dense solver) and share no code with the library
// beyond the value types.

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "cpdreg/cpdreg.hpp"

namespace testing_support {

using cpdreg::ClusterAssignment;
using cpdreg::Coords;
using cpdreg::Index;
using cpdreg::Matrix;
using cpdreg::PointSet;
using cpdreg::Vector;

inline PointSet random_points(std::mt19937_64& rng, Index n, int dim, double spread = 1.0) {
  std::normal_distribution<double> normal(0.0, spread);
  Coords c(n, dim);
  for (Index i = 0; i < n; ++i) {
    for (int d = 0; d < dim; ++d) c(i, d) = normal(rng);
  }
  return PointSet(std::move(c));
}

inline PointSet jitter(std::mt19937_64& rng, const PointSet& p, double scale) {
  std::normal_distribution<double> normal(0.0, scale);
  Coords c = p.points();
  for (Index i = 0; i < c.rows(); ++i) {
    for (Index d = 0; d < c.cols(); ++d) c(i, d) += normal(rng);
  }
  return PointSet(std::move(c));
}

// Labels 1..C with every cluster non-empty (first C points seed the clusters).
inline ClusterAssignment random_labels(std::mt19937_64& rng, Index n, int c_count) {
  std::uniform_int_distribution<int> pick(1, c_count);
  std::vector<int> l(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) l[static_cast<std::size_t>(i)] = i < c_count ? static_cast<int>(i) + 1 : pick(rng);
  std::shuffle(l.begin(), l.end(), rng);
  return ClusterAssignment(std::move(l), c_count);
}

inline double sq_dist(const PointSet& a, Index i, const PointSet& b, Index j) {
  double s = 0.0;
  for (int d = 0; d < a.dim(); ++d) {
    const double t = a.points()(i, d) - b.points()(j, d);
    s += t * t;
  }
  return s;
}

inline Matrix kernel_oracle(const PointSet& y, double beta_sq) {
  Matrix g(y.size(), y.size());
  for (Index i = 0; i < y.size(); ++i) {
    for (Index j = 0; j < y.size(); ++j) g(i, j) = std::exp(-sq_dist(y, i, y, j) / (2.0 * beta_sq));
  }
  return g;
}

// Posterior formula evaluated literally on the subset of template points
// whose indicator is set (all of them when `allowed` is empty).
inline Matrix posterior_oracle(const PointSet& x, const PointSet& t, double sigma2, double omega,
                               const std::vector<int>& x_labels = {},
                               const std::vector<int>& t_labels = {}) {
  const int dim = x.dim();
  Matrix p = Matrix::Zero(t.size(), x.size());
  for (Index n = 0; n < x.size(); ++n) {
    Index m_c = 0;
    Index n_c = 0;
    const int lab = x_labels.empty() ? 0 : x_labels[static_cast<std::size_t>(n)];
    for (Index m = 0; m < t.size(); ++m) {
      if (t_labels.empty() || t_labels[static_cast<std::size_t>(m)] == lab) ++m_c;
    }
    for (Index k = 0; k < x.size(); ++k) {
      if (x_labels.empty() || x_labels[static_cast<std::size_t>(k)] == lab) ++n_c;
    }
    const double c = std::pow(2.0 * std::numbers::pi * sigma2, 0.5 * dim) * omega / (1.0 - omega) *
                     static_cast<double>(m_c) / static_cast<double>(n_c);
    long double den = c;
    for (Index m = 0; m < t.size(); ++m) {
      if (!t_labels.empty() && t_labels[static_cast<std::size_t>(m)] != lab) continue;
      den += std::exp(static_cast<long double>(-sq_dist(x, n, t, m) / (2.0 * sigma2)));
    }
    for (Index m = 0; m < t.size(); ++m) {
      if (!t_labels.empty() && t_labels[static_cast<std::size_t>(m)] != lab) continue;
      p(m, n) = static_cast<double>(std::exp(static_cast<long double>(-sq_dist(x, n, t, m) / (2.0 * sigma2))) / den);
    }
  }
  return p;
}

// Generic dense solve of an explicitly assembled system.
inline Matrix dense_solve(const Matrix& a, const Matrix& b) { return a.fullPivLu().solve(b); }

inline Matrix cpd_system(const Matrix& g, const Matrix& p, double reg) {
  const Vector q = p.rowwise().sum();
  Matrix a = q.asDiagonal() * g;
  a.diagonal().array() += reg;
  return a;
}

inline Matrix cpd_rhs(const Matrix& p, const PointSet& x, const PointSet& y) {
  const Vector q = p.rowwise().sum();
  return p * x.points() - q.asDiagonal() * Matrix(y.points());
}

inline double weighted_mean_sq(const Matrix& p, const PointSet& x, const PointSet& t) {
  double num = 0.0;
  double np = 0.0;
  for (Index m = 0; m < t.size(); ++m) {
    for (Index n = 0; n < x.size(); ++n) {
      num += p(m, n) * sq_dist(x, n, t, m);
      np += p(m, n);
    }
  }
  return num / (np * x.dim());
}

inline double brute_directed(const PointSet& a, const std::vector<Index>& ia, const PointSet& b,
                             const std::vector<Index>& ib) {
  double worst = 0.0;
  for (Index i : ia) {
    double best = std::numeric_limits<double>::infinity();
    for (Index j : ib) best = std::min(best, std::sqrt(sq_dist(a, i, b, j)));
    worst = std::max(worst, best);
  }
  return worst;
}

inline std::vector<Index> iota(Index n) {
  std::vector<Index> v(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = i;
  return v;
}

inline double brute_hausdorff(const PointSet& a, const PointSet& b) {
  const auto ia = iota(a.size());
  const auto ib = iota(b.size());
  return std::max(brute_directed(a, ia, b, ib), brute_directed(b, ib, a, ia));
}

inline double brute_cluster_hausdorff(const PointSet& a, const ClusterAssignment& la,
                                      const PointSet& b, const ClusterAssignment& lb) {
  double sum = 0.0;
  for (int c = 1; c <= la.n_clusters(); ++c) {
    std::vector<Index> ia;
    std::vector<Index> ib;
    for (Index i = 0; i < a.size(); ++i) if (la.label(i) == c) ia.push_back(i);
    for (Index j = 0; j < b.size(); ++j) if (lb.label(j) == c) ib.push_back(j);
    sum += std::max(brute_directed(a, ia, b, ib), brute_directed(b, ib, a, ia));
  }
  return sum / la.n_clusters();
}

// Full dense snapshot of every iteration, for reduction comparisons.
struct Recorded {
  std::vector<Matrix> posterior;
  std::vector<Matrix> w;
  std::vector<double> sigma2;
};

inline cpdreg::IterationObserver recorder(Recorded& r) {
  return [&r](const cpdreg::IterationState& s) {
    r.posterior.push_back(s.posterior);
    r.w.push_back(s.w);
    r.sigma2.push_back(s.sigma2);
  };
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

}  // namespace testing_support
