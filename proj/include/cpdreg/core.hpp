#pragma once

// Domain types and kernel-space primitives shared by the CPD, ECPD and
// cluster-CPD solvers.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cpdreg/errors.hpp"
#include "cpdreg/numeric.hpp"

namespace cpdreg {

using Index = Eigen::Index;
// Point coordinates, one point per row. Row-major keeps each point contiguous
// for the pairwise distance loops.
using Coords = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// An ordered list of D-dimensional points with finite coordinates.
class PointSet {
 public:
  PointSet() = default;

  explicit PointSet(Coords points) : points_(std::move(points)) {
    if (points_.rows() < 1 || points_.cols() < 1) {
      throw InputError("point set must contain at least one point of dimension >= 1");
    }
    if (!points_.allFinite()) {
      throw InputError("point set contains non-finite coordinates");
    }
  }

  static PointSet from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw InputError("point set must contain at least one point");
    const auto dim = static_cast<Index>(rows.front().size());
    Coords c(static_cast<Index>(rows.size()), dim);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (static_cast<Index>(rows[i].size()) != dim) {
        throw InputError("ragged point rows: row " + std::to_string(i) + " has " +
                         std::to_string(rows[i].size()) + " coordinates, expected " +
                         std::to_string(dim));
      }
      for (Index d = 0; d < dim; ++d) c(static_cast<Index>(i), d) = rows[i][d];
    }
    return PointSet(std::move(c));
  }

  const Coords& points() const noexcept { return points_; }
  Index size() const noexcept { return points_.rows(); }
  int dim() const noexcept { return static_cast<int>(points_.cols()); }
  const double* row(Index i) const noexcept { return points_.data() + i * points_.cols(); }

  friend bool operator==(const PointSet& a, const PointSet& b) {
    return a.points_.rows() == b.points_.rows() && a.points_.cols() == b.points_.cols() &&
           a.points_ == b.points_;
  }

 private:
  Coords points_;
};

inline void require_same_dim(const PointSet& a, const PointSet& b, const char* what) {
  if (a.dim() != b.dim()) {
    throw InputError(std::string(what) + ": dimension mismatch (" + std::to_string(a.dim()) +
                     " vs " + std::to_string(b.dim()) + ")");
  }
}

/// Hard cluster labels in [1..C]; every declared cluster has a member.
/// `ids` optionally keeps the label value each dense index was read from.
class ClusterAssignment {
 public:
  ClusterAssignment() = default;

  ClusterAssignment(std::vector<int> labels, int n_clusters, std::vector<long long> ids = {})
      : labels_(std::move(labels)), n_clusters_(n_clusters), ids_(std::move(ids)) {
    if (n_clusters_ < 1) throw InputError("cluster count must be >= 1");
    if (labels_.empty()) throw InputError("cluster assignment is empty");
    if (!ids_.empty() && static_cast<int>(ids_.size()) != n_clusters_) {
      throw InputError("cluster id table size does not match cluster count");
    }
    std::vector<std::size_t> counts(static_cast<std::size_t>(n_clusters_), 0);
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      const int l = labels_[i];
      if (l < 1 || l > n_clusters_) {
        throw InputError("label " + std::to_string(l) + " at point " + std::to_string(i) +
                         " outside [1.." + std::to_string(n_clusters_) + "]");
      }
      ++counts[static_cast<std::size_t>(l - 1)];
    }
    for (int c = 0; c < n_clusters_; ++c) {
      if (counts[static_cast<std::size_t>(c)] == 0) {
        throw InputError("declared cluster " + std::to_string(c + 1) + " has no members");
      }
    }
  }

  // Every point in one cluster.
  static ClusterAssignment single(Index n) {
    return ClusterAssignment(std::vector<int>(static_cast<std::size_t>(n), 1), 1);
  }

  const std::vector<int>& labels() const noexcept { return labels_; }
  int n_clusters() const noexcept { return n_clusters_; }
  Index size() const noexcept { return static_cast<Index>(labels_.size()); }
  int label(Index i) const { return labels_[static_cast<std::size_t>(i)]; }
  const std::vector<long long>& ids() const noexcept { return ids_; }

  // Indices of the points carrying label c (1-based c), in point order.
  std::vector<Index> members(int c) const {
    std::vector<Index> out;
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      if (labels_[i] == c) out.push_back(static_cast<Index>(i));
    }
    return out;
  }

  void require_matches(const PointSet& points, const char* what) const {
    if (size() != points.size()) {
      throw InputError(std::string(what) + ": " + std::to_string(size()) +
                       " labels for " + std::to_string(points.size()) + " points");
    }
  }

  friend bool operator==(const ClusterAssignment&, const ClusterAssignment&) = default;

 private:
  std::vector<int> labels_;
  int n_clusters_ = 0;
  std::vector<long long> ids_;
};

struct RegistrationConfig {
  double beta_sq = 2.0;
  double lambda = 2.0;
  double omega = 0.1;
  int max_iters = 150;
  double rel_tol = 1e-5;
  double sigma2_floor = 1e-8;

  void validate() const {
    if (!(beta_sq > 0.0) || !std::isfinite(beta_sq)) throw ParameterError("beta_sq must be > 0");
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ParameterError("lambda must be > 0");
    if (!(omega >= 0.0 && omega < 1.0)) throw ParameterError("omega must lie in [0, 1)");
    if (max_iters < 1) throw ParameterError("max_iters must be >= 1");
    if (!(rel_tol > 0.0)) throw ParameterError("rel_tol must be > 0");
    if (!(sigma2_floor > 0.0)) throw ParameterError("sigma2_floor must be > 0");
  }
};

/// Symmetric M x M Gaussian kernel over the template, unit diagonal.
struct KernelMatrix {
  Matrix g;

  Index size() const noexcept { return g.rows(); }
};

/// v(z) = sum_m w_m exp(-|z - y_m|^2 / (2 beta^2)) anchored at the template.
struct DisplacementField {
  Matrix w;
  PointSet template_points;
  double beta_sq = 0.0;
};

struct TraceRecord {
  int iteration = 0;
  double sigma2 = 0.0;
  // Penalized objective: negative log-likelihood plus lambda/2 tr(W^T G W)
  // (plus the correspondence-prior term for ECPD).
  double nll = 0.0;
  // Upper bound Q at the new parameters, 1/(2 sigma^2) convention.
  double q_value = 0.0;
  double wall_ms = 0.0;

  friend bool operator==(const TraceRecord&, const TraceRecord&) = default;
};

enum class Termination { kConverged, kSigmaFloor, kMaxIterations };

inline const char* to_string(Termination t) {
  switch (t) {
    case Termination::kConverged: return "converged";
    case Termination::kSigmaFloor: return "sigma2_floor";
    case Termination::kMaxIterations: return "max_iterations";
  }
  return "unknown";
}

struct RegistrationResult {
  DisplacementField field;
  PointSet transformed;
  double sigma2_final = 0.0;
  int iterations = 0;
  std::vector<TraceRecord> trace;
  Termination termination = Termination::kMaxIterations;

  bool converged() const noexcept { return termination != Termination::kMaxIterations; }
};

namespace detail {

inline void require_positive_beta(double beta_sq) {
  if (!(beta_sq > 0.0) || !std::isfinite(beta_sq)) {
    throw ParameterError("beta_sq must be a finite positive value");
  }
}

// Cross kernel K[i][j] = exp(-|a_i - b_j|^2 / (2 beta^2)).
inline Matrix cross_kernel(const PointSet& a, const PointSet& b, double beta_sq) {
  const double scale = -1.0 / (2.0 * beta_sq);
  Matrix k(a.size(), b.size());
  for (Index i = 0; i < a.size(); ++i) {
    for (Index j = 0; j < b.size(); ++j) {
      k(i, j) = std::exp(scale * numeric::squared_distance(a.row(i), b.row(j), a.dim()));
    }
  }
  return k;
}

}  // namespace detail

inline KernelMatrix gaussian_kernel(const PointSet& template_points, double beta_sq) {
  detail::require_positive_beta(beta_sq);
  const Index m = template_points.size();
  const double scale = -1.0 / (2.0 * beta_sq);
  KernelMatrix k{Matrix(m, m)};
  for (Index i = 0; i < m; ++i) {
    k.g(i, i) = 1.0;
    for (Index j = i + 1; j < m; ++j) {
      const double v = std::exp(
          scale * numeric::squared_distance(template_points.row(i), template_points.row(j),
                                            template_points.dim()));
      k.g(i, j) = v;
      k.g(j, i) = v;
    }
  }
  return k;
}

/// Mean squared pairwise distance divided by D.
inline double init_sigma2(const PointSet& data, const PointSet& template_points) {
  require_same_dim(data, template_points, "init_sigma2");
  // Pairs are visited in a canonical (outer, inner) order so the sum does not
  // depend on argument order.
  const auto& a = data.points();
  const auto& b = template_points.points();
  const bool data_first =
      a.size() != b.size()
          ? a.size() < b.size()
          : !std::lexicographical_compare(b.data(), b.data() + b.size(), a.data(),
                                          a.data() + a.size());
  const PointSet& outer = data_first ? data : template_points;
  const PointSet& inner = data_first ? template_points : data;
  double sum = 0.0;
  for (Index i = 0; i < outer.size(); ++i) {
    for (Index j = 0; j < inner.size(); ++j) {
      sum += numeric::squared_distance(outer.row(i), inner.row(j), data.dim());
    }
  }
  return sum / (static_cast<double>(data.dim()) * static_cast<double>(data.size()) *
                static_cast<double>(template_points.size()));
}

/// G * W over the template, as used for T = Y + G W.
inline Coords displace_template(const KernelMatrix& kernel, const PointSet& template_points,
                                const Matrix& w) {
  Coords t = template_points.points();
  t.noalias() += kernel.g * w;
  return t;
}

/// Moves arbitrary query points through the learned field.
inline PointSet apply_displacement(const DisplacementField& field, const PointSet& query) {
  require_same_dim(query, field.template_points, "apply_displacement");
  if (field.w.rows() != field.template_points.size() ||
      field.w.cols() != field.template_points.dim()) {
    throw InputError("displacement coefficients do not match template shape");
  }
  const Matrix k = detail::cross_kernel(query, field.template_points, field.beta_sq);
  Coords out = query.points();
  out.noalias() += k * field.w;
  return PointSet(std::move(out));
}

/// -sum_n log( omega/N + (1-omega)/M sum_m N(x_n; t_m, sigma^2 I) ).
inline double negative_log_likelihood(const PointSet& data, const PointSet& transformed,
                                      double sigma2, double omega) {
  require_same_dim(data, transformed, "negative_log_likelihood");
  if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) throw ParameterError("sigma2 must be > 0");
  if (!(omega >= 0.0 && omega < 1.0)) throw ParameterError("omega must lie in [0, 1)");
  const Index n_data = data.size();
  const Index n_comp = transformed.size();
  const int dim = data.dim();
  const double log_norm = -0.5 * dim * std::log(2.0 * std::numbers::pi * sigma2);
  const double log_mix = std::log1p(-omega) - std::log(static_cast<double>(n_comp)) + log_norm;
  const double log_noise =
      omega > 0.0 ? std::log(omega) - std::log(static_cast<double>(n_data)) : numeric::kNegInf;

  std::vector<double> exponents(static_cast<std::size_t>(n_comp));
  double total = 0.0;
  for (Index n = 0; n < n_data; ++n) {
    for (Index m = 0; m < n_comp; ++m) {
      exponents[static_cast<std::size_t>(m)] =
          -numeric::squared_distance(data.row(n), transformed.row(m), dim) / (2.0 * sigma2);
    }
    total -= numeric::log_add_exp(log_noise, log_mix + numeric::log_sum_exp(exponents));
  }
  return total;
}

/// tr(W^T G W), the motion-coherence penalty without the lambda/2 factor.
inline double coherence_penalty(const KernelMatrix& kernel, const Matrix& w) {
  return (w.transpose() * (kernel.g * w)).trace();
}

}  // namespace cpdreg
