#pragma once

// Extended CPD: sparse correspondence priors (x_n, y_m) with reliability
// alpha enter the M-step as an extra quadratic pull.

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "cpdreg/core.hpp"
#include "cpdreg/cpd.hpp"
#include "cpdreg/em.hpp"
#include "cpdreg/solver.hpp"

namespace cpdreg {

/// Known (data index, template index) pairs, 0-based, kept sorted by
/// (template, data) so every derived sum is independent of input order.
class CorrespondencePriors {
 public:
  using Pair = std::pair<Index, Index>;  // (n, m)

  CorrespondencePriors() = default;

  CorrespondencePriors(std::vector<Pair> pairs, double alpha_sq)
      : pairs_(std::move(pairs)), alpha_sq_(alpha_sq) {
    if (!(alpha_sq_ > 0.0) || !std::isfinite(alpha_sq_)) {
      throw ParameterError("alpha_sq must be a finite positive value");
    }
    for (const auto& [n, m] : pairs_) {
      if (n < 0 || m < 0) throw InputError("correspondence indices must be non-negative");
    }
    std::sort(pairs_.begin(), pairs_.end(), [](const Pair& a, const Pair& b) {
      return a.second != b.second ? a.second < b.second : a.first < b.first;
    });
    const auto dup = std::adjacent_find(pairs_.begin(), pairs_.end());
    if (dup != pairs_.end()) {
      throw InputError("duplicate correspondence pair (" + std::to_string(dup->first + 1) + ", " +
                       std::to_string(dup->second + 1) + ")");
    }
  }

  const std::vector<Pair>& pairs() const noexcept { return pairs_; }
  double alpha_sq() const noexcept { return alpha_sq_; }
  bool empty() const noexcept { return pairs_.empty(); }

  void require_in_range(Index n_data, Index n_template) const {
    for (const auto& [n, m] : pairs_) {
      if (n >= n_data || m >= n_template) {
        throw InputError("correspondence pair (" + std::to_string(n + 1) + ", " +
                         std::to_string(m + 1) + ") out of range for N=" +
                         std::to_string(n_data) + ", M=" + std::to_string(n_template));
      }
    }
  }

  // Row sums of the indicator matrix, Ptilde 1 (length M).
  Vector row_counts(Index n_template) const {
    Vector c = Vector::Zero(n_template);
    for (const auto& pr : pairs_) c(pr.second) += 1.0;
    return c;
  }

  // Ptilde X (M x D), accumulated pair by pair.
  Matrix gathered_data(const PointSet& data, Index n_template) const {
    Matrix out = Matrix::Zero(n_template, data.dim());
    for (const auto& [n, m] : pairs_) out.row(m) += data.points().row(n);
    return out;
  }

  // sum over pairs of |x_n - t_m|^2.
  double squared_misfit(const PointSet& data, const Coords& t) const {
    double s = 0.0;
    for (const auto& [n, m] : pairs_) {
      s += numeric::squared_distance(data.row(n), t.data() + m * t.cols(), data.dim());
    }
    return s;
  }

 private:
  std::vector<Pair> pairs_;
  double alpha_sq_ = 1.0;
};

/// Every (n, m) whose labels agree becomes a prior pair.
inline CorrespondencePriors priors_from_clusters(const ClusterAssignment& data_labels,
                                                 const ClusterAssignment& template_labels,
                                                 double alpha_sq) {
  if (data_labels.n_clusters() != template_labels.n_clusters()) {
    throw InputError("priors_from_clusters: data has " +
                     std::to_string(data_labels.n_clusters()) + " clusters, template has " +
                     std::to_string(template_labels.n_clusters()));
  }
  std::vector<CorrespondencePriors::Pair> pairs;
  for (Index m = 0; m < template_labels.size(); ++m) {
    for (Index n = 0; n < data_labels.size(); ++n) {
      if (data_labels.label(n) == template_labels.label(m)) pairs.emplace_back(n, m);
    }
  }
  return CorrespondencePriors(std::move(pairs), alpha_sq);
}

namespace detail {

class EcpdModel {
 public:
  EcpdModel(const PointSet& data, const PointSet& template_points,
            const CorrespondencePriors& priors, double omega)
      : cpd_(data, omega),
        data_(data),
        priors_(priors),
        counts_(priors.row_counts(template_points.size())),
        gathered_(priors.gathered_data(data, template_points.size())) {}

  Evaluation evaluate(const Coords& t, double sigma2, bool dense) const {
    return cpd_.evaluate(t, sigma2, dense);
  }

  // q += (sigma^2/alpha^2) Ptilde 1, weighted_x += (sigma^2/alpha^2) Ptilde X.
  void augment(Vector& q, Matrix& weighted_x, double sigma2) const {
    if (priors_.empty()) return;
    const double k = sigma2 / priors_.alpha_sq();
    q += k * counts_;
    weighted_x += k * gathered_;
  }

  double prior_energy(const Coords& t) const {
    if (priors_.empty()) return 0.0;
    return priors_.squared_misfit(data_, t) / (2.0 * priors_.alpha_sq());
  }

 private:
  CpdModel cpd_;
  const PointSet& data_;
  const CorrespondencePriors& priors_;
  Vector counts_;
  Matrix gathered_;
};

}  // namespace detail

/// Solves (d(P1) G + s d(Pt1) G + lambda sigma^2 I) W
///        = P X - d(P1) Y + s (Pt X - d(Pt1) Y),  s = sigma^2 / alpha^2.
inline MStepSolution mstep_solve_ecpd(const KernelMatrix& kernel,
                                      const PosteriorMatrix& posterior,
                                      const CorrespondencePriors& priors, const PointSet& data,
                                      const PointSet& template_points, double lambda,
                                      double sigma2) {
  require_same_dim(data, template_points, "mstep_solve_ecpd");
  if (!(lambda > 0.0)) throw ParameterError("lambda must be > 0");
  detail::require_sigma2(sigma2);
  if (posterior.p.rows() != template_points.size() || posterior.p.cols() != data.size() ||
      kernel.size() != template_points.size()) {
    throw InputError("mstep_solve_ecpd: posterior, kernel and point sets disagree in size");
  }
  priors.require_in_range(data.size(), template_points.size());
  detail::SufficientStats s = detail::stats_from(posterior, data);
  detail::EcpdModel(data, template_points, priors, 0.0).augment(s.row_mass, s.weighted_x, sigma2);
  return solve_coherence_system(kernel, s.row_mass, detail::coherence_rhs(s, template_points),
                                lambda * sigma2);
}

inline RegistrationResult register_ecpd(const PointSet& data, const PointSet& template_points,
                                        const CorrespondencePriors& priors,
                                        const RegistrationConfig& config,
                                        const IterationObserver& observer = {}) {
  config.validate();
  require_same_dim(data, template_points, "register_ecpd");
  priors.require_in_range(data.size(), template_points.size());
  return detail::run_em(data, template_points, config,
                        detail::EcpdModel(data, template_points, priors, config.omega), observer);
}

}  // namespace cpdreg
