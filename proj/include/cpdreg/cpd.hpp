#pragma once

// Non-rigid Coherent Point Drift.

#include <cstddef>
#include <vector>

#include "cpdreg/core.hpp"
#include "cpdreg/em.hpp"
#include "cpdreg/solver.hpp"

namespace cpdreg {

/// Responsibilities p[m][n] of template component m for data point n.
struct PosteriorMatrix {
  Matrix p;  // M x N
  double np = 0.0;
  // Sum over data points of log p(x_n) under the mixture at (T, sigma^2).
  double log_likelihood = 0.0;
  // Number of Gaussian kernel evaluations spent building p.
  std::size_t gaussian_evals = 0;
};

namespace detail {

inline void require_sigma2(double sigma2) {
  if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) {
    throw ParameterError("sigma2 must be a finite positive value");
  }
}

inline void require_omega(double omega) {
  if (!(omega >= 0.0 && omega < 1.0)) throw ParameterError("omega must lie in [0, 1)");
}

inline SufficientStats stats_from(const PosteriorMatrix& post, const PointSet& data) {
  SufficientStats s;
  s.row_mass = post.p.rowwise().sum();
  s.weighted_x.noalias() = post.p * data.points();
  const Vector col_mass = post.p.colwise().sum().transpose();
  for (Index n = 0; n < data.size(); ++n) {
    s.x_term += col_mass(n) * data.points().row(n).squaredNorm();
  }
  s.np = post.np;
  return s;
}

}  // namespace detail

inline PosteriorMatrix estep(const PointSet& data, const PointSet& transformed, double sigma2,
                             double omega) {
  require_same_dim(data, transformed, "estep");
  detail::require_sigma2(sigma2);
  detail::require_omega(omega);
  const Index n_data = data.size();
  const Index n_comp = transformed.size();
  const int dim = data.dim();
  const double log_c = detail::noise_log_constant(sigma2, omega, dim, n_comp, n_data);
  const double log_scale = detail::mixture_log_scale(sigma2, omega, dim, n_comp);

  PosteriorMatrix post;
  post.p.resize(n_comp, n_data);
  auto row_of = [&](Index m) { return transformed.row(m); };
  for (Index n = 0; n < n_data; ++n) {
    const double log_den = detail::posterior_column(data.row(n), n_comp, row_of, dim, sigma2,
                                                    log_c, post.p.col(n).data());
    post.log_likelihood += log_den + log_scale;
  }
  post.np = post.p.sum();
  post.gaussian_evals = static_cast<std::size_t>(n_comp) * static_cast<std::size_t>(n_data);
  return post;
}

/// Solves (d(P1) G + lambda sigma^2 I) W = P X - d(P1) Y.
inline MStepSolution mstep_solve(const KernelMatrix& kernel, const PosteriorMatrix& posterior,
                                 const PointSet& data, const PointSet& template_points,
                                 double lambda, double sigma2) {
  require_same_dim(data, template_points, "mstep_solve");
  if (!(lambda > 0.0)) throw ParameterError("lambda must be > 0");
  detail::require_sigma2(sigma2);
  if (posterior.p.rows() != template_points.size() || posterior.p.cols() != data.size() ||
      kernel.size() != template_points.size()) {
    throw InputError("mstep_solve: posterior, kernel and point sets disagree in size");
  }
  const detail::SufficientStats s = detail::stats_from(posterior, data);
  return solve_coherence_system(kernel, s.row_mass, detail::coherence_rhs(s, template_points),
                                lambda * sigma2);
}

/// sigma^2 = (tr(X^T d(P^T 1) X) - 2 tr((P X)^T T) + tr(T^T d(P1) T)) / (N_p D).
inline double update_sigma2_cpd(const PointSet& data, const PointSet& transformed,
                                const PosteriorMatrix& posterior) {
  require_same_dim(data, transformed, "update_sigma2_cpd");
  return detail::sigma2_from_stats(detail::stats_from(posterior, data), transformed.points(),
                                   data.dim());
}

namespace detail {

class CpdModel {
 public:
  CpdModel(const PointSet& data, double omega) : data_(data), omega_(omega) {}

  Evaluation evaluate(const Coords& t, double sigma2, bool dense) const {
    PosteriorMatrix post = estep(data_, PointSet(t), sigma2, omega_);
    Evaluation e;
    e.stats = stats_from(post, data_);
    e.log_likelihood = post.log_likelihood;
    if (dense) e.dense_posterior = std::move(post.p);
    return e;
  }

  void augment(Vector&, Matrix&, double) const {}
  double prior_energy(const Coords&) const { return 0.0; }

 private:
  const PointSet& data_;
  double omega_;
};

}  // namespace detail

inline RegistrationResult register_cpd(const PointSet& data, const PointSet& template_points,
                                       const RegistrationConfig& config,
                                       const IterationObserver& observer = {}) {
  config.validate();
  return detail::run_em(data, template_points, config, detail::CpdModel(data, config.omega),
                        observer);
}

}  // namespace cpdreg
