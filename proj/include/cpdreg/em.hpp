#pragma once

// EM loop shared by CPD, ECPD and cluster CPD. Each method supplies a model
// that turns (T, sigma^2) into posterior sufficient statistics; the loop owns
// the M-step, the sigma^2 update, the objective trace and termination.

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "cpdreg/core.hpp"
#include "cpdreg/solver.hpp"

namespace cpdreg {

/// Per-iteration snapshot handed to an observer after the M-step and the
/// sigma^2 update. `posterior` is the dense M x N matrix the M-step used.
struct IterationState {
  int iteration;
  const Matrix& posterior;
  const Matrix& w;
  const Coords& transformed;
  double sigma2;
};

using IterationObserver = std::function<void(const IterationState&)>;

namespace detail {

// Weighted posterior statistics: q = sum_c P(c) Pbar(c) 1,
// weighted_x = sum_c P(c) Pbar(c) X, x_term = sum_c P(c) sum_n (Pbar(c)^T 1)_n |x_n|^2.
struct SufficientStats {
  Vector row_mass;
  Matrix weighted_x;
  double x_term = 0.0;
  double np = 0.0;
};

struct Evaluation {
  SufficientStats stats;
  // Weighted log-likelihood of the data under the current mixture.
  double log_likelihood = 0.0;
  Matrix dense_posterior;
};

// log of the outlier constant (2 pi sigma^2)^(D/2) omega/(1-omega) M/N.
inline double noise_log_constant(double sigma2, double omega, int dim, Index n_comp,
                                 Index n_data) {
  if (omega <= 0.0) return numeric::kNegInf;
  return 0.5 * dim * std::log(2.0 * std::numbers::pi * sigma2) + std::log(omega) -
         std::log1p(-omega) + std::log(static_cast<double>(n_comp)) -
         std::log(static_cast<double>(n_data));
}

// log of the factor relating the shifted denominator to the mixture density:
// p(x) = (1-omega)/M (2 pi sigma^2)^(-D/2) (sum_m exp(.) + c).
inline double mixture_log_scale(double sigma2, double omega, int dim, Index n_comp) {
  return std::log1p(-omega) - std::log(static_cast<double>(n_comp)) -
         0.5 * dim * std::log(2.0 * std::numbers::pi * sigma2);
}

// Responsibilities of one data point against `count` components selected by
// row_of(k). Exponents are shifted by their maximum before exponentiation and
// the noise constant joins in the log domain, so no entry can become NaN.
// Returns log(sum_m exp(-d_m / 2 sigma^2) + c).
template <class RowOf>
double posterior_column(const double* x, Index count, RowOf&& row_of, int dim, double sigma2,
                        double log_c, double* out) {
  const double inv = 1.0 / (2.0 * sigma2);
  double top = numeric::kNegInf;
  for (Index k = 0; k < count; ++k) {
    out[k] = -numeric::squared_distance(x, row_of(k), dim) * inv;
    if (out[k] > top) top = out[k];
  }
  double sum = 0.0;
  for (Index k = 0; k < count; ++k) sum += std::exp(out[k] - top);
  const double log_den = numeric::log_add_exp(top + std::log(sum), log_c);
  for (Index k = 0; k < count; ++k) out[k] = std::exp(out[k] - log_den);
  return log_den;
}

// Weighted squared residual sum_mn p_mn |x_n - t_m|^2 in trace form.
inline double weighted_residual(const SufficientStats& s, const Coords& t) {
  double cross = 0.0;
  double t_term = 0.0;
  for (Index m = 0; m < t.rows(); ++m) {
    double sq = 0.0;
    for (Index d = 0; d < t.cols(); ++d) {
      cross += s.weighted_x(m, d) * t(m, d);
      sq += t(m, d) * t(m, d);
    }
    t_term += s.row_mass(m) * sq;
  }
  return s.x_term - 2.0 * cross + t_term;
}

inline double sigma2_from_stats(const SufficientStats& s, const Coords& t, int dim) {
  if (!(s.np > 0.0)) {
    throw DegeneratePosteriorError("posterior mass N_p is zero; sigma2 cannot be updated");
  }
  return std::max(0.0, weighted_residual(s, t) / (s.np * dim));
}

inline Matrix coherence_rhs(const SufficientStats& s, const PointSet& template_points) {
  Matrix rhs = s.weighted_x;
  rhs.noalias() -= s.row_mass.asDiagonal() * template_points.points();
  return rhs;
}

inline double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since)
      .count();
}

// Model interface:
//   Evaluation evaluate(const Coords& t, double sigma2, bool dense) const;
//   void augment(Vector& q, Matrix& weighted_x, double sigma2) const;
//   double prior_energy(const Coords& t) const;
template <class Model>
RegistrationResult run_em(const PointSet& data, const PointSet& template_points,
                          const RegistrationConfig& config, const Model& model,
                          const IterationObserver& observer) {
  config.validate();
  require_same_dim(data, template_points, "registration");
  const int dim = data.dim();
  const Index n_comp = template_points.size();

  const KernelMatrix kernel = gaussian_kernel(template_points, config.beta_sq);
  RegistrationResult result;
  result.field = DisplacementField{Matrix::Zero(n_comp, dim), template_points, config.beta_sq};
  Coords t = template_points.points();
  double sigma2 = init_sigma2(data, template_points);

  if (sigma2 < config.sigma2_floor) {
    result.transformed = PointSet(t);
    result.sigma2_final = sigma2;
    result.termination = Termination::kSigmaFloor;
    return result;
  }

  Evaluation eval = model.evaluate(t, sigma2, static_cast<bool>(observer));
  double objective = -eval.log_likelihood + model.prior_energy(t);
  Matrix& w = result.field.w;

  for (int it = 1; it <= config.max_iters; ++it) {
    const auto start = std::chrono::steady_clock::now();
    const SufficientStats& stats = eval.stats;

    Vector q = stats.row_mass;
    Matrix wx = stats.weighted_x;
    model.augment(q, wx, sigma2);
    Matrix rhs = wx;
    rhs.noalias() -= q.asDiagonal() * template_points.points();
    w = solve_coherence_system(kernel, q, rhs, config.lambda * sigma2, it).w;
    t = displace_template(kernel, template_points, w);

    const double residual = weighted_residual(stats, t);
    double next_sigma2 = sigma2_from_stats(stats, t, dim);
    bool floored = false;
    if (next_sigma2 < config.sigma2_floor) {
      next_sigma2 = config.sigma2_floor;
      floored = true;
    }
    const double penalty = 0.5 * config.lambda * coherence_penalty(kernel, w);
    const double prior = model.prior_energy(t);
    const double q_value = residual / (2.0 * next_sigma2) +
                           0.5 * stats.np * dim * std::log(next_sigma2) + penalty + prior;

    if (observer) observer(IterationState{it, eval.dense_posterior, w, t, next_sigma2});

    sigma2 = next_sigma2;
    eval = model.evaluate(t, sigma2, static_cast<bool>(observer));
    const double next_objective = -eval.log_likelihood + penalty + prior;
    result.trace.push_back(TraceRecord{it, sigma2, next_objective, q_value, elapsed_ms(start)});
    result.iterations = it;

    if (floored) {
      result.termination = Termination::kSigmaFloor;
      break;
    }
    const double change = std::abs(next_objective - objective);
    const double scale = std::abs(objective);
    objective = next_objective;
    if ((scale > 0.0 ? change / scale : change) < config.rel_tol) {
      result.termination = Termination::kConverged;
      break;
    }
  }

  result.transformed = PointSet(std::move(t));
  result.sigma2_final = sigma2;
  return result;
}

}  // namespace detail
}  // namespace cpdreg
