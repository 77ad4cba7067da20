#pragma once

// Cluster Coherent Point Drift.
//
// Points carry hard cluster labels with known cluster correspondence between
// the data and the template. The pair prior P(c | x_n, m) is the indicator
// I(x_n in c) I(y_m in c), so responsibilities live in one block per cluster
// and pairs that share no cluster are structural zeros. The M-step blends the
// per-cluster systems with the cluster weights P(c):
//
//   (sum_c P(c) d(Pbar(c) 1) G + lambda sigma^2 I) W
//       = sum_c P(c) (Pbar(c) X - d(Pbar(c) 1) Y)

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "cpdreg/core.hpp"
#include "cpdreg/cpd.hpp"
#include "cpdreg/em.hpp"
#include "cpdreg/solver.hpp"

namespace cpdreg {

enum class ClusterWeighting {
  kDataFraction,  // P(c) = (#data points labelled c) / N
  kUniform,       // P(c) = 1 / C
};

class ClusterPriorModel {
 public:
  ClusterPriorModel(ClusterAssignment data_labels, ClusterAssignment template_labels,
                    std::vector<double> weights)
      : data_labels_(std::move(data_labels)),
        template_labels_(std::move(template_labels)),
        weights_(std::move(weights)) {
    const int c_data = data_labels_.n_clusters();
    const int c_tmpl = template_labels_.n_clusters();
    if (c_data > c_tmpl) {
      throw DegenerateClusterError("data cluster has no template members", c_tmpl + 1);
    }
    if (c_data != c_tmpl) {
      throw InputError("template declares " + std::to_string(c_tmpl) +
                       " clusters but data declares " + std::to_string(c_data));
    }
    if (static_cast<int>(weights_.size()) != c_data) {
      throw InputError("cluster weight count does not match cluster count");
    }
    double total = 0.0;
    for (double w : weights_) {
      if (!(w >= 0.0) || !std::isfinite(w)) throw ParameterError("cluster weights must be >= 0");
      total += w;
    }
    if (std::abs(total - 1.0) > 1e-12) throw ParameterError("cluster weights must sum to 1");
    for (int c = 1; c <= c_data; ++c) {
      data_members_.push_back(data_labels_.members(c));
      template_members_.push_back(template_labels_.members(c));
    }
  }

  static ClusterPriorModel from_labels(ClusterAssignment data_labels,
                                       ClusterAssignment template_labels,
                                       ClusterWeighting weighting = ClusterWeighting::kDataFraction) {
    const int c_count = data_labels.n_clusters();
    std::vector<double> weights(static_cast<std::size_t>(c_count), 0.0);
    if (weighting == ClusterWeighting::kUniform) {
      for (double& w : weights) w = 1.0 / c_count;
    } else {
      for (int l : data_labels.labels()) weights[static_cast<std::size_t>(l - 1)] += 1.0;
      for (double& w : weights) w /= static_cast<double>(data_labels.size());
    }
    return ClusterPriorModel(std::move(data_labels), std::move(template_labels),
                             std::move(weights));
  }

  int n_clusters() const noexcept { return data_labels_.n_clusters(); }
  const ClusterAssignment& data_labels() const noexcept { return data_labels_; }
  const ClusterAssignment& template_labels() const noexcept { return template_labels_; }
  const std::vector<double>& weights() const noexcept { return weights_; }
  double weight(int c) const { return weights_[static_cast<std::size_t>(c - 1)]; }
  const std::vector<Index>& data_members(int c) const {
    return data_members_[static_cast<std::size_t>(c - 1)];
  }
  const std::vector<Index>& template_members(int c) const {
    return template_members_[static_cast<std::size_t>(c - 1)];
  }

  void require_matches(const PointSet& data, const PointSet& template_points) const {
    data_labels_.require_matches(data, "cluster prior (data)");
    template_labels_.require_matches(template_points, "cluster prior (template)");
  }

 private:
  ClusterAssignment data_labels_;
  ClusterAssignment template_labels_;
  std::vector<double> weights_;
  std::vector<std::vector<Index>> data_members_;
  std::vector<std::vector<Index>> template_members_;
};

/// Block-sparse responsibilities P(m | x_n, c), one block per cluster.
struct ClusterPosteriors {
  struct Block {
    int cluster = 0;
    const std::vector<Index>* data_index = nullptr;
    const std::vector<Index>* template_index = nullptr;
    Matrix p;  // |template members| x |data members|
  };

  std::vector<Block> blocks;
  // sum_c P(c) sum_nm Pbar(c)_mn
  double np_bar = 0.0;
  // sum_c P(c) sum_{n in c} log p_c(x_n)
  double log_likelihood = 0.0;
  std::size_t gaussian_evals = 0;

  Matrix dense(Index n_template, Index n_data) const {
    Matrix out = Matrix::Zero(n_template, n_data);
    for (const Block& b : blocks) {
      for (std::size_t j = 0; j < b.data_index->size(); ++j) {
        for (std::size_t i = 0; i < b.template_index->size(); ++i) {
          out((*b.template_index)[i], (*b.data_index)[j]) =
              b.p(static_cast<Index>(i), static_cast<Index>(j));
        }
      }
    }
    return out;
  }
};

/// Per-cluster E-step. Each cluster is a CPD mixture over its own template
/// members with the outlier constant scaled by that cluster's sizes. The
/// blocks reference index lists owned by `prior_model`.
inline ClusterPosteriors estep_ccpd(const PointSet& data, const PointSet& transformed,
                                    double sigma2, double omega,
                                    const ClusterPriorModel& prior_model) {
  require_same_dim(data, transformed, "estep_ccpd");
  detail::require_sigma2(sigma2);
  detail::require_omega(omega);
  prior_model.require_matches(data, transformed);
  const int dim = data.dim();

  ClusterPosteriors out;
  out.blocks.reserve(static_cast<std::size_t>(prior_model.n_clusters()));
  for (int c = 1; c <= prior_model.n_clusters(); ++c) {
    const auto& di = prior_model.data_members(c);
    const auto& ti = prior_model.template_members(c);
    const auto n_c = static_cast<Index>(di.size());
    const auto m_c = static_cast<Index>(ti.size());
    if (m_c == 0) throw DegenerateClusterError("data cluster has no template members", c);

    ClusterPosteriors::Block block{c, &di, &ti, Matrix(m_c, n_c)};
    const double log_c = detail::noise_log_constant(sigma2, omega, dim, m_c, n_c);
    const double log_scale = detail::mixture_log_scale(sigma2, omega, dim, m_c);
    auto row_of = [&](Index k) { return transformed.row(ti[static_cast<std::size_t>(k)]); };
    double cluster_ll = 0.0;
    for (Index j = 0; j < n_c; ++j) {
      const double log_den =
          detail::posterior_column(data.row(di[static_cast<std::size_t>(j)]), m_c, row_of, dim,
                                   sigma2, log_c, block.p.col(j).data());
      cluster_ll += log_den + log_scale;
    }
    const double weight = prior_model.weight(c);
    out.np_bar += weight * block.p.sum();
    out.log_likelihood += weight * cluster_ll;
    out.gaussian_evals += static_cast<std::size_t>(m_c) * static_cast<std::size_t>(n_c);
    out.blocks.push_back(std::move(block));
  }
  return out;
}

/// Weighted negative log-likelihood of the two-level mixture,
/// -sum_c P(c) sum_{n in c} log p_c(x_n). Equals negative_log_likelihood for C = 1.
inline double cluster_negative_log_likelihood(const PointSet& data, const PointSet& transformed,
                                              double sigma2, double omega,
                                              const ClusterPriorModel& prior_model) {
  return -estep_ccpd(data, transformed, sigma2, omega, prior_model).log_likelihood;
}

namespace detail {

inline SufficientStats stats_from(const ClusterPosteriors& post, const ClusterPriorModel& model,
                                  const PointSet& data, Index n_template) {
  const int dim = data.dim();
  SufficientStats s;
  s.row_mass = Vector::Zero(n_template);
  s.weighted_x = Matrix::Zero(n_template, dim);
  for (const auto& b : post.blocks) {
    const double weight = model.weight(b.cluster);
    const auto& di = *b.data_index;
    const auto& ti = *b.template_index;
    Coords xc(static_cast<Index>(di.size()), dim);
    for (std::size_t j = 0; j < di.size(); ++j) xc.row(static_cast<Index>(j)) = data.points().row(di[j]);
    const Vector rows = b.p.rowwise().sum();
    const Vector cols = b.p.colwise().sum().transpose();
    const Matrix px = b.p * xc;
    for (std::size_t i = 0; i < ti.size(); ++i) {
      s.row_mass(ti[i]) += weight * rows(static_cast<Index>(i));
      s.weighted_x.row(ti[i]) += weight * px.row(static_cast<Index>(i));
    }
    double x_term = 0.0;
    for (std::size_t j = 0; j < di.size(); ++j) {
      x_term += cols(static_cast<Index>(j)) * xc.row(static_cast<Index>(j)).squaredNorm();
    }
    s.x_term += weight * x_term;
  }
  s.np = post.np_bar;
  return s;
}

class CcpdModel {
 public:
  CcpdModel(const PointSet& data, const ClusterPriorModel& prior_model, Index n_template,
            double omega)
      : data_(data), prior_model_(prior_model), n_template_(n_template), omega_(omega) {}

  Evaluation evaluate(const Coords& t, double sigma2, bool dense) const {
    const ClusterPosteriors post = estep_ccpd(data_, PointSet(t), sigma2, omega_, prior_model_);
    Evaluation e;
    e.stats = stats_from(post, prior_model_, data_, n_template_);
    e.log_likelihood = post.log_likelihood;
    if (dense) e.dense_posterior = post.dense(n_template_, data_.size());
    return e;
  }

  void augment(Vector&, Matrix&, double) const {}
  double prior_energy(const Coords&) const { return 0.0; }

 private:
  const PointSet& data_;
  const ClusterPriorModel& prior_model_;
  Index n_template_;
  double omega_;
};

}  // namespace detail

inline MStepSolution mstep_solve_ccpd(const KernelMatrix& kernel,
                                      const ClusterPosteriors& posteriors,
                                      const ClusterPriorModel& prior_model, const PointSet& data,
                                      const PointSet& template_points, double lambda,
                                      double sigma2) {
  require_same_dim(data, template_points, "mstep_solve_ccpd");
  if (!(lambda > 0.0)) throw ParameterError("lambda must be > 0");
  detail::require_sigma2(sigma2);
  prior_model.require_matches(data, template_points);
  if (kernel.size() != template_points.size()) {
    throw InputError("mstep_solve_ccpd: kernel and template disagree in size");
  }
  const detail::SufficientStats s =
      detail::stats_from(posteriors, prior_model, data, template_points.size());
  return solve_coherence_system(kernel, s.row_mass, detail::coherence_rhs(s, template_points),
                                lambda * sigma2);
}

/// sigma^2 = (tr(X^T (sum_c P(c) d(Pbar(c)^T 1)) X) - 2 tr(((sum_c P(c) Pbar(c)) X)^T T)
///            + tr(T^T d(sum_c P(c) Pbar(c) 1) T)) / (Nbar_p D),   T = Y + G W.
inline double update_sigma2_ccpd(const PointSet& data, const PointSet& template_points,
                                 const KernelMatrix& kernel, const Matrix& w,
                                 const ClusterPosteriors& posteriors,
                                 const ClusterPriorModel& prior_model) {
  require_same_dim(data, template_points, "update_sigma2_ccpd");
  prior_model.require_matches(data, template_points);
  const Coords t = displace_template(kernel, template_points, w);
  return detail::sigma2_from_stats(
      detail::stats_from(posteriors, prior_model, data, template_points.size()), t, data.dim());
}

inline RegistrationResult register_ccpd(const PointSet& data, const PointSet& template_points,
                                        const ClusterPriorModel& prior_model,
                                        const RegistrationConfig& config,
                                        const IterationObserver& observer = {}) {
  config.validate();
  require_same_dim(data, template_points, "register_ccpd");
  prior_model.require_matches(data, template_points);
  return detail::run_em(
      data, template_points, config,
      detail::CcpdModel(data, prior_model, template_points.size(), config.omega), observer);
}

}  // namespace cpdreg
