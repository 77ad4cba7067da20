#pragma once

// Synthetic clustered scenes with known deformations, and a benchmark that
// runs the registration methods over scene ensembles and alpha sweeps.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "json.hpp"

#include "cpdreg/ccpd.hpp"
#include "cpdreg/core.hpp"
#include "cpdreg/cpd.hpp"
#include "cpdreg/dataio.hpp"
#include "cpdreg/ecpd.hpp"
#include "cpdreg/metrics.hpp"

namespace cpdreg {

struct SceneSpec {
  int n_clusters = 4;
  int points_per_cluster = 40;
  std::vector<std::vector<double>> cluster_centers;  // C x D
  double cluster_spread = 1.0;
  double deform_magnitude = 0.02;
  double noise_fraction = 0.0;
  std::vector<std::pair<int, int>> swap_clusters;  // 1-based cluster pairs
  // Every cluster reuses the first cluster's point offsets, so swapped blobs
  // are indistinguishable by geometry alone.
  bool identical_shapes = false;
  std::uint64_t seed = 1;
  // Kernel width of the ground-truth displacement field.
  double beta_sq = 2.0;

  int dim() const { return cluster_centers.empty() ? 0 : static_cast<int>(cluster_centers.front().size()); }

  void validate() const {
    if (n_clusters < 1) throw ParameterError("scene: n_clusters must be >= 1");
    if (points_per_cluster < 1) throw ParameterError("scene: points_per_cluster must be >= 1");
    if (static_cast<int>(cluster_centers.size()) != n_clusters) {
      throw ParameterError("scene: need one center per cluster");
    }
    const int d = dim();
    if (d < 1) throw ParameterError("scene: centers must have at least one coordinate");
    for (const auto& c : cluster_centers) {
      if (static_cast<int>(c.size()) != d) throw ParameterError("scene: ragged cluster centers");
      for (double v : c) {
        if (!std::isfinite(v)) throw ParameterError("scene: non-finite cluster center");
      }
    }
    if (!(cluster_spread > 0.0) || !std::isfinite(cluster_spread)) {
      throw ParameterError("scene: cluster_spread must be > 0");
    }
    if (!(deform_magnitude >= 0.0) || !std::isfinite(deform_magnitude)) {
      throw ParameterError("scene: deform_magnitude must be >= 0");
    }
    if (!(noise_fraction >= 0.0 && noise_fraction < 1.0)) {
      throw ParameterError("scene: noise_fraction must lie in [0, 1)");
    }
    if (!(beta_sq > 0.0)) throw ParameterError("scene: beta_sq must be > 0");
    std::vector<bool> used(static_cast<std::size_t>(n_clusters) + 1, false);
    for (const auto& [a, b] : swap_clusters) {
      if (a < 1 || b < 1 || a > n_clusters || b > n_clusters || a == b) {
        throw ParameterError("scene: invalid swap pair");
      }
      if (used[static_cast<std::size_t>(a)] || used[static_cast<std::size_t>(b)]) {
        throw ParameterError("scene: a cluster appears in more than one swap pair");
      }
      used[static_cast<std::size_t>(a)] = used[static_cast<std::size_t>(b)] = true;
    }
  }
};

struct Scene {
  PointSet template_points;
  ClusterAssignment template_labels;
  // Inliers first, in template order (data[i] is the image of template[i]),
  // then outliers.
  PointSet data;
  ClusterAssignment data_labels;
  std::vector<bool> outlier;
  DisplacementField ground_truth;
  Index n_inliers = 0;

  // Data restricted to inliers, for metrics.
  PointSet inlier_data() const {
    return PointSet(data.points().topRows(n_inliers));
  }
  ClusterAssignment inlier_labels() const {
    std::vector<int> l(data_labels.labels().begin(), data_labels.labels().begin() + n_inliers);
    return ClusterAssignment(std::move(l), data_labels.n_clusters());
  }
};

inline Scene generate_scene(const SceneSpec& spec) {
  spec.validate();
  const int dim = spec.dim();
  const int c_count = spec.n_clusters;
  const Index m = static_cast<Index>(c_count) * spec.points_per_cluster;
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  Coords y(m, dim);
  std::vector<int> labels(static_cast<std::size_t>(m));
  for (int c = 0; c < c_count; ++c) {
    for (int k = 0; k < spec.points_per_cluster; ++k) {
      const Index i = static_cast<Index>(c) * spec.points_per_cluster + k;
      for (int d = 0; d < dim; ++d) {
        const double offset = spec.identical_shapes && c > 0
                                  ? y(k, d) - spec.cluster_centers[0][static_cast<std::size_t>(d)]
                                  : spec.cluster_spread * normal(rng);
        y(i, d) = spec.cluster_centers[static_cast<std::size_t>(c)][static_cast<std::size_t>(d)] + offset;
      }
      labels[static_cast<std::size_t>(i)] = c + 1;
    }
  }

  Matrix w(m, dim);
  for (Index i = 0; i < m; ++i) {
    for (int d = 0; d < dim; ++d) w(i, d) = spec.deform_magnitude * normal(rng);
  }

  Scene scene;
  scene.template_points = PointSet(y);
  scene.template_labels = ClusterAssignment(labels, c_count);
  scene.ground_truth = DisplacementField{w, scene.template_points, spec.beta_sq};
  Coords x = apply_displacement(scene.ground_truth, scene.template_points).points();

  std::vector<int> target(static_cast<std::size_t>(c_count));
  for (int c = 0; c < c_count; ++c) target[static_cast<std::size_t>(c)] = c;
  for (const auto& [a, b] : spec.swap_clusters) std::swap(target[static_cast<std::size_t>(a - 1)], target[static_cast<std::size_t>(b - 1)]);
  for (Index i = 0; i < m; ++i) {
    const int c = labels[static_cast<std::size_t>(i)] - 1;
    const int to = target[static_cast<std::size_t>(c)];
    if (to == c) continue;
    for (int d = 0; d < dim; ++d) {
      x(i, d) += spec.cluster_centers[static_cast<std::size_t>(to)][static_cast<std::size_t>(d)] -
                 spec.cluster_centers[static_cast<std::size_t>(c)][static_cast<std::size_t>(d)];
    }
  }

  const auto n_out = static_cast<Index>(
      std::llround(static_cast<double>(m) * spec.noise_fraction / (1.0 - spec.noise_fraction)));
  std::vector<int> data_labels = labels;
  scene.outlier.assign(static_cast<std::size_t>(m + n_out), false);
  if (n_out > 0) {
    const Eigen::RowVectorXd lo = x.colwise().minCoeff();
    const Eigen::RowVectorXd hi = x.colwise().maxCoeff();
    const Eigen::RowVectorXd mid = 0.5 * (lo + hi);
    const Eigen::RowVectorXd half = 0.6 * (hi - lo);  // extent inflated by 20%
    Coords grown(m + n_out, dim);
    grown.topRows(m) = x;
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::uniform_int_distribution<int> pick(1, c_count);
    for (Index i = m; i < m + n_out; ++i) {
      for (int d = 0; d < dim; ++d) grown(i, d) = mid(d) + half(d) * unit(rng);
      // Outliers still need a label for the cluster-aware solvers.
      data_labels.push_back(pick(rng));
      scene.outlier[static_cast<std::size_t>(i)] = true;
    }
    x = std::move(grown);
  }
  scene.data = PointSet(std::move(x));
  scene.data_labels = ClusterAssignment(std::move(data_labels), c_count);
  scene.n_inliers = m;
  return scene;
}

/// Four blobs on a square in 3-D with clusters 1 and 2 exchanged in the data.
inline SceneSpec swap_scene_spec(std::uint64_t seed, int points_per_cluster = 40) {
  SceneSpec s;
  s.n_clusters = 4;
  s.points_per_cluster = points_per_cluster;
  // Compact blobs: at the default beta/lambda a swap of wider or farther
  // clusters is pushed into the outlier term before any method can move it.
  s.cluster_centers = {{0.0, 0.0, 0.0}, {3.0, 0.0, 0.0}, {0.0, 3.0, 0.0}, {3.0, 3.0, 0.0}};
  s.cluster_spread = 0.3;
  s.deform_magnitude = 0.02;
  s.noise_fraction = 0.0;
  s.swap_clusters = {{1, 2}};
  s.seed = seed;
  return s;
}

enum class Method { kCpd, kEcpd, kCcpd };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::kCpd: return "cpd";
    case Method::kEcpd: return "ecpd";
    case Method::kCcpd: return "ccpd";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "cpd") return Method::kCpd;
  if (s == "ecpd") return Method::kEcpd;
  if (s == "ccpd") return Method::kCcpd;
  throw InputError("unknown method '" + s + "' (expected cpd, ecpd or ccpd)");
}

struct BenchmarkRow {
  std::size_t scene_id = 0;
  Method method = Method::kCpd;
  // Prior reliability alpha (not squared); NaN when the row has no alpha.
  double alpha = std::numeric_limits<double>::quiet_NaN();
  double hausdorff = std::numeric_limits<double>::quiet_NaN();
  double cluster_hausdorff = std::numeric_limits<double>::quiet_NaN();
  // Mean distance of each transformed template point to its ground-truth image.
  double mean_point_error = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;
  double wall_ms = 0.0;
  std::string status = "ok";
};

struct BenchmarkOptions {
  // alpha used for ECPD when the sweep grid is empty.
  double default_alpha = 1e5;
  unsigned jobs = 1;
};

/// Registers one scene with one method and scores it against the inliers.
inline BenchmarkRow run_scene(const Scene& scene, std::size_t scene_id, Method method,
                              const RegistrationConfig& config, double alpha) {
  BenchmarkRow row;
  row.scene_id = scene_id;
  row.method = method;
  row.alpha = alpha;
  const auto start = std::chrono::steady_clock::now();
  try {
    RegistrationResult result;
    switch (method) {
      case Method::kCpd:
        result = register_cpd(scene.data, scene.template_points, config);
        break;
      case Method::kEcpd: {
        const double a = std::isnan(alpha) ? 1e5 : alpha;
        const auto priors = priors_from_clusters(scene.data_labels, scene.template_labels, a * a);
        result = register_ecpd(scene.data, scene.template_points, priors, config);
        break;
      }
      case Method::kCcpd: {
        const auto model = ClusterPriorModel::from_labels(scene.data_labels, scene.template_labels);
        result = register_ccpd(scene.data, scene.template_points, model, config);
        break;
      }
    }
    row.wall_ms = detail::elapsed_ms(start);
    row.iterations = result.iterations;
    const PointSet inliers = scene.inlier_data();
    const MetricReport report = cluster_hausdorff(result.transformed, scene.template_labels, inliers,
                                                  scene.inlier_labels());
    row.hausdorff = report.hausdorff;
    row.cluster_hausdorff = report.cluster_hausdorff;
    double err = 0.0;
    for (Index i = 0; i < scene.n_inliers; ++i) {
      err += std::sqrt(numeric::squared_distance(result.transformed.row(i), inliers.row(i),
                                                 inliers.dim()));
    }
    row.mean_point_error = err / static_cast<double>(scene.n_inliers);
    row.status = result.converged() ? "ok" : "max_iters";
  } catch (const std::exception& e) {
    row.wall_ms = detail::elapsed_ms(start);
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), ',', ';');
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    row.status = "error: " + msg;
  }
  return row;
}

/// Rows ordered by (scene, method, alpha). CPD and CCPD are run once per
/// alpha too, so their invariance under alpha is observable.
inline std::vector<BenchmarkRow> run_benchmark(const std::vector<SceneSpec>& scenes,
                                               const std::vector<Method>& methods,
                                               const RegistrationConfig& config,
                                               const std::vector<double>& alpha_grid,
                                               const BenchmarkOptions& options = {}) {
  if (scenes.empty()) throw InputError("benchmark: no scenes");
  if (methods.empty()) throw InputError("benchmark: no methods");
  config.validate();
  for (double a : alpha_grid) {
    if (!(a > 0.0) || !std::isfinite(a)) throw ParameterError("benchmark: alpha values must be > 0");
  }
  for (const auto& s : scenes) s.validate();

  std::vector<double> alphas = alpha_grid;
  const bool sweep = !alphas.empty();
  if (!sweep) alphas.push_back(std::numeric_limits<double>::quiet_NaN());
  const std::size_t per_scene = methods.size() * alphas.size();
  std::vector<BenchmarkRow> rows(scenes.size() * per_scene);

  auto run_one = [&](std::size_t s) {
    const Scene scene = generate_scene(scenes[s]);
    std::size_t k = s * per_scene;
    for (Method m : methods) {
      for (double a : alphas) {
        const double alpha = (!sweep && m == Method::kEcpd) ? options.default_alpha : a;
        rows[k++] = run_scene(scene, s, m, config, alpha);
      }
    }
  };

  const unsigned jobs = std::max(1u, std::min<unsigned>(options.jobs, static_cast<unsigned>(scenes.size())));
  if (jobs == 1) {
    for (std::size_t s = 0; s < scenes.size(); ++s) run_one(s);
  } else {
    std::vector<std::jthread> workers;
    for (unsigned j = 0; j < jobs; ++j) {
      workers.emplace_back([&, j] {
        for (std::size_t s = j; s < scenes.size(); s += jobs) run_one(s);
      });
    }
  }
  return rows;
}

inline std::string benchmark_csv(const std::vector<BenchmarkRow>& rows, bool include_timing = true) {
  std::string out = "scene_id,method,alpha,hausdorff,cluster_hausdorff,iterations,wall_ms,status\n";
  auto num = [](double v) { return std::isnan(v) ? std::string() : io::format_double(v); };
  for (const auto& r : rows) {
    out += std::to_string(r.scene_id) + ',' + to_string(r.method) + ',' + num(r.alpha) + ',' +
           num(r.hausdorff) + ',' + num(r.cluster_hausdorff) + ',' + std::to_string(r.iterations) +
           ',' + (include_timing ? io::format_double(r.wall_ms) : std::string("0")) + ',' + r.status +
           '\n';
  }
  return out;
}

inline SceneSpec scene_spec_from_json(const nlohmann::json& j, const SceneSpec& base = {}) {
  SceneSpec s = base;
  try {
    if (j.contains("n_clusters")) s.n_clusters = j.at("n_clusters").get<int>();
    if (j.contains("points_per_cluster")) s.points_per_cluster = j.at("points_per_cluster").get<int>();
    if (j.contains("cluster_centers")) {
      s.cluster_centers = j.at("cluster_centers").get<std::vector<std::vector<double>>>();
    }
    if (j.contains("cluster_spread")) s.cluster_spread = j.at("cluster_spread").get<double>();
    if (j.contains("deform_magnitude")) s.deform_magnitude = j.at("deform_magnitude").get<double>();
    if (j.contains("noise_fraction")) s.noise_fraction = j.at("noise_fraction").get<double>();
    if (j.contains("swap_clusters")) {
      s.swap_clusters.clear();
      for (const auto& p : j.at("swap_clusters")) s.swap_clusters.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
    }
    if (j.contains("identical_shapes")) s.identical_shapes = j.at("identical_shapes").get<bool>();
    if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("beta_sq")) s.beta_sq = j.at("beta_sq").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("scene spec: ") + e.what());
  }
  if (s.cluster_centers.empty()) throw InputError("scene spec: cluster_centers is required");
  return s;
}

inline nlohmann::json scene_spec_to_json(const SceneSpec& s) {
  nlohmann::json swaps = nlohmann::json::array();
  for (const auto& [a, b] : s.swap_clusters) swaps.push_back({a, b});
  return {{"n_clusters", s.n_clusters},
          {"points_per_cluster", s.points_per_cluster},
          {"cluster_centers", s.cluster_centers},
          {"cluster_spread", s.cluster_spread},
          {"deform_magnitude", s.deform_magnitude},
          {"noise_fraction", s.noise_fraction},
          {"swap_clusters", swaps},
          {"identical_shapes", s.identical_shapes},
          {"seed", s.seed},
          {"beta_sq", s.beta_sq}};
}

/// Accepts a single spec, an array of specs, {"scenes": [...]}, or
/// {"ensemble": {"count": K, "seed_start": S, "base": {...}}} which expands to
/// K copies of base with seeds S, S+1, ...
inline std::vector<SceneSpec> scene_specs_from_json(const nlohmann::json& j) {
  std::vector<SceneSpec> out;
  if (j.is_array()) {
    for (const auto& e : j) out.push_back(scene_spec_from_json(e));
  } else if (j.is_object() && j.contains("scenes")) {
    for (const auto& e : j.at("scenes")) out.push_back(scene_spec_from_json(e));
  } else if (j.is_object() && j.contains("ensemble")) {
    const auto& e = j.at("ensemble");
    const SceneSpec base = scene_spec_from_json(e.at("base"));
    const int count = e.value("count", 20);
    const std::uint64_t seed_start = e.value("seed_start", std::uint64_t{1});
    if (count < 1) throw InputError("scene spec: ensemble count must be >= 1");
    for (int k = 0; k < count; ++k) {
      SceneSpec s = base;
      s.seed = seed_start + static_cast<std::uint64_t>(k);
      out.push_back(s);
    }
  } else if (j.is_object()) {
    out.push_back(scene_spec_from_json(j));
  } else {
    throw InputError("scene spec: expected an object or an array");
  }
  return out;
}

inline std::vector<SceneSpec> read_scene_specs(const std::filesystem::path& path) {
  try {
    return scene_specs_from_json(nlohmann::json::parse(read_text(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

}  // namespace cpdreg
