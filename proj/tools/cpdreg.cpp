// cpdreg: register, evaluate, synthesize and benchmark point sets.
//
// Exit status: 0 success or convergence, 2 iteration limit reached without
// meeting the tolerance, 1 input, parse, I/O or numerical error.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "cpdreg/cpdreg.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitNotConverged = 2;

// alpha used for label-built ECPD priors when --alpha-sq is absent.
constexpr double kDefaultAlpha = 1e5;

struct RegisterArgs {
  std::string method = "cpd";
  std::string data;
  std::string tmpl;
  std::string priors;
  double beta_sq = 2.0;
  double lambda = 2.0;
  double omega = 0.1;
  std::optional<double> alpha_sq;
  int max_iters = 150;
  double tol = 1e-5;
  bool normalize = false;
  std::string out;
};

struct EvalArgs {
  std::string a;
  std::string b;
  bool clustered = false;
};

struct SynthArgs {
  std::string spec;
  std::string out;
};

struct BenchArgs {
  std::string specs;
  std::vector<std::string> methods{"cpd", "ecpd", "ccpd"};
  std::vector<double> alphas;
  std::string out;
  double beta_sq = 2.0;
  double lambda = 2.0;
  double omega = 0.1;
  int max_iters = 150;
  double tol = 1e-5;
  unsigned jobs = 1;
  bool no_timing = false;
};

// Joint zero-mean, unit-RMS scaling of both clouds.
struct Normalization {
  Eigen::RowVectorXd mean;
  double scale = 1.0;

  static Normalization fit(const cpdreg::PointSet& a, const cpdreg::PointSet& b) {
    Normalization n;
    const double count = static_cast<double>(a.size() + b.size());
    n.mean = (a.points().colwise().sum() + b.points().colwise().sum()) / count;
    double sq = 0.0;
    for (const auto* p : {&a, &b}) {
      sq += (p->points().rowwise() - n.mean).rowwise().squaredNorm().sum();
    }
    const double rms = std::sqrt(sq / count);
    n.scale = rms > 0.0 ? rms : 1.0;
    return n;
  }

  cpdreg::PointSet forward(const cpdreg::PointSet& p) const {
    cpdreg::Coords c = (p.points().rowwise() - mean) / scale;
    return cpdreg::PointSet(std::move(c));
  }

  // Maps a result computed on normalized clouds back to input coordinates.
  void invert(cpdreg::RegistrationResult& r, const cpdreg::PointSet& original_template) const {
    cpdreg::Coords t = (r.transformed.points() * scale).rowwise() + mean;
    r.transformed = cpdreg::PointSet(std::move(t));
    r.field.w *= scale;
    r.field.template_points = original_template;
    r.field.beta_sq *= scale * scale;
  }
};

json config_json(const cpdreg::RegistrationConfig& c) {
  return {{"beta_sq", c.beta_sq},   {"lambda", c.lambda},   {"omega", c.omega},
          {"max_iters", c.max_iters}, {"rel_tol", c.rel_tol}, {"sigma2_floor", c.sigma2_floor}};
}

cpdreg::LabeledCloud load(const std::string& path) { return cpdreg::read_point_set(path); }

int cmd_register(const RegisterArgs& a) {
  cpdreg::RegistrationConfig config;
  config.beta_sq = a.beta_sq;
  config.lambda = a.lambda;
  config.omega = a.omega;
  config.max_iters = a.max_iters;
  config.rel_tol = a.tol;
  const cpdreg::Method method = cpdreg::parse_method(a.method);

  json resolved = {{"command", "register"}, {"method", a.method}, {"data", a.data},
                   {"template", a.tmpl},     {"normalize", a.normalize}, {"out", a.out},
                   {"config", config_json(config)}};
  if (!a.priors.empty()) resolved["priors"] = a.priors;
  if (a.alpha_sq) resolved["alpha_sq"] = *a.alpha_sq;
  std::cerr << resolved.dump() << '\n';
  config.validate();

  const auto data = load(a.data);
  const auto tmpl = load(a.tmpl);
  cpdreg::require_same_dim(data.points, tmpl.points, "register");

  cpdreg::PointSet x = data.points;
  cpdreg::PointSet y = tmpl.points;
  std::optional<Normalization> norm;
  if (a.normalize) {
    norm = Normalization::fit(x, y);
    x = norm->forward(x);
    y = norm->forward(y);
  }

  cpdreg::RegistrationResult result;
  switch (method) {
    case cpdreg::Method::kCpd:
      result = cpdreg::register_cpd(x, y, config);
      break;
    case cpdreg::Method::kEcpd: {
      cpdreg::CorrespondencePriors priors;
      if (!a.priors.empty()) {
        priors = cpdreg::read_priors(a.priors, x.size(), y.size());
        if (a.alpha_sq) priors = cpdreg::CorrespondencePriors(priors.pairs(), *a.alpha_sq);
      } else if (data.labels && tmpl.labels) {
        const auto data_labels = cpdreg::align_labels(*tmpl.labels, *data.labels);
        priors = cpdreg::priors_from_clusters(data_labels, *tmpl.labels,
                                              a.alpha_sq.value_or(kDefaultAlpha * kDefaultAlpha));
      } else {
        throw cpdreg::InputError("ecpd needs --priors or cluster labels on both clouds");
      }
      if (norm) {
        // alpha is a length; keep the prior weight sigma^2/alpha^2 scale free.
        priors = cpdreg::CorrespondencePriors(priors.pairs(),
                                              priors.alpha_sq() / (norm->scale * norm->scale));
      }
      result = cpdreg::register_ecpd(x, y, priors, config);
      break;
    }
    case cpdreg::Method::kCcpd: {
      if (!data.labels || !tmpl.labels) {
        throw cpdreg::InputError("ccpd needs cluster labels on both clouds");
      }
      const auto data_labels = cpdreg::align_labels(*tmpl.labels, *data.labels);
      const auto model = cpdreg::ClusterPriorModel::from_labels(data_labels, *tmpl.labels);
      result = cpdreg::register_ccpd(x, y, model, config);
      break;
    }
  }
  if (norm) norm->invert(result, tmpl.points);

  if (result.trace.empty()) {
    throw cpdreg::InputError("initial sigma2 is below the floor; the clouds already coincide");
  }
  cpdreg::write_result(result, a.out, tmpl.labels ? &*tmpl.labels : nullptr);
  std::cerr << json{{"termination", cpdreg::to_string(result.termination)},
                    {"iterations", result.iterations},
                    {"sigma2_final", result.sigma2_final}}
                   .dump()
            << '\n';
  return result.converged() ? kExitOk : kExitNotConverged;
}

int cmd_eval(const EvalArgs& e) {
  std::cerr << json{{"command", "eval"}, {"a", e.a}, {"b", e.b}, {"clustered", e.clustered}}.dump()
            << '\n';
  const auto a = load(e.a);
  const auto b = load(e.b);
  json out;
  if (e.clustered) {
    if (!a.labels || !b.labels) throw cpdreg::InputError("--clustered needs labels in both files");
    const auto b_labels = cpdreg::align_labels(*a.labels, *b.labels);
    const auto report = cpdreg::cluster_hausdorff(a.points, *a.labels, b.points, b_labels);
    out = {{"hausdorff", report.hausdorff},
           {"cluster_hausdorff", report.cluster_hausdorff},
           {"per_cluster", report.per_cluster}};
  } else {
    out = {{"hausdorff", cpdreg::hausdorff(a.points, b.points)}};
  }
  std::cout << out.dump() << '\n';
  return kExitOk;
}

void write_scene(const cpdreg::Scene& scene, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw cpdreg::IoError("cannot create " + dir.string() + ": " + ec.message());
  cpdreg::write_point_set(dir / "template.csv", scene.template_points, &scene.template_labels);
  cpdreg::write_point_set(dir / "data.csv", scene.data, &scene.data_labels);
  cpdreg::write_matrix_csv(dir / "ground_truth_W.csv", scene.ground_truth.w);
}

int cmd_synth(const SynthArgs& s) {
  std::cerr << json{{"command", "synth"}, {"spec", s.spec}, {"out", s.out}}.dump() << '\n';
  const auto specs = cpdreg::read_scene_specs(s.spec);
  if (specs.size() == 1) {
    write_scene(cpdreg::generate_scene(specs.front()), s.out);
    return kExitOk;
  }
  for (std::size_t k = 0; k < specs.size(); ++k) {
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%03zu", k);
    write_scene(cpdreg::generate_scene(specs[k]), fs::path(s.out) / name);
  }
  return kExitOk;
}

int cmd_bench(const BenchArgs& b) {
  cpdreg::RegistrationConfig config;
  config.beta_sq = b.beta_sq;
  config.lambda = b.lambda;
  config.omega = b.omega;
  config.max_iters = b.max_iters;
  config.rel_tol = b.tol;
  std::vector<cpdreg::Method> methods;
  for (const auto& m : b.methods) methods.push_back(cpdreg::parse_method(m));
  std::cerr << json{{"command", "bench"},     {"specs", b.specs},   {"methods", b.methods},
                    {"alphas", b.alphas},     {"out", b.out},       {"jobs", b.jobs},
                    {"timing", !b.no_timing}, {"config", config_json(config)}}
                   .dump()
            << '\n';
  const auto specs = cpdreg::read_scene_specs(b.specs);
  cpdreg::BenchmarkOptions options;
  options.jobs = b.jobs;
  const auto rows = cpdreg::run_benchmark(specs, methods, config, b.alphas, options);
  const std::string csv = cpdreg::benchmark_csv(rows, !b.no_timing);
  if (b.out.empty() || b.out == "-") {
    std::cout << csv;
  } else {
    auto out = cpdreg::io::open_for_write(b.out);
    out << csv;
    cpdreg::io::finish_write(out, b.out);
  }
  bool error = false;
  bool capped = false;
  for (const auto& r : rows) {
    if (r.status == "max_iters") capped = true;
    else if (r.status != "ok") error = true;
  }
  return error ? kExitError : capped ? kExitNotConverged : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Non-rigid point set registration (CPD, ECPD, cluster CPD)"};
  app.require_subcommand(1);

  RegisterArgs reg;
  auto* r = app.add_subcommand("register", "Register a template onto data");
  r->add_option("--method", reg.method, "cpd, ecpd or ccpd")
      ->check(CLI::IsMember({"cpd", "ecpd", "ccpd"}));
  r->add_option("--data", reg.data, "Fixed point set (CSV or PLY)")->required();
  r->add_option("--template", reg.tmpl, "Moving point set (CSV or PLY)")->required();
  r->add_option("--priors", reg.priors, "Correspondence prior file for ecpd");
  r->add_option("--beta-sq", reg.beta_sq, "Kernel width beta^2");
  r->add_option("--lambda", reg.lambda, "Coherence weight lambda");
  r->add_option("--omega", reg.omega, "Outlier fraction in [0,1)");
  r->add_option("--alpha-sq", reg.alpha_sq, "Prior reliability alpha^2 for ecpd");
  r->add_option("--max-iters", reg.max_iters, "Iteration limit");
  r->add_option("--tol", reg.tol, "Relative objective tolerance");
  r->add_flag("--normalize", reg.normalize, "Joint zero-mean, unit-RMS scaling");
  r->add_option("--out", reg.out, "Output directory")->required();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Hausdorff metrics between two point sets");
  e->add_option("--a", ev.a, "First point set")->required();
  e->add_option("--b", ev.b, "Second point set")->required();
  e->add_flag("--clustered", ev.clustered, "Also report the per-cluster Hausdorff mean");

  SynthArgs sy;
  auto* s = app.add_subcommand("synth", "Generate a synthetic scene");
  s->add_option("--spec", sy.spec, "Scene spec JSON")->required();
  s->add_option("--out", sy.out, "Output directory")->required();

  BenchArgs be;
  auto* b = app.add_subcommand("bench", "Run methods over a scene ensemble");
  b->add_option("--specs", be.specs, "Scene spec JSON")->required();
  b->add_option("--methods", be.methods, "Comma-separated methods")->delimiter(',');
  b->add_option("--alphas", be.alphas, "Comma-separated alpha grid")->delimiter(',');
  b->add_option("--out", be.out, "CSV output path ('-' for stdout)");
  b->add_option("--beta-sq", be.beta_sq, "Kernel width beta^2");
  b->add_option("--lambda", be.lambda, "Coherence weight lambda");
  b->add_option("--omega", be.omega, "Outlier fraction in [0,1)");
  b->add_option("--max-iters", be.max_iters, "Iteration limit");
  b->add_option("--tol", be.tol, "Relative objective tolerance");
  b->add_option("--jobs", be.jobs, "Scenes run concurrently");
  b->add_flag("--no-timing", be.no_timing, "Write wall_ms as 0 for byte-stable output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kExitError;
  }

  try {
    if (r->parsed()) return cmd_register(reg);
    if (e->parsed()) return cmd_eval(ev);
    if (s->parsed()) return cmd_synth(sy);
    if (b->parsed()) return cmd_bench(be);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return kExitError;
  }
  return kExitError;
}
