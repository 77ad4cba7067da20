#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "support.hpp"

using namespace cpdreg;
using namespace testing_support;

TEST(CorrespondencePriors, Validation) {
  EXPECT_THROW(CorrespondencePriors({{0, 0}}, 0.0), ParameterError);
  EXPECT_THROW(CorrespondencePriors({{0, 0}}, INFINITY), ParameterError);
  EXPECT_THROW(CorrespondencePriors({{0, 0}, {0, 0}}, 1.0), InputError);
  EXPECT_THROW(CorrespondencePriors({{-1, 0}}, 1.0), InputError);
  const CorrespondencePriors p({{3, 0}}, 1.0);
  EXPECT_THROW(p.require_in_range(3, 5), InputError);
  EXPECT_NO_THROW(p.require_in_range(4, 1));
}

TEST(PriorsFromClusters, SingleClusterIsFullGrid) {
  const auto p = priors_from_clusters(ClusterAssignment::single(3), ClusterAssignment::single(4), 1.0);
  EXPECT_EQ(p.pairs().size(), 12u);
}

TEST(PriorsFromClusters, CountsLabelMatches) {
  // Data sizes (2, 1), template sizes (1, 2): 2*1 + 1*2 pairs.
  const auto p = priors_from_clusters(ClusterAssignment({1, 1, 2}, 2), ClusterAssignment({1, 2, 2}, 2), 1.0);
  ASSERT_EQ(p.pairs().size(), 4u);
  for (const auto& [n, m] : p.pairs()) {
    EXPECT_EQ(ClusterAssignment({1, 1, 2}, 2).label(n), ClusterAssignment({1, 2, 2}, 2).label(m));
  }
}

TEST(PriorsFromClusters, MismatchedClusterCount) {
  EXPECT_THROW(priors_from_clusters(ClusterAssignment({1, 2}, 2), ClusterAssignment::single(2), 1.0),
               InputError);
}

namespace {

struct Instance {
  PointSet x;
  PointSet y;
  PosteriorMatrix post;
  KernelMatrix kernel;
  double sigma2 = 0.6;
  double lambda = 2.0;
};

Instance make_instance(std::uint64_t seed, Index n = 4, Index m = 4) {
  std::mt19937_64 rng(seed);
  Instance in;
  in.x = random_points(rng, n, 3);
  in.y = random_points(rng, m, 3);
  in.post = estep(in.x, in.y, in.sigma2, 0.1);
  in.kernel = gaussian_kernel(in.y, 2.0);
  return in;
}

}  // namespace

TEST(EcpdMstep, EmptyPriorsMatchCpdBitForBit) {
  const auto in = make_instance(41);
  const auto cpd = mstep_solve(in.kernel, in.post, in.x, in.y, in.lambda, in.sigma2);
  const auto ecpd = mstep_solve_ecpd(in.kernel, in.post, CorrespondencePriors(), in.x, in.y,
                                     in.lambda, in.sigma2);
  EXPECT_EQ(cpd.w, ecpd.w);
}

TEST(EcpdMstep, VanishingPriorWeight) {
  const auto in = make_instance(42);
  const auto cpd = mstep_solve(in.kernel, in.post, in.x, in.y, in.lambda, in.sigma2);
  const CorrespondencePriors priors({{0, 0}, {1, 2}, {3, 3}}, 1e20);
  const auto ecpd = mstep_solve_ecpd(in.kernel, in.post, priors, in.x, in.y, in.lambda, in.sigma2);
  EXPECT_LE(max_abs_diff(cpd.w, ecpd.w), 1e-8);
}

TEST(EcpdMstep, MatchesDenseSolveOfAssembledSystem) {
  const auto in = make_instance(43);
  const double alpha_sq = 0.05;
  const CorrespondencePriors priors({{2, 1}}, alpha_sq);
  const double k = in.sigma2 / alpha_sq;
  Matrix pt = Matrix::Zero(4, 4);
  pt(1, 2) = 1.0;
  const Matrix g = kernel_oracle(in.y, 2.0);
  const Vector q = in.post.p.rowwise().sum();
  const Vector qt = pt.rowwise().sum();
  Matrix a = q.asDiagonal() * g + k * (qt.asDiagonal() * g);
  a.diagonal().array() += in.lambda * in.sigma2;
  const Matrix b = in.post.p * in.x.points() - q.asDiagonal() * Matrix(in.y.points()) +
                   k * (pt * in.x.points() - qt.asDiagonal() * Matrix(in.y.points()));
  const Matrix oracle = dense_solve(a, b);
  const auto sol = mstep_solve_ecpd(in.kernel, in.post, priors, in.x, in.y, in.lambda, in.sigma2);
  EXPECT_LE(max_abs_diff(sol.w, oracle), 1e-10 * std::max(1.0, oracle.cwiseAbs().maxCoeff()));
  EXPECT_LE(sol.relative_residual, 1e-9);
}

TEST(EcpdMstep, PairOrderIsIrrelevant) {
  const auto in = make_instance(44, 6, 5);
  std::vector<CorrespondencePriors::Pair> pairs{{0, 0}, {5, 1}, {2, 4}, {3, 4}, {1, 2}};
  const auto base = mstep_solve_ecpd(in.kernel, in.post, CorrespondencePriors(pairs, 0.3), in.x,
                                     in.y, in.lambda, in.sigma2);
  std::mt19937_64 rng(4);
  for (int k = 0; k < 5; ++k) {
    std::shuffle(pairs.begin(), pairs.end(), rng);
    const auto again = mstep_solve_ecpd(in.kernel, in.post, CorrespondencePriors(pairs, 0.3), in.x,
                                        in.y, in.lambda, in.sigma2);
    EXPECT_EQ(base.w, again.w);
  }
}

TEST(EcpdMstep, OutOfRangePair) {
  const auto in = make_instance(45);
  EXPECT_THROW(mstep_solve_ecpd(in.kernel, in.post, CorrespondencePriors({{9, 0}}, 1.0), in.x, in.y,
                                in.lambda, in.sigma2),
               InputError);
}

TEST(EcpdRegister, EmptyPriorsReproduceCpdTrace) {
  std::mt19937_64 rng(46);
  const auto x = random_points(rng, 20, 3);
  const auto y = random_points(rng, 18, 3);
  const auto cpd = register_cpd(x, y, RegistrationConfig{});
  const auto ecpd = register_ecpd(x, y, CorrespondencePriors(), RegistrationConfig{});
  ASSERT_EQ(cpd.trace.size(), ecpd.trace.size());
  for (std::size_t i = 0; i < cpd.trace.size(); ++i) {
    EXPECT_EQ(cpd.trace[i].sigma2, ecpd.trace[i].sigma2);
    EXPECT_EQ(cpd.trace[i].nll, ecpd.trace[i].nll);
    EXPECT_EQ(cpd.trace[i].q_value, ecpd.trace[i].q_value);
  }
  EXPECT_EQ(cpd.field.w, ecpd.field.w);
}

TEST(EcpdRegister, PinnedPairPullsHarder) {
  std::mt19937_64 rng(47);
  const auto y = random_points(rng, 15, 2);
  const auto x = jitter(rng, y, 0.3);
  // Pin data point 0 to template point 5, which is not its natural match.
  const CorrespondencePriors priors({{0, 5}}, 1e-3);
  const auto cpd = register_cpd(x, y, RegistrationConfig{});
  const auto ecpd = register_ecpd(x, y, priors, RegistrationConfig{});
  EXPECT_LT(std::sqrt(sq_dist(ecpd.transformed, 5, x, 0)), std::sqrt(sq_dist(cpd.transformed, 5, x, 0)));
}

TEST(EcpdRegister, ContinuousInAlpha) {
  std::mt19937_64 rng(48);
  const auto y = random_points(rng, 20, 3);
  const auto x = jitter(rng, y, 0.2);
  const auto labels = random_labels(rng, 20, 2);
  const auto a = register_ecpd(x, y, priors_from_clusters(labels, labels, 4.0), RegistrationConfig{});
  const auto b = register_ecpd(x, y, priors_from_clusters(labels, labels, 4.04), RegistrationConfig{});
  EXPECT_LE(max_abs_diff(a.field.w, b.field.w), 0.01 * a.field.w.cwiseAbs().maxCoeff());
}

TEST(EcpdRegister, ObjectiveMonotoneWithPriors) {
  std::mt19937_64 rng(49);
  for (int trial = 0; trial < 10; ++trial) {
    const auto y = random_points(rng, 15, 3);
    const auto x = jitter(rng, y, 0.4);
    const auto labels = random_labels(rng, 15, 3);
    const auto r = register_ecpd(x, y, priors_from_clusters(labels, labels, 0.5 + trial), RegistrationConfig{});
    for (std::size_t i = 1; i < r.trace.size(); ++i) EXPECT_LE(r.trace[i].nll, r.trace[i - 1].nll + 1e-9);
  }
}
