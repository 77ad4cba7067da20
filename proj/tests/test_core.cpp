#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "support.hpp"

using namespace cpdreg;
using namespace testing_support;

TEST(PointSet, RejectsEmptyAndNonFinite) {
  EXPECT_THROW(PointSet(Coords(0, 2)), InputError);
  EXPECT_THROW(PointSet(Coords(2, 0)), InputError);
  Coords c(1, 2);
  c << 0.0, std::nan("");
  EXPECT_THROW(PointSet{c}, InputError);
  c << 0.0, INFINITY;
  EXPECT_THROW(PointSet{c}, InputError);
  EXPECT_THROW(PointSet::from_rows({{0.0, 1.0}, {2.0}}), InputError);
}

TEST(ClusterAssignment, RejectsEmptyDeclaredClusterAndOutOfRange) {
  EXPECT_THROW(ClusterAssignment({1, 1, 3}, 3), InputError);
  EXPECT_THROW(ClusterAssignment({0, 1}, 1), InputError);
  EXPECT_THROW(ClusterAssignment({1, 2}, 1), InputError);
  EXPECT_NO_THROW(ClusterAssignment({2, 1, 2}, 2));
}

TEST(RegistrationConfig, DefaultsAndValidation) {
  const RegistrationConfig c;
  EXPECT_EQ(c.beta_sq, 2.0);
  EXPECT_EQ(c.lambda, 2.0);
  EXPECT_EQ(c.omega, 0.1);
  EXPECT_EQ(c.max_iters, 150);
  EXPECT_EQ(c.rel_tol, 1e-5);
  EXPECT_EQ(c.sigma2_floor, 1e-8);
  auto bad = c;
  bad.omega = 1.0;
  EXPECT_THROW(bad.validate(), ParameterError);
  bad = c;
  bad.beta_sq = 0.0;
  EXPECT_THROW(bad.validate(), ParameterError);
  bad = c;
  bad.lambda = -1.0;
  EXPECT_THROW(bad.validate(), ParameterError);
  bad = c;
  bad.max_iters = 0;
  EXPECT_THROW(bad.validate(), ParameterError);
}

TEST(GaussianKernel, CoincidentPointsGiveOnes) {
  const auto g = gaussian_kernel(PointSet::from_rows({{0, 0}, {0, 0}}), 2.0).g;
  EXPECT_EQ(g, Matrix::Ones(2, 2));
}

TEST(GaussianKernel, ClosedFormOffDiagonal) {
  const auto g = gaussian_kernel(PointSet::from_rows({{0, 0}, {2, 0}}), 2.0).g;
  EXPECT_NEAR(g(0, 1), 0.367879, 1e-6);
  EXPECT_DOUBLE_EQ(g(0, 1), std::exp(-1.0));
  EXPECT_EQ(g(0, 0), 1.0);
}

TEST(GaussianKernel, MatchesDoubleLoop) {
  std::mt19937_64 rng(11);
  const auto y = random_points(rng, 5, 3);
  const auto g = gaussian_kernel(y, 1.7).g;
  EXPECT_LE(max_abs_diff(g, kernel_oracle(y, 1.7)), 1e-15);
}

TEST(GaussianKernel, RejectsNonPositiveWidth) {
  EXPECT_THROW(gaussian_kernel(PointSet::from_rows({{0.0}}), 0.0), ParameterError);
}

TEST(GaussianKernel, SymmetricPsdUnitDiagonal) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const Index m = 2 + static_cast<Index>(rng() % 49);
    const auto y = random_points(rng, m, 2 + static_cast<int>(trial % 2));
    const auto g = gaussian_kernel(y, 0.5 + trial * 0.2).g;
    EXPECT_EQ(g, g.transpose());
    EXPECT_TRUE((g.diagonal().array() == 1.0).all());
    EXPECT_TRUE((g.array() > 0.0).all() && (g.array() <= 1.0).all());
    Eigen::SelfAdjointEigenSolver<Matrix> es(g);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-10);
  }
}

TEST(InitSigma2, Examples) {
  EXPECT_DOUBLE_EQ(init_sigma2(PointSet::from_rows({{0, 0}}), PointSet::from_rows({{3, 4}})), 12.5);
  EXPECT_EQ(init_sigma2(PointSet::from_rows({{1, 2}}), PointSet::from_rows({{1, 2}})), 0.0);
  EXPECT_DOUBLE_EQ(
      init_sigma2(PointSet::from_rows({{0, 0}, {1, 0}}), PointSet::from_rows({{0, 0}})), 0.25);
  EXPECT_THROW(init_sigma2(PointSet::from_rows({{0, 0}}), PointSet::from_rows({{0}})), InputError);
}

TEST(InitSigma2, SymmetricExactly) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const Index n = 1 + static_cast<Index>(rng() % 30);
    const Index m = trial % 3 == 0 ? n : 1 + static_cast<Index>(rng() % 30);
    const auto x = random_points(rng, n, 3);
    const auto y = random_points(rng, m, 3);
    EXPECT_EQ(init_sigma2(x, y), init_sigma2(y, x));
  }
}

TEST(ApplyDisplacement, ZeroFieldIsIdentity) {
  std::mt19937_64 rng(14);
  const auto y = random_points(rng, 6, 2);
  const auto q = random_points(rng, 4, 2);
  EXPECT_EQ(apply_displacement(DisplacementField{Matrix::Zero(6, 2), y, 2.0}, q), q);
}

TEST(ApplyDisplacement, ClosedFormSinglePoint) {
  const auto y = PointSet::from_rows({{0, 0}});
  Matrix w(1, 2);
  w << 1.0, 0.0;
  const auto z = apply_displacement(DisplacementField{w, y, 2.0}, PointSet::from_rows({{2, 0}}));
  EXPECT_DOUBLE_EQ(z.points()(0, 0), 2.0 + std::exp(-1.0));
  EXPECT_EQ(z.points()(0, 1), 0.0);
}

TEST(ApplyDisplacement, TemplateGivesTemplatePlusGW) {
  std::mt19937_64 rng(15);
  const auto y = random_points(rng, 7, 3);
  const Matrix w = random_points(rng, 7, 3).points();
  const auto z = apply_displacement(DisplacementField{w, y, 1.3}, y);
  const Matrix expected = Matrix(y.points()) + kernel_oracle(y, 1.3) * w;
  EXPECT_LE(max_abs_diff(z.points(), expected), 1e-13);
  EXPECT_LE(max_abs_diff(z.points(), displace_template(gaussian_kernel(y, 1.3), y, w)), 1e-13);
}

TEST(ApplyDisplacement, LinearInCoefficients) {
  std::mt19937_64 rng(16);
  const auto y = random_points(rng, 8, 3);
  const auto q = random_points(rng, 5, 3);
  const Matrix w = random_points(rng, 8, 3).points();
  const Matrix base = apply_displacement(DisplacementField{w, y, 2.0}, q).points() - Matrix(q.points());
  for (double s : {-3.0, 0.5, 7.0}) {
    const Matrix scaled =
        apply_displacement(DisplacementField{s * w, y, 2.0}, q).points() - Matrix(q.points());
    EXPECT_LE(max_abs_diff(scaled, s * base), 1e-12 * std::max(1.0, std::abs(s)));
  }
}

TEST(ApplyDisplacement, DimensionMismatch) {
  const auto y = PointSet::from_rows({{0, 0}});
  EXPECT_THROW(apply_displacement(DisplacementField{Matrix::Zero(1, 2), y, 2.0},
                                  PointSet::from_rows({{0, 0, 0}})),
               InputError);
}

TEST(NegativeLogLikelihood, ClosedFormSinglePair) {
  const auto p = PointSet::from_rows({{0.3, -1.0}});
  EXPECT_NEAR(negative_log_likelihood(p, p, 1.0, 0.0), std::log(2.0 * std::numbers::pi), 1e-15);
  EXPECT_NEAR(negative_log_likelihood(p, p, 1.0, 0.0), 1.837877, 1e-6);
}

TEST(NegativeLogLikelihood, MatchesDirectSummation) {
  std::mt19937_64 rng(17);
  const auto x = random_points(rng, 3, 3);
  const auto t = random_points(rng, 3, 3);
  for (double omega : {0.0, 0.1, 0.6}) {
    const double sigma2 = 0.7;
    double oracle = 0.0;
    for (Index n = 0; n < 3; ++n) {
      double mix = 0.0;
      for (Index m = 0; m < 3; ++m) {
        mix += std::pow(2.0 * std::numbers::pi * sigma2, -1.5) *
               std::exp(-sq_dist(x, n, t, m) / (2.0 * sigma2));
      }
      oracle -= std::log(omega / 3.0 + (1.0 - omega) * mix / 3.0);
    }
    EXPECT_NEAR(negative_log_likelihood(x, t, sigma2, omega), oracle, 1e-12 * std::abs(oracle));
  }
}

TEST(NegativeLogLikelihood, NoiseBoundsEachTerm) {
  // Every term is at most -log(omega / N): the uniform component alone.
  std::mt19937_64 rng(18);
  const auto x = random_points(rng, 6, 2, 50.0);
  const auto t = random_points(rng, 4, 2);
  const double omega = 0.2;
  EXPECT_LE(negative_log_likelihood(x, t, 1e-3, omega), -6.0 * std::log(omega / 6.0) + 1e-12);
}

TEST(NegativeLogLikelihood, LargeVarianceAsymptote) {
  std::mt19937_64 rng(19);
  const auto x = random_points(rng, 10, 3);
  const auto t = random_points(rng, 7, 3);
  const double sigma2 = 1e6;
  const double asymptote = 10.0 * 1.5 * std::log(2.0 * std::numbers::pi * sigma2);
  EXPECT_NEAR(negative_log_likelihood(x, t, sigma2, 0.0) / asymptote, 1.0, 1e-3);
}

TEST(NegativeLogLikelihood, RejectsBadParameters) {
  const auto p = PointSet::from_rows({{0.0}});
  EXPECT_THROW(negative_log_likelihood(p, p, 0.0, 0.1), ParameterError);
  EXPECT_THROW(negative_log_likelihood(p, p, 1.0, 1.0), ParameterError);
}

TEST(Numeric, LogSumExpStable) {
  const std::vector<double> big{1000.0, 1000.0};
  EXPECT_NEAR(numeric::log_sum_exp(big), 1000.0 + std::log(2.0), 1e-12);
  const std::vector<double> none{numeric::kNegInf, numeric::kNegInf};
  EXPECT_EQ(numeric::log_sum_exp(none), numeric::kNegInf);
  EXPECT_NEAR(numeric::log_add_exp(-1000.0, -1000.0), -1000.0 + std::log(2.0), 1e-12);
}
