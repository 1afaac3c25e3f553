#include <gtest/gtest.h>

#include <chrono>
#include <cmath>

#include "core/newton_score.hpp"
#include "oracles/oracles.hpp"
#include "support/random.hpp"

namespace prunekit {
namespace {

using testing::random_matrix;

ScoreProblem random_problem(std::mt19937_64& gen, std::size_t n, std::size_t d, std::size_t dp,
                            double r, double lambda = 100.0) {
  ScoreProblem p;
  p.x = normalize_calibration(random_matrix(n, d, gen)).x;
  p.w = random_matrix(d, dp, gen);
  p.r = r;
  p.lambda = lambda;
  return p;
}

TEST(Normalize, IdentityInput) {
  const NormalizedCalibration nc = normalize_calibration(DenseMatrix::identity(3));
  EXPECT_NEAR(nc.stats.spectral_norm, 1.0, 1e-12);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(nc.x(i, i), 1.0 / (1.0 + kNormalizeEpsilon), 1e-15);
}

TEST(Normalize, ScaledIdentity) {
  DenseMatrix x = DenseMatrix::identity(3);
  for (double& v : x.data()) v *= 2.0;
  const NormalizedCalibration nc = normalize_calibration(x);
  EXPECT_NEAR(nc.stats.spectral_norm, 2.0, 1e-12);
  EXPECT_NEAR(nc.x(1, 1), 1.0, 1e-12);
}

TEST(Normalize, RandomHasUnitNormOrLess) {
  std::mt19937_64 gen(31);
  const NormalizedCalibration nc = normalize_calibration(random_matrix(8, 4, gen));
  EXPECT_LE(oracle::spectral_norm(nc.x), 1.0 + 1e-12);
}

TEST(Normalize, ZeroInputIsDegenerate) {
  EXPECT_THROW(normalize_calibration(DenseMatrix(4, 3)), DegenerateCalibrationError);
}

TEST(MaskedColumnError, IdentityMaskIsZero) {
  std::mt19937_64 gen(1);
  const DenseMatrix x = random_matrix(5, 3, gen), w = random_matrix(3, 2, gen);
  const std::vector<double> m(3, 1.0);
  EXPECT_EQ(masked_column_error(x, w, m, 1), 0.0);
}

TEST(MaskedColumnError, AllPrunedIsFullOutputNorm) {
  std::mt19937_64 gen(2);
  const DenseMatrix x = random_matrix(5, 3, gen), w = random_matrix(3, 2, gen);
  const std::vector<double> m(3, 0.0);
  const DenseMatrix y = oracle::product(x, w);
  double s = 0.0;
  for (std::size_t t = 0; t < 5; ++t) s += y(t, 0) * y(t, 0);
  EXPECT_NEAR(masked_column_error(x, w, m, 0), std::sqrt(s), 1e-12);
}

TEST(MaskedColumnError, HandExample) {
  const DenseMatrix w{{3}, {4}};
  const std::vector<double> m{1.0, 0.0};
  EXPECT_NEAR(masked_column_error(DenseMatrix::identity(2), w, m, 0), 4.0, 1e-15);
}

TEST(MaskedColumnError, ColumnOutOfRange) {
  const std::vector<double> m{1.0, 0.0};
  EXPECT_THROW(masked_column_error(DenseMatrix::identity(2), DenseMatrix{{3}, {4}}, m, 1), IndexError);
}

TEST(ErrorBound, FullMaskIsZero) {
  std::mt19937_64 gen(4);
  const DenseMatrix x = random_matrix(6, 4, gen), w = random_matrix(4, 3, gen);
  const CalibrationStats stats{oracle::spectral_norm(x), 1.0};
  const std::vector<double> m(4, 1.0);
  const ErrorBoundReport rep = error_bound(x, w, m, 2, stats);
  EXPECT_EQ(rep.error, 0.0);
  EXPECT_EQ(rep.bound, 0.0);
}

TEST(ErrorBound, EmptyMaskHitsSubmultiplicativeBound) {
  std::mt19937_64 gen(5);
  const DenseMatrix x = random_matrix(6, 4, gen), w = random_matrix(4, 3, gen);
  const CalibrationStats stats{oracle::spectral_norm(x), 1.0};
  const std::vector<double> m(4, 0.0);
  const ErrorBoundReport rep = error_bound(x, w, m, 0, stats);
  double wn = 0.0;
  for (std::size_t j = 0; j < 4; ++j) wn += w(j, 0) * w(j, 0);
  EXPECT_NEAR(rep.bound, stats.spectral_norm * std::sqrt(wn), 1e-12);
  EXPECT_LE(rep.error, rep.bound);
}

TEST(ErrorBound, RandomDrawsRespectChain) {
  std::mt19937_64 gen(6);
  std::bernoulli_distribution keep(0.6);
  for (int trial = 0; trial < 200; ++trial) {
    const DenseMatrix x = random_matrix(10, 6, gen), w = random_matrix(6, 3, gen);
    std::vector<double> m(6);
    for (double& v : m) v = keep(gen) ? 1.0 : 0.0;
    const CalibrationStats stats{spectral_norm(x), 1.0};
    const ErrorBoundReport rep = error_bound(x, w, m, trial % 3, stats);
    EXPECT_LE(rep.error, rep.bound * (1 + 1e-12) + 1e-15);
    EXPECT_LE(rep.bound, rep.chain_bound * (1 + 1e-12) + 1e-15);
  }
}

TEST(Objective, FullKeepAndFullTargetIsZero) {
  std::mt19937_64 gen(7);
  const ScoreProblem p = random_problem(gen, 6, 4, 3, 4.0);
  const std::vector<double> z(4, 1.0);
  EXPECT_NEAR(objective(z, p), 0.0, 1e-15);
}

TEST(Objective, AllZeroIsHalfOutputEnergy) {
  std::mt19937_64 gen(8);
  const ScoreProblem p = random_problem(gen, 6, 4, 3, 0.0);
  const std::vector<double> z(4, 0.0);
  const DenseMatrix y = oracle::product(p.x, p.w);
  double s = 0.0;
  for (double v : y.data()) s += v * v;
  EXPECT_NEAR(objective(z, p), 0.5 * s, 1e-12);
}

TEST(Objective, MatchesTermByTermExpansion) {
  std::mt19937_64 gen(9);
  const ScoreProblem p = random_problem(gen, 5, 3, 2, 2.0, 7.0);
  const std::vector<double> z = testing::random_vector(3, gen);
  EXPECT_NEAR(objective(z, p), oracle::score_objective(p, z), 1e-12);
}

TEST(Gradient, StationaryAtFullKeep) {
  std::mt19937_64 gen(10);
  const ScoreProblem p = random_problem(gen, 6, 4, 3, 4.0);
  const std::vector<double> z(4, 1.0);
  for (double g : gradient(z, p)) EXPECT_NEAR(g, 0.0, 1e-15);
}

TEST(Gradient, ScalarCalculus) {
  ScoreProblem p;
  p.x = DenseMatrix{{1}};
  p.w = DenseMatrix{{1.7}};
  p.r = 0.0;
  p.lambda = 1.0;
  const std::vector<double> z{0.3};
  EXPECT_NEAR(gradient(z, p)[0], 1.7 * 1.7 * (0.3 - 1.0) + 0.3, 1e-15);
}

TEST(Gradient, MatchesFiniteDifferences) {
  std::mt19937_64 gen(12);
  const ScoreProblem p = random_problem(gen, 20, 12, 5, 9.0);
  const std::vector<double> z = testing::random_vector(12, gen);
  const auto fd = oracle::finite_diff_gradient([&](const std::vector<double>& v) { return objective(v, p); }, z);
  const DenseVector g = gradient(z, p);
  double err = 0.0, scale = 0.0;
  for (std::size_t j = 0; j < 12; ++j) {
    err = std::max(err, std::abs(g[j] - fd[j]));
    scale = std::max(scale, std::abs(g[j]));
  }
  EXPECT_LE(err / scale, 1e-6);
}

TEST(Hessian, AllOnesWeightIdentityInput) {
  ScoreProblem p;
  p.x = DenseMatrix::identity(3);
  p.w = DenseMatrix(3, 1, 1.0);
  p.lambda = 2.5;
  const DenseMatrix h = hessian(p);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(h(i, j), (i == j ? 1.0 : 0.0) + 2.5);
}

TEST(Hessian, ZeroWeightZeroPenalty) {
  std::mt19937_64 gen(13);
  ScoreProblem p;
  p.x = random_matrix(4, 3, gen);
  p.w = DenseMatrix(3, 2);
  p.lambda = 0.0;
  EXPECT_EQ(hessian(p), DenseMatrix(3, 3));
}

TEST(Hessian, FiniteDifferencesAndPsd) {
  std::mt19937_64 gen(14);
  const ScoreProblem p = random_problem(gen, 16, 8, 4, 6.0);
  const std::vector<double> z = testing::random_vector(8, gen);
  const DenseMatrix fd = oracle::finite_diff_jacobian(
      [&](const std::vector<double>& v) { return gradient(v, p); }, z);
  const DenseMatrix h = hessian(p);
  double scale = 0.0;
  for (double v : h.data()) scale = std::max(scale, std::abs(v));
  EXPECT_LE(testing::max_abs_diff(h, fd) / scale, 1e-5);
  for (int k = 0; k < 100; ++k) {
    const std::vector<double> v = testing::random_vector(8, gen, -1.0, 1.0);
    const DenseVector hv = matvec(h, v);
    double q = 0.0;
    for (std::size_t j = 0; j < 8; ++j) q += v[j] * hv[j];
    EXPECT_GE(q, -1e-10);
  }
}

TEST(Hessian, AgreesWithOracle) {
  std::mt19937_64 gen(15);
  const ScoreProblem p = random_problem(gen, 9, 5, 3, 4.0, 3.0);
  EXPECT_LE(testing::max_abs_diff(hessian(p), oracle::score_hessian(p)), 1e-12);
}

TEST(NewtonScore, FullTargetConvergesToOnes) {
  std::mt19937_64 gen(16);
  ScoreProblem p = random_problem(gen, 12, 5, 4, 5.0);
  const std::vector<double> z0(5, 0.3);
  const ScoreSolution s = newton_score(p, z0);
  for (double v : s.z) EXPECT_NEAR(v, 1.0, 1e-9);
  EXPECT_NEAR(s.objective, 0.0, 1e-15);
}

TEST(NewtonScore, WorkedTwoByTwo) {
  ScoreProblem p;
  p.x = DenseMatrix::identity(2);
  p.w = DenseMatrix{{1}, {2}};
  p.lambda = 10.0;
  p.r = 1.0;
  const ScoreSolution s = newton_score(p, std::vector<double>{0.5, 0.5});
  EXPECT_NEAR(s.z[0], 14.0 / 54.0, 1e-6);
  EXPECT_NEAR(s.z[1], 44.0 / 54.0, 1e-6);
  EXPECT_GT(s.z[1], s.z[0]);
  EXPECT_FALSE(s.clamp_active);
}

TEST(NewtonScore, NoWorseThanProjectedGradient) {
  std::mt19937_64 gen(18);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t d = 4 + trial * 3;
    const ScoreProblem p = random_problem(gen, 2 * d, d, 3, 0.8 * static_cast<double>(d));
    const DenseVector z0 = default_initial_point(d, 0.2);
    const ScoreSolution s = newton_score(p, z0);
    const oracle::PgdResult pgd =
        oracle::pgd_mask_solver(p, z0, 10000, oracle::default_pgd_step(p));
    EXPECT_LE(s.objective, pgd.objective + 1e-6) << "trial " << trial;
  }
}

TEST(NewtonScore, WrongInitialLengthThrows) {
  ScoreProblem p;
  p.x = DenseMatrix::identity(2);
  p.w = DenseMatrix{{1}, {2}};
  EXPECT_THROW(newton_score(p, std::vector<double>{0.5}), ShapeError);
}

TEST(DefaultInitialPoint, Constant) {
  for (double v : default_initial_point(7, 0.25)) EXPECT_EQ(v, 0.75);
}

TEST(ComplexityProbe, TinyDimensionCompletes) {
  const std::vector<std::size_t> dims{1};
  const auto samples = score_complexity_probe(dims, 5, 1, 1);
  ASSERT_EQ(samples.size(), 1u);
  EXPECT_EQ(samples[0].dim, 1u);
  EXPECT_GE(samples[0].seconds, 0.0);
}

}  // namespace
}  // namespace prunekit
