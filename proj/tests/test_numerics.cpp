#include <gtest/gtest.h>

#include <random>

#include "mfhogp/numerics.hpp"
#include "oracles.hpp"

using namespace mfhogp;

namespace {

Matrix to_matrix(const oracle::Dense& d) { return d; }

}  // namespace

TEST(Cholesky, IdentityFactorsToItself) {
  const CholeskyFactor f = cholesky(identity(3));
  EXPECT_TRUE(f.lower.isApprox(identity(3)));
  EXPECT_EQ(f.jitter, 0.0);
  EXPECT_FALSE(f.escalated);
  EXPECT_EQ(f.dim(), 3u);
}

TEST(Cholesky, TwoByTwoReconstructs) {
  Matrix a(2, 2);
  a << 4, 2, 2, 3;
  const CholeskyFactor f = cholesky(a);
  EXPECT_NEAR(f.lower(0, 0), 2.0, 1e-14);
  EXPECT_NEAR(f.lower(1, 0), 1.0, 1e-14);
  EXPECT_NEAR(f.lower(1, 1), std::sqrt(2.0), 1e-14);
  EXPECT_EQ(f.lower(0, 1), 0.0);
  EXPECT_LT((f.lower * f.lower.transpose() - a).norm(), 1e-12);
}

TEST(Cholesky, RankDeficientEscalatesJitter) {
  Matrix a = Matrix::Ones(2, 2);
  const CholeskyFactor f = cholesky(a);
  EXPECT_TRUE(f.escalated);
  EXPECT_GE(f.jitter, 1e-8);
  EXPECT_LE(f.jitter, 1e-2);
  Matrix shifted = a;
  shifted.diagonal().array() += f.jitter;
  EXPECT_LT((f.lower * f.lower.transpose() - shifted).norm(), 1e-8 * (1.0 + a.norm()));
}

TEST(Cholesky, RejectsNonSquare) {
  try {
    cholesky(Matrix::Ones(2, 3));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
}

TEST(Cholesky, IndefiniteBeyondMaxJitterFails) {
  Matrix a(2, 2);
  a << 1, 0, 0, -1;
  try {
    cholesky(a);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NotPositiveDefinite);
  }
}

TEST(Cholesky, ReconstructionPropertyOnRandomPsd) {
  std::mt19937_64 gen(11);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + trial % 7;
    const oracle::Dense g = oracle::random_matrix(gen, n, std::max(1, n - 2));
    const Matrix a = to_matrix(g * g.transpose());  // PSD, often singular
    const CholeskyFactor f = cholesky(a);
    Matrix shifted = a;
    shifted.diagonal().array() += f.jitter;
    EXPECT_LT((f.lower * f.lower.transpose() - shifted).norm(), 1e-8 * (1.0 + a.norm()));
    EXPECT_TRUE((f.lower.diagonal().array() > 0).all());
    EXPECT_EQ(Matrix(f.lower.triangularView<Eigen::StrictlyUpper>()).norm(), 0.0);
  }
}

TEST(Cholesky, LogDetMatchesDeterminant) {
  std::mt19937_64 gen(3);
  const oracle::Dense a = oracle::random_spd(gen, 5);
  EXPECT_NEAR(cholesky(to_matrix(a)).log_det(), std::log(a.determinant()), 1e-10);
}

TEST(Kron, RowVectors) {
  Matrix a(1, 2), b(1, 2);
  a << 1, 2;
  b << 3, 4;
  Matrix expected(1, 4);
  expected << 3, 4, 6, 8;
  EXPECT_EQ(kron(a, b), expected);
}

TEST(Kron, Identities) { EXPECT_EQ(kron(identity(2), identity(3)), identity(6)); }

TEST(Kron, VecIdentity) {
  std::mt19937_64 gen(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix a = to_matrix(oracle::random_matrix(gen, 2, 2));
    const Matrix b = to_matrix(oracle::random_matrix(gen, 2, 2));
    const Matrix w = to_matrix(oracle::random_matrix(gen, 2, 2));
    const Vector lhs = vec(a * w * b.transpose());
    const Vector rhs = kron(b, a) * vec(w);
    EXPECT_LT((lhs - rhs).norm(), 1e-12);
    EXPECT_LT((lhs - oracle::kron(b, a) * oracle::vec(w)).norm(), 1e-12);
  }
}

TEST(Kron, MatchesElementwiseOracleAndIsAssociative) {
  std::mt19937_64 gen(6);
  const Matrix a = to_matrix(oracle::random_matrix(gen, 2, 2));
  const Matrix b = to_matrix(oracle::random_matrix(gen, 2, 2));
  const Matrix c = to_matrix(oracle::random_matrix(gen, 2, 2));
  EXPECT_LT((kron(a, b) - to_matrix(oracle::kron(a, b))).norm(), 1e-14);
  EXPECT_LT((kron(kron(a, b), c) - kron(a, kron(b, c))).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(Kron, ElementCapRaises) {
  try {
    kron(Matrix::Ones(100, 100), Matrix::Ones(100, 100), 1000);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::OverflowingDimensions);
  }
}

TEST(Vec, StacksColumns) {
  Matrix a(2, 2);
  a << 1, 2, 3, 4;
  Vector expected(4);
  expected << 1, 3, 2, 4;
  EXPECT_EQ(vec(a), expected);
}

TEST(ThinSvd, Diagonal) {
  Matrix a = Matrix::Zero(3, 3);
  a.diagonal() << 3, 2, 1;
  const ThinSvd s = thin_svd(a, 2);
  ASSERT_EQ(s.s.size(), 2);
  EXPECT_NEAR(s.s(0), 3.0, 1e-12);
  EXPECT_NEAR(s.s(1), 2.0, 1e-12);
}

TEST(ThinSvd, RankOneExact) {
  std::mt19937_64 gen(7);
  const Matrix u = to_matrix(oracle::random_matrix(gen, 6, 1));
  const Matrix v = to_matrix(oracle::random_matrix(gen, 4, 1));
  const Matrix a = u * v.transpose();
  const ThinSvd s = thin_svd(a, 1);
  EXPECT_LT((s.u * s.s.asDiagonal() * s.v.transpose() - a).norm(), 1e-10);
}

TEST(ThinSvd, FullRankRoundTripAndOrthonormality) {
  std::mt19937_64 gen(8);
  const Matrix a = to_matrix(oracle::random_matrix(gen, 8, 5));
  const ThinSvd s = thin_svd(a, 5);
  EXPECT_LT((s.u * s.s.asDiagonal() * s.v.transpose() - a).norm(), 1e-8);
  EXPECT_LT((s.u.transpose() * s.u - identity(5)).norm(), 1e-8);
  EXPECT_LT((s.v.transpose() * s.v - identity(5)).norm(), 1e-8);
  for (Eigen::Index i = 1; i < s.s.size(); ++i) EXPECT_LE(s.s(i), s.s(i - 1));
  EXPECT_GE(s.s.minCoeff(), 0.0);
}

TEST(ThinSvd, RankAboveMinDimensionRejected) { EXPECT_THROW(thin_svd(Matrix::Ones(3, 2), 3), Error); }

TEST(Rng, FreshStreamsReproduce) {
  RngStream a(0), b(0);
  EXPECT_EQ(standard_normal_matrix(a, 4, 3), standard_normal_matrix(b, 4, 3));
  EXPECT_EQ(a.draws(), 12u);
}

TEST(Rng, DifferentSeedsDiffer) {
  RngStream a(0), b(1);
  EXPECT_NE(standard_normal_matrix(a, 2, 2), standard_normal_matrix(b, 2, 2));
}

TEST(Rng, MomentsOfManyDraws) {
  RngStream rng(42);
  const Matrix z = standard_normal_matrix(rng, 1000, 100);
  const double mean = z.mean();
  const double var = (z.array() - mean).square().sum() / static_cast<double>(z.size() - 1);
  EXPECT_LT(std::abs(mean), 0.02);
  EXPECT_GE(var, 0.98);
  EXPECT_LE(var, 1.02);
}

TEST(Rng, ZeroRowsIsEmpty) {
  RngStream rng(1);
  const Matrix z = standard_normal_matrix(rng, 0, 5);
  EXPECT_EQ(z.rows(), 0);
  EXPECT_EQ(rng.draws(), 0u);
}

TEST(Rng, SplitStreamsAreReplayableAndDistinct) {
  const RngStream parent(9);
  RngStream c1 = parent.split(1), c1b = parent.split(1), c2 = parent.split(2);
  const double x = c1.normal();
  EXPECT_EQ(x, c1b.normal());
  EXPECT_NE(x, c2.normal());
}

TEST(Scalar, SoftplusRoundTrip) {
  for (double y : {1e-6, 0.1, 1.0, 5.0, 50.0}) EXPECT_NEAR(softplus(inverse_softplus(y)), y, 1e-9 * (1 + y));
}

TEST(Scalar, LogSumExpStable) {
  const std::vector<double> v{1000.0, 1000.0};
  EXPECT_NEAR(log_sum_exp(v), 1000.0 + std::log(2.0), 1e-12);
  EXPECT_EQ(log_sum_exp({}), -std::numeric_limits<double>::infinity());
}
