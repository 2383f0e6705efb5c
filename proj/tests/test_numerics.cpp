#include "oracles.hpp"

#include "skipvision/numerics.hpp"

#include <gtest/gtest.h>

using namespace skipvision;

namespace {

MatrixD random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return gaussian_matrix<double>(r, c, 1.0, rng);
}

}  // namespace

TEST(Matmul, IdentityCountsMacs) {
  MacCounter counter;
  MatrixD a = random_matrix(3, 3, 1);
  auto out = matmul(MatrixD::Identity(3, 3), a, counter, MacScope::Ffn);
  EXPECT_EQ(out, a);
  EXPECT_EQ(counter[MacScope::Ffn], 27u);
}

TEST(Matmul, OneByOne) {
  MacCounter counter;
  MatrixD a(1, 1), b(1, 1);
  a << 2;
  b << 3;
  EXPECT_EQ(matmul(a, b, counter, MacScope::AttentionProj)(0, 0), 6.0);
  EXPECT_EQ(counter.formula_total(), 1u);
}

TEST(Matmul, MatchesSchoolbook) {
  MatrixD a = random_matrix(4, 5, 2), b = random_matrix(5, 2, 3);
  auto got = matmul(a, b);
  auto want = oracle::schoolbook_matmul(a, b);
  EXPECT_LE((got - want).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Matmul, RejectsMismatchAndNonFinite) {
  EXPECT_THROW(matmul(MatrixD(2, 3), MatrixD(2, 3)), std::invalid_argument);
  MatrixD a = MatrixD::Ones(1, 1), b(1, 1);
  b << std::numeric_limits<double>::infinity();
  EXPECT_THROW(matmul(a, b), std::domain_error);
}

TEST(Matmul, MacCountIsExactForAnyShape) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> dim(1, 9);
  MacCounter counter;
  std::uint64_t expected = 0;
  for (int t = 0; t < 50; ++t) {
    int r = dim(rng), k = dim(rng), c = dim(rng);
    const auto before = counter[MacScope::Ffn];
    matmul(MatrixD::Ones(r, k), MatrixD::Ones(k, c), counter, MacScope::Ffn);
    EXPECT_EQ(counter[MacScope::Ffn] - before, static_cast<std::uint64_t>(r * k * c));
    EXPECT_GE(counter[MacScope::Ffn], before);
    expected += static_cast<std::uint64_t>(r * k * c);
  }
  EXPECT_EQ(counter.formula_total(), expected);
  counter.reset();
  EXPECT_EQ(counter.total(), 0u);
}

TEST(Softmax, Basics) {
  MatrixD m(1, 2);
  m << 0, 0;
  auto p = softmax_rows(m);
  EXPECT_DOUBLE_EQ(p(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(p(0, 1), 0.5);
  MatrixD single(1, 1);
  single << 123.25;
  EXPECT_EQ(softmax_rows(single)(0, 0), 1.0);
}

TEST(Softmax, MatchesWideReference) {
  MatrixD m(1, 3);
  m << 1, 2, 3;
  auto p = softmax_rows(m);
  auto ref = oracle::softmax({1, 2, 3});
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(p(0, i), ref[static_cast<std::size_t>(i)], 1e-7);
}

TEST(Softmax, AllNegativeInfinityRowRejected) {
  MatrixD m = MatrixD::Constant(2, 3, -std::numeric_limits<double>::infinity());
  m(0, 0) = 0;
  EXPECT_THROW(softmax_rows(m), std::invalid_argument);
}

TEST(Softmax, RowsAreDistributionsAndShiftInvariant) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    MatrixD m = 5.0 * random_matrix(4, 7, seed);
    auto p = softmax_rows(m);
    EXPECT_GE(p.minCoeff(), 0.0);
    EXPECT_LE(p.maxCoeff(), 1.0);
    for (Eigen::Index r = 0; r < p.rows(); ++r) EXPECT_NEAR(p.row(r).sum(), 1.0, 1e-6);
    MatrixD shifted = m;
    shifted.row(1).array() += 17.5;
    EXPECT_LE((softmax_rows(shifted) - p).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(RmsNorm, ConstantAndZeroRows) {
  RowVectorD gain = RowVectorD::Ones(4);
  MatrixD x(2, 4);
  x.row(0).setConstant(3.0);
  x.row(1).setZero();
  auto y = rms_norm(x, gain);
  for (int c = 0; c < 4; ++c) {
    EXPECT_NEAR(y(0, c), 1.0, 1e-6);
    EXPECT_EQ(y(1, c), 0.0);
  }
}

TEST(RmsNorm, MatchesDirectFormula) {
  MatrixD x = random_matrix(1, 6, 9);
  RowVectorD gain = random_matrix(1, 6, 10);
  auto y = rms_norm(x, gain);
  auto ref = oracle::rms_norm(x, gain);
  EXPECT_LE((y - ref).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_THROW(rms_norm(x, RowVectorD::Ones(5)), std::invalid_argument);
}

TEST(SpectralNorm, IdentityAndDiagonal) {
  EXPECT_NEAR(spectral_norm(MatrixD::Identity(5, 5)), 1.0, 1e-12);
  MatrixD d = MatrixD::Zero(2, 2);
  d(0, 0) = 3;
  d(1, 1) = 1;
  EXPECT_NEAR(spectral_norm(d), 3.0, 1e-8);
}

TEST(SpectralNorm, MatchesSvd) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    MatrixD w = random_matrix(8, 6, 100 + seed);
    EXPECT_NEAR(spectral_norm(w, {1e-12, 100000, seed}), oracle::svd_spectral_norm(w), 1e-6) << seed;
  }
}

TEST(SpectralNorm, DominatesEveryDirection) {
  std::mt19937_64 rng(5);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    MatrixD w = random_matrix(7, 5, 200 + seed);
    const double s = spectral_norm(w);
    for (int t = 0; t < 100; ++t) {
      Eigen::VectorXd v = gaussian_matrix<double>(5, 1, 1.0, rng).col(0);
      v.normalize();
      EXPECT_GE(s + 1e-6, (w * v).norm());
    }
  }
}

TEST(SpectralNorm, OrthogonalIsOne) {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 5; ++t) {
    EXPECT_NEAR(spectral_norm(orthogonal_matrix<double>(12, 12, rng)), 1.0, 1e-6);
    EXPECT_NEAR(spectral_norm(orthogonal_matrix<double>(8, 20, rng)), 1.0, 1e-6);
    EXPECT_NEAR(spectral_norm(orthogonal_matrix<double>(20, 8, rng)), 1.0, 1e-6);
  }
}

TEST(SpectralNorm, NonConvergenceCarriesEstimate) {
  MatrixD w = random_matrix(30, 30, 7);
  try {
    spectral_norm(w, {0.0, 2, 0});
    FAIL() << "expected ConvergenceError";
  } catch (const ConvergenceError& e) {
    EXPECT_GT(e.last_estimate(), 0.0);
    EXPECT_LE(e.last_estimate(), oracle::svd_spectral_norm(w) + 1e-9);
  }
}

TEST(Seeds, DeriveSeedSeparatesStreams) {
  EXPECT_EQ(derive_seed(1, 2), derive_seed(1, 2));
  EXPECT_NE(derive_seed(1, 2), derive_seed(1, 3));
  EXPECT_NE(derive_seed(1, 2), derive_seed(2, 2));
}
