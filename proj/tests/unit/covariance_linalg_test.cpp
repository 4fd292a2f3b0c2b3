#include <random>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "oracles.hpp"
#include "seqmatch/error.hpp"
#include "seqmatch/numstat/covariance.hpp"
#include "seqmatch/numstat/linalg.hpp"

namespace ns = seqmatch::numstat;

TEST(CovAccumulator, CountsUpdates) {
  ns::CovAccumulator acc(2);
  for (int k = 1; k <= 5; ++k) {
    acc.update(Eigen::Vector2d(k, -k));
    EXPECT_EQ(acc.count(), k);
  }
}

TEST(CovAccumulator, RepeatedPointHasZeroCovariance) {
  ns::CovAccumulator acc(3);
  for (int k = 0; k < 7; ++k) acc.update(Eigen::Vector3d(1.5, -2.0, 4.0));
  EXPECT_LT(acc.sample_covariance().cwiseAbs().maxCoeff(), 1e-15);
}

TEST(CovAccumulator, FourPointSquare) {
  ns::CovAccumulator acc(2);
  for (auto [a, b] : {std::pair{0.0, 0.0}, {2.0, 0.0}, {0.0, 2.0}, {2.0, 2.0}}) acc.update(Eigen::Vector2d(a, b));
  const Eigen::MatrixXd s = acc.sample_covariance();
  EXPECT_NEAR(s(0, 0), 4.0 / 3.0, 1e-14);
  EXPECT_NEAR(s(1, 1), 4.0 / 3.0, 1e-14);
  EXPECT_NEAR(s(0, 1), 0.0, 1e-14);
  EXPECT_NEAR(s(1, 0), 0.0, 1e-14);
}

TEST(CovAccumulator, MatchesTwoPassBatchInAnyOrder) {
  std::mt19937_64 gen(7);
  std::normal_distribution<double> z;
  Eigen::MatrixXd x(200, 3);
  for (Eigen::Index i = 0; i < x.rows(); ++i) x.row(i) << 1e3 + z(gen), 5.0 * z(gen), z(gen) + 0.3 * x(i, 0);
  const Eigen::MatrixXd expected = oracle::two_pass_covariance(x);

  ns::CovAccumulator forward(3), backward(3);
  for (Eigen::Index i = 0; i < x.rows(); ++i) forward.update(x.row(i).transpose());
  for (Eigen::Index i = x.rows() - 1; i >= 0; --i) backward.update(x.row(i).transpose());
  EXPECT_LT((forward.sample_covariance() - expected).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((backward.sample_covariance() - expected).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(CovAccumulator, Errors) {
  ns::CovAccumulator acc(2);
  EXPECT_THROW(acc.update(Eigen::Vector3d(1, 2, 3)), seqmatch::DimensionMismatch);
  acc.update(Eigen::Vector2d(1, 2));
  EXPECT_THROW(acc.sample_covariance(), seqmatch::InsufficientData);
}

TEST(Pinv, IdentityAndDiagonal) {
  EXPECT_LT((ns::pinv(Eigen::MatrixXd::Identity(4, 4)) - Eigen::MatrixXd::Identity(4, 4)).norm(), 1e-14);
  const Eigen::MatrixXd d = Eigen::Vector2d(2.0, 0.0).asDiagonal();
  const Eigen::MatrixXd expected = Eigen::Vector2d(0.5, 0.0).asDiagonal();
  EXPECT_LT((ns::pinv(d) - expected).norm(), 1e-15);
  EXPECT_EQ(ns::symmetric_rank(d), 1);
}

TEST(Pinv, PenroseConditionsOnSingularMatrix) {
  std::mt19937_64 gen(11);
  std::normal_distribution<double> z;
  Eigen::MatrixXd a(4, 2);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = z(gen);
  const Eigen::MatrixXd m = a * a.transpose();  // rank 2 in 4 dimensions
  const Eigen::MatrixXd g = ns::pinv(m);
  EXPECT_LT((m * g * m - m).norm(), 1e-10);
  EXPECT_LT((g * m * g - g).norm(), 1e-10);
  EXPECT_LT((m * g - (m * g).transpose()).norm(), 1e-10);
  EXPECT_LT((g * m - (g * m).transpose()).norm(), 1e-10);
  EXPECT_EQ(ns::symmetric_rank(m), 2);
}

TEST(Pinv, InvertsRandomSpd) {
  std::mt19937_64 gen(3);
  std::normal_distribution<double> z;
  for (int rep = 0; rep < 20; ++rep) {
    Eigen::MatrixXd a(5, 5);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = z(gen);
    const Eigen::MatrixXd m = a * a.transpose() + 0.1 * Eigen::MatrixXd::Identity(5, 5);
    EXPECT_LT((ns::pinv(m) * m - Eigen::MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(Ols, InterceptOnly) {
  const Eigen::MatrixXd x = Eigen::MatrixXd::Ones(3, 1);
  const ns::OlsFit fit = ns::ols(x, Eigen::Vector3d(1, 2, 3));
  EXPECT_NEAR(fit.coefficients[0], 2.0, 1e-14);
  EXPECT_NEAR(fit.residual_variance, 1.0, 1e-14);
  EXPECT_EQ(fit.df_residual, 2);
  EXPECT_NEAR(fit.coefficient_variances[0], 1.0 / 3.0, 1e-14);
  EXPECT_FALSE(fit.rank_deficient);
}

TEST(Ols, NoiselessLine) {
  Eigen::MatrixXd x(4, 2);
  x << 1, 0, 1, 1, 1, 2, 1, 3;
  const ns::OlsFit fit = ns::ols(x, Eigen::Vector4d(0, 3, 6, 9));
  EXPECT_NEAR(fit.coefficients[0], 0.0, 1e-12);
  EXPECT_NEAR(fit.coefficients[1], 3.0, 1e-12);
  EXPECT_NEAR(fit.residual_variance, 0.0, 1e-20);
}

TEST(Ols, MatchesNormalEquationOracle) {
  std::mt19937_64 gen(5);
  std::normal_distribution<double> z;
  for (int rep = 0; rep < 10; ++rep) {
    Eigen::MatrixXd x(30, 4);
    Eigen::VectorXd y(30);
    for (Eigen::Index i = 0; i < 30; ++i) {
      x.row(i) << 1.0, z(gen), z(gen), z(gen);
      y[i] = 1.0 + 2.0 * x(i, 1) - x(i, 3) + z(gen);
    }
    const ns::OlsFit fit = ns::ols(x, y);
    const Eigen::VectorXd expected = oracle::normal_equations(x, y);
    EXPECT_LT((fit.coefficients - expected).cwiseAbs().maxCoeff(), 1e-9);
    const Eigen::VectorXd resid = y - x * expected;
    EXPECT_NEAR(fit.residual_variance, resid.squaredNorm() / 26.0, 1e-9);
    const Eigen::MatrixXd inv = (x.transpose() * x).fullPivLu().inverse();
    for (Eigen::Index j = 0; j < 4; ++j) {
      EXPECT_NEAR(fit.coefficient_variances[j], fit.residual_variance * inv(j, j), 1e-9);
    }
  }
}

TEST(Ols, SimpleSlopeIsSxyOverSxx) {
  Eigen::MatrixXd x(5, 2);
  Eigen::VectorXd y(5);
  const double xs[] = {0.3, 1.7, 2.2, 4.0, 5.1};
  const double ys[] = {1.0, 2.5, 2.4, 5.2, 5.0};
  double mx = 0, my = 0;
  for (int i = 0; i < 5; ++i) {
    x.row(i) << 1.0, xs[i];
    y[i] = ys[i];
    mx += xs[i] / 5;
    my += ys[i] / 5;
  }
  double sxy = 0, sxx = 0;
  for (int i = 0; i < 5; ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  EXPECT_NEAR(ns::ols(x, y).coefficients[1], sxy / sxx, 1e-12);
}

TEST(Ols, RankDeficientDesignIsFlagged) {
  Eigen::MatrixXd x(4, 3);
  x << 1, 1, 2, 1, 2, 4, 1, 3, 6, 1, 4, 8;  // third column = 2 * second
  const ns::OlsFit fit = ns::ols(x, Eigen::Vector4d(1, 2, 3, 5));
  EXPECT_TRUE(fit.rank_deficient);
  EXPECT_EQ(fit.rank, 2);
  EXPECT_EQ(fit.df_residual, 2);
  // Fitted values still match the full-rank fit on the first two columns.
  const Eigen::VectorXd reduced = oracle::normal_equations(x.leftCols(2), Eigen::Vector4d(1, 2, 3, 5));
  EXPECT_LT((x * fit.coefficients - x.leftCols(2) * reduced).norm(), 1e-10);
}
