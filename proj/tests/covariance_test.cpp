#include "linpo/covariance.hpp"

#include <cmath>

#include <gtest/gtest.h>

#include "linpo/rng.hpp"

using linpo::CovarianceAccumulator;
using linpo::Rng;

TEST(Covariance, FreshAccumulatorIsIdentity) {
  CovarianceAccumulator acc(3);
  EXPECT_EQ(acc.log_det(), 0.0);
  EXPECT_EQ(acc.count(), 0);
  CovarianceAccumulator acc2(2);
  Eigen::VectorXd e1 = Eigen::VectorXd::Unit(2, 0);
  EXPECT_DOUBLE_EQ(acc2.mahalanobis_inv(e1), 1.0);
  EXPECT_DOUBLE_EQ(acc2.mahalanobis(e1), 1.0);
  CovarianceAccumulator acc5(5);
  EXPECT_FALSE(acc5.det_doubled(acc5.log_det()));
}

TEST(Covariance, ZeroDimensionRejected) {
  EXPECT_THROW(CovarianceAccumulator(0), std::invalid_argument);
}

TEST(Covariance, ScalarUpdate) {
  CovarianceAccumulator acc(1);
  acc.update(Eigen::VectorXd::Ones(1));
  EXPECT_NEAR(acc.lambda()(0, 0), 2.0, 1e-15);
  EXPECT_NEAR(acc.log_det(), std::log(2.0), 1e-15);
}

TEST(Covariance, ZeroVectorOnlyBumpsCount) {
  CovarianceAccumulator acc(3);
  acc.update(Eigen::VectorXd::Unit(3, 1));
  const double ld = acc.log_det();
  const Eigen::MatrixXd inv = acc.lambda_inv();
  acc.update(Eigen::VectorXd::Zero(3));
  EXPECT_EQ(acc.count(), 2);
  EXPECT_EQ(acc.log_det(), ld);
  EXPECT_TRUE(acc.lambda_inv().isApprox(inv, 0.0));
}

TEST(Covariance, TwoUnitUpdatesInvertDiag) {
  // Lambda = diag(3, 1) after two e1 updates; inverse entry (0,0) is 1/3.
  CovarianceAccumulator acc(2);
  acc.update(Eigen::VectorXd::Unit(2, 0));
  acc.update(Eigen::VectorXd::Unit(2, 0));
  EXPECT_NEAR(acc.lambda_inv()(0, 0), 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(acc.lambda_inv()(1, 1), 1.0, 1e-12);
}

TEST(Covariance, MahalanobisAfterOneUpdate) {
  CovarianceAccumulator acc(2);
  acc.update(Eigen::VectorXd::Unit(2, 0));
  const Eigen::VectorXd e1 = Eigen::VectorXd::Unit(2, 0);
  EXPECT_NEAR(acc.mahalanobis_inv(e1), 1.0 / std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(acc.mahalanobis(e1), std::sqrt(2.0), 1e-12);
  EXPECT_DOUBLE_EQ(acc.mahalanobis_inv(Eigen::VectorXd::Zero(2)), 0.0);
  EXPECT_DOUBLE_EQ(acc.mahalanobis(Eigen::VectorXd::Zero(2)), 0.0);
}

TEST(Covariance, DimensionMismatchRejected) {
  CovarianceAccumulator acc(2);
  EXPECT_THROW(acc.update(Eigen::VectorXd::Zero(3)), std::invalid_argument);
  EXPECT_THROW(acc.mahalanobis(Eigen::VectorXd::Zero(1)), std::invalid_argument);
}

TEST(Covariance, DetDoubledBoundaryIsInclusive) {
  CovarianceAccumulator acc(1);
  acc.update(Eigen::VectorXd::Ones(1));  // log_det = ln 2
  EXPECT_TRUE(acc.det_doubled(0.0));
  CovarianceAccumulator below(1);
  Eigen::VectorXd v(1);
  v << std::sqrt(std::exp(0.5) - 1.0);  // log_det = 0.5 < ln 2
  below.update(v);
  EXPECT_FALSE(below.det_doubled(0.0));
}

TEST(Covariance, DetDoubledFromSnapshot) {
  // Three unit updates in 1d: Lambda = 4; snapshot at Lambda = 2 has doubled.
  CovarianceAccumulator acc(1);
  acc.update(Eigen::VectorXd::Ones(1));
  const double snap = acc.log_det();  // ln 2
  acc.update(Eigen::VectorXd::Ones(1));
  acc.update(Eigen::VectorXd::Ones(1));
  EXPECT_TRUE(acc.det_doubled(snap));
  EXPECT_THROW(acc.det_doubled(acc.log_det() + 1.0), std::invalid_argument);
}

TEST(Covariance, RefreshIsIdempotentAndTightensResidual) {
  Rng rng(7, "cov");
  CovarianceAccumulator acc(6);
  for (int i = 0; i < 10000; ++i) {
    Eigen::VectorXd v = rng.normal_vector(6);
    v.normalize();
    acc.update(v);
  }
  acc.refresh();
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(6, 6);
  const double residual = (acc.lambda() * acc.lambda_inv() - id).cwiseAbs().maxCoeff();
  EXPECT_LE(residual, 1e-10);

  const Eigen::MatrixXd inv = acc.lambda_inv();
  const double ld = acc.log_det();
  acc.refresh();
  EXPECT_TRUE(acc.lambda_inv().isApprox(inv, 0.0));
  EXPECT_EQ(acc.log_det(), ld);
}

TEST(Covariance, InverseResidualStaysTightBetweenRefreshes) {
  Rng rng(11, "cov");
  CovarianceAccumulator acc(4);
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(4, 4);
  for (int i = 0; i < 3000; ++i) {
    Eigen::VectorXd v = rng.normal_vector(4);
    v.normalize();
    acc.update(v);
    if (i % 100 == 0) {
      const double residual =
          (acc.lambda() * acc.lambda_inv() - id).cwiseAbs().maxCoeff();
      EXPECT_LE(residual, 1e-8);
    }
  }
}

TEST(Covariance, RankOneUpdateMatchesFullInversion) {
  // Oracle equivalence at refresh cadence 1: re-invert from scratch after
  // every update and compare entrywise.
  Rng rng(13, "cov");
  CovarianceAccumulator acc(5);
  Eigen::MatrixXd lambda = Eigen::MatrixXd::Identity(5, 5);
  for (int i = 0; i < 400; ++i) {
    Eigen::VectorXd v = rng.normal_vector(5);
    v *= rng.uniform() / v.norm();
    acc.update(v);
    lambda += v * v.transpose();
    const Eigen::MatrixXd direct = lambda.inverse();
    EXPECT_LE((acc.lambda_inv() - direct).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(Covariance, IncrementalLogDetMatchesBatch) {
  Rng rng(17, "cov");
  CovarianceAccumulator acc(4);
  for (int i = 0; i < 100000; ++i) {
    Eigen::VectorXd v = rng.normal_vector(4);
    v *= rng.uniform() / v.norm();  // ||v|| <= 1
    acc.update(v);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(acc.lambda());
  const double batch = es.eigenvalues().array().log().sum();
  EXPECT_NEAR(acc.log_det(), batch, 1e-6);
}

TEST(Covariance, MahalanobisInvNonIncreasingUnderUpdates) {
  Rng rng(19, "cov");
  CovarianceAccumulator acc(3);
  const Eigen::VectorXd probe = rng.normal_vector(3);
  double prev = acc.mahalanobis_inv(probe);
  for (int i = 0; i < 200; ++i) {
    Eigen::VectorXd v = rng.normal_vector(3);
    v.normalize();
    acc.update(v);
    const double cur = acc.mahalanobis_inv(probe);
    EXPECT_LE(cur, prev + 1e-12);
    prev = cur;
  }
}

TEST(Covariance, LogDetNonDecreasingAndBoundedFiringCount) {
  // det_doubled fires at most ceil(1.5 * dim * log(2K)) times over K
  // unit-norm updates.
  Rng rng(23, "cov");
  const int dim = 3;
  const long K = 100000;
  CovarianceAccumulator acc(dim);
  double snapshot = acc.log_det();
  long fires = 0;
  double prev_ld = acc.log_det();
  for (long i = 0; i < K; ++i) {
    Eigen::VectorXd v = rng.normal_vector(dim);
    v.normalize();
    acc.update(v);
    EXPECT_GE(acc.log_det(), prev_ld - 1e-12);
    prev_ld = acc.log_det();
    if (acc.det_doubled(snapshot)) {
      ++fires;
      snapshot = acc.log_det();
    }
  }
  const double bound = std::ceil(1.5 * dim * std::log(2.0 * K));
  EXPECT_LE(fires, bound);
}

TEST(Covariance, SnapshotIsFrozen) {
  CovarianceAccumulator acc(2);
  acc.update(Eigen::VectorXd::Unit(2, 0));
  const linpo::CovarianceSnapshot snap = acc.snapshot();
  acc.update(Eigen::VectorXd::Unit(2, 0));
  acc.update(Eigen::VectorXd::Unit(2, 1));
  EXPECT_NEAR(snap.log_det, std::log(2.0), 1e-15);
  EXPECT_NEAR(snap.inv(0, 0), 0.5, 1e-12);
  EXPECT_NEAR(snap.inv(1, 1), 1.0, 1e-12);
  // Symmetric square root of the frozen inverse.
  const Eigen::MatrixXd rt = snap.inv_sqrt();
  EXPECT_TRUE((rt * rt).isApprox(snap.inv, 1e-12));
}
