#include "linpo/estimators.hpp"

#include <cmath>

#include <gtest/gtest.h>

#include "linpo/rng.hpp"

using namespace linpo;

TEST(ThetaEstimator, NoDataGivesZero) {
  StepEstimators est(2, 3);
  EXPECT_EQ(est.theta_hat().norm(), 0.0);
}

TEST(ThetaEstimator, SingleSampleRidgeClosedForm) {
  // (I + e1 e1')^{-1} e1 = (0.5, 0) for phi = e1, loss = 1.
  StepEstimators est(2, 3);
  est.observe(Eigen::VectorXd::Unit(2, 0), 1.0, 0);
  const Eigen::VectorXd th = est.theta_hat();
  EXPECT_NEAR(th(0), 0.5, 1e-12);
  EXPECT_NEAR(th(1), 0.0, 1e-12);
}

TEST(ThetaEstimator, RepeatedSamplesConvergeToMean) {
  // n identical samples (e1, c): theta_1 = n c / (n + 1).
  StepEstimators est(1, 2);
  const double c = 0.37;
  for (int n = 1; n <= 64; ++n) {
    est.observe(Eigen::VectorXd::Ones(1), c, 0);
    EXPECT_NEAR(est.theta_hat()(0), n * c / (n + 1.0), 1e-10);
  }
}

TEST(PsiEstimator, NoDataOrZeroValueGivesZero) {
  StepEstimators est(2, 3);
  EXPECT_EQ(est.psi_apply(Eigen::VectorXd::Ones(3)).norm(), 0.0);
  est.observe(Eigen::VectorXd::Unit(2, 0), 0.5, 1);
  EXPECT_EQ(est.psi_apply(Eigen::VectorXd::Zero(3)).norm(), 0.0);
}

TEST(PsiEstimator, ScalarRidgeClosedForm) {
  // d = 1, one transition to state s with V(s) = 3: psi_hat V = 3/2.
  StepEstimators est(1, 2);
  est.observe(Eigen::VectorXd::Ones(1), 0.0, 1);
  Eigen::VectorXd V(2);
  V << 0.0, 3.0;
  EXPECT_NEAR(est.psi_apply(V)(0), 1.5, 1e-12);
}

TEST(PsiEstimator, Linearity) {
  Rng rng(31, "est");
  StepEstimators est(3, 4);
  for (int i = 0; i < 50; ++i) {
    Eigen::VectorXd phi = rng.dirichlet(3);
    est.observe(phi, rng.uniform(), rng.uniform_int(4));
  }
  const Eigen::VectorXd V = rng.normal_vector(4);
  const Eigen::VectorXd W = rng.normal_vector(4);
  const double alpha = 0.7, beta = -1.3;
  const Eigen::VectorXd lhs = est.psi_apply(alpha * V + beta * W);
  const Eigen::VectorXd rhs = alpha * est.psi_apply(V) + beta * est.psi_apply(W);
  EXPECT_LE((lhs - rhs).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Estimators, ThetaAndPsiShareOneCovariance) {
  Estimators est(2, 1, 3);
  est.at(0).observe(Eigen::VectorXd::Unit(2, 0), 1.0, 2);
  // One observe call advanced the shared accumulator exactly once.
  EXPECT_EQ(est.at(0).cov().count(), 1);
  EXPECT_NEAR(est.at(0).cov().lambda()(0, 0), 2.0, 1e-15);
}

TEST(Estimators, IncrementalMatchesBatchRidge) {
  Rng rng(32, "est");
  const int d = 4, X = 5;
  StepEstimators est(d, X);
  Eigen::MatrixXd lambda = Eigen::MatrixXd::Identity(d, d);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(d);
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(d, X);
  for (int i = 0; i < 10000; ++i) {
    const Eigen::VectorXd phi = rng.dirichlet(d);
    const double loss = rng.uniform();
    const int next = rng.uniform_int(X);
    est.observe(phi, loss, next);
    lambda += phi * phi.transpose();
    b += phi * loss;
    M.col(next) += phi;
  }
  est.cov().refresh();
  const Eigen::VectorXd direct = lambda.ldlt().solve(b);
  EXPECT_LE((est.theta_hat() - direct).cwiseAbs().maxCoeff(), 1e-8);
  const Eigen::VectorXd V = rng.normal_vector(X);
  const Eigen::VectorXd direct_psi = lambda.ldlt().solve(M * V);
  EXPECT_LE((est.psi_apply(V) - direct_psi).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(AggregateEstimator, ClosedFormsAndLinearityInTargets) {
  AggregateThetaEstimator agg(3);
  EXPECT_EQ(agg.theta_hat().norm(), 0.0);
  agg.observe(Eigen::VectorXd::Unit(3, 0), 1.0);
  EXPECT_NEAR(agg.theta_hat()(0), 0.5, 1e-12);

  // Scaling every target by c scales the estimate by c.
  Rng rng(33, "est");
  AggregateThetaEstimator a(4), b(4);
  const double c = 2.5;
  for (int i = 0; i < 40; ++i) {
    const Eigen::VectorXd phi = rng.dirichlet(4);
    const double v = rng.uniform(0.0, 4.0);
    a.observe(phi, v);
    b.observe(phi, c * v);
  }
  EXPECT_LE((c * a.theta_hat() - b.theta_hat()).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Monitors, NoDataRewardErrorIsThetaNorm) {
  Rng rng(34, "env");
  const LinearMdp m = gen_mixture(3, 3, 2, 2, rng);
  Estimators est(3, 2, 3);
  EXPECT_NEAR(reward_error_norm(est.at(0), m, 0), m.theta[0].norm(), 1e-12);

  LinearMdp zero = m;
  zero.theta[0].setZero();
  EXPECT_EQ(reward_error_norm(est.at(0), zero, 0), 0.0);
}

TEST(Monitors, DynamicsErrorZeroValueAndNoDataBounds) {
  Rng rng(35, "env");
  const LinearMdp m = gen_mixture(3, 4, 2, 2, rng);
  Estimators est(3, 2, 4);
  EXPECT_EQ(dynamics_error_norm(est.at(0), m, 0, Eigen::VectorXd::Zero(4)), 0.0);
  // No data: ||psi_h V||_I <= sqrt(d) ||V||_inf by the normalization.
  const Eigen::VectorXd V = Eigen::VectorXd::Constant(4, 0.8);
  const double err = dynamics_error_norm(est.at(0), m, 0, V);
  EXPECT_LE(err, std::sqrt(3.0) * 0.8 + 1e-12);
}

TEST(Monitors, ErrorsShrinkWithData) {
  // Deterministic losses, spanning features: both monitors fall well below
  // their initial levels after a thousand episodes of coverage.
  Rng env_rng(36, "env");
  LinearMdp m = gen_tabular_onehot(2, 1, 1, env_rng);  // d = 2
  m.loss_noise = LossNoise::kDeterministic;
  Estimators est(2, 1, 2);
  Rng rng(37, "traj");
  const PolicyTable pi = PolicyTable::uniform(1, 2, 1);
  for (int k = 0; k < 1000; ++k) {
    // Alternate start states manually to cover both features.
    const int x = k % 2;
    const double loss = m.mean_loss(0, x, 0);
    est.at(0).observe(m.features(x, 0), loss, std::nullopt);
  }
  const double initial = m.theta[0].norm();
  EXPECT_LE(reward_error_norm(est.at(0), m, 0), 0.1 * initial + 1e-9);
  (void)pi;
  (void)rng;
}

TEST(Monitors, GoodEventFlagThresholds) {
  const GoodEventFlags none = good_event_check(0.5, 0.5, 0.5, 0.0, 0.0, 0.0);
  EXPECT_FALSE(none.e1);
  EXPECT_FALSE(none.e2);
  EXPECT_FALSE(none.qbound);
  const double inf = std::numeric_limits<double>::infinity();
  const GoodEventFlags all = good_event_check(0.5, 0.5, 0.5, inf, inf, inf);
  EXPECT_TRUE(all.e1);
  EXPECT_TRUE(all.e2);
  EXPECT_TRUE(all.qbound);
}

TEST(Monitors, SingleStatePsiConverges) {
  // Single-state MDP: psi_hat V -> psi V; the error drops below 0.05 after
  // a thousand samples.
  LinearMdp m;
  m.d = 1;
  m.H = 1;
  m.num_states = 1;
  m.num_actions = 1;
  m.x1 = 0;
  m.phi.push_back(Eigen::VectorXd::Ones(1));
  m.theta.push_back(Eigen::VectorXd::Constant(1, 0.5));
  m.psi.push_back(Eigen::MatrixXd::Ones(1, 1));
  Estimators est(1, 1, 1);
  for (int i = 0; i < 1000; ++i)
    est.at(0).observe(Eigen::VectorXd::Ones(1), 0.5, 0);
  const Eigen::VectorXd V = Eigen::VectorXd::Constant(1, 1.0);
  EXPECT_LE(dynamics_error_norm(est.at(0), m, 0, V), 0.05);
}
