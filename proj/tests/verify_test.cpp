#include "linpo/verify.hpp"

#include <cmath>

#include <gtest/gtest.h>

using namespace linpo;
using verify::CheckResult;

TEST(VerifySuite, LogisticChecksPass) {
  EXPECT_TRUE(verify::check_logistic_linear().passed);
  EXPECT_TRUE(verify::check_logistic_quadratic().passed);
}

TEST(VerifySuite, LogisticLinearKnownPoint) {
  // beta_w = 4, ln K = 2: observed max ~ 0.25, bound 2*2/4 = 1.
  const double K = std::exp(2.0);
  double best = 0.0;
  for (int i = 0; i <= 100000; ++i) {
    const double y = 5.0 * i / 100000.0;
    best = std::max(best, y * contraction_sigmoid(y, 4.0, K));
  }
  EXPECT_LE(best, 1.0);
  EXPECT_NEAR(best, 0.25, 0.15);
}

TEST(VerifySuite, MatrixAndSqrtChecksPass) {
  Rng rng1(1001, "verify");
  EXPECT_TRUE(verify::check_matrix_norm_inequality(rng1).passed);
  Rng rng2(1002, "verify");
  EXPECT_TRUE(verify::check_sqrt_lipschitz(rng2).passed);
}

TEST(VerifySuite, EllipticalPotentialPassesAndHandComputedCase) {
  Rng rng(1003, "verify");
  EXPECT_TRUE(verify::check_elliptical_potential(rng).passed);
  // d' = 1, z_t = 1, T = 3: 1 + 1/sqrt(2) + 1/sqrt(3) <= sqrt(6 ln 4).
  CovarianceAccumulator acc(1);
  double sum = 0.0;
  for (int t = 0; t < 3; ++t) {
    sum += acc.mahalanobis_inv(Eigen::VectorXd::Ones(1));
    acc.update(Eigen::VectorXd::Ones(1));
  }
  EXPECT_NEAR(sum, 1.0 + 1.0 / std::sqrt(2.0) + 1.0 / std::sqrt(3.0), 1e-12);
  EXPECT_LE(sum, std::sqrt(6.0 * std::log(4.0)));
}

TEST(VerifySuite, OmdAndValueDifferencePass) {
  Rng rng1(1004, "verify");
  EXPECT_TRUE(verify::check_omd_bound(rng1).passed);
  Rng rng2(1005, "verify");
  EXPECT_TRUE(verify::check_value_difference(rng2).passed);
}

TEST(VerifySuite, ContractedOptimismPasses) {
  Rng rng(1006, "verify");
  const CheckResult r = verify::check_contracted_optimism(rng);
  EXPECT_TRUE(r.passed);
  EXPECT_GE(r.worst_margin, -1e-10);
}

TEST(VerifySuite, ConcentrationChecksPass) {
  Rng rng1(1007, "verify");
  EXPECT_TRUE(verify::check_gaussian_anticoncentration(rng1).passed);
  Rng rng2(1008, "verify");
  EXPECT_TRUE(verify::check_gaussian_norm(rng2).passed);
  Rng rng3(1009, "verify");
  EXPECT_TRUE(verify::check_bernstein(rng3).passed);
}

TEST(VerifySuite, SingleGaussianAnticoncentrationConstants) {
  // m = 1: P(g >= 1) ~ 0.1587 >= 1 - e^{-1/9} ~ 0.1054.
  EXPECT_GE(0.1587, 1.0 - std::exp(-1.0 / 9.0));
}

TEST(VerifySuite, RuntimeInvariantsCheckPasses) {
  const CheckResult r = verify::check_runtime_optimism_and_qbound({});
  EXPECT_TRUE(r.passed) << r.details << " margin " << r.worst_margin;
  EXPECT_GT(r.trials, 0);
}

TEST(VerifySuite, RunAllProducesJsonReport) {
  const auto results = verify::run_all("logistic");
  ASSERT_EQ(results.size(), 2u);
  const auto j = verify::to_json(results);
  EXPECT_EQ(j.size(), 2u);
  EXPECT_TRUE(j[0].contains("worst_margin"));
  EXPECT_TRUE(j[0].at("passed").get<bool>());
}
