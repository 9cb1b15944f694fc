#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "linpo/covariance.hpp"
#include "linpo/mdp.hpp"

namespace linpo {

/// Regularized least-squares state per horizon step. The loss estimator
/// theta_hat and the dynamics backup operator psi_hat share one covariance
/// accumulator, exactly as the algorithms use a single Lambda_h for both.
///
/// psi_hat is stored through the d x |X| cross moment M = sum phi e_{x'}^T,
/// so applying it to a value table costs O(d |X|) and the product
/// Lambda^{-1} M is never materialized.
class StepEstimators {
 public:
  StepEstimators(int d, int num_states)
      : cov_(d),
        b_(Eigen::VectorXd::Zero(d)),
        cross_(Eigen::MatrixXd::Zero(d, num_states)) {}

  /// Ingests one transition: always updates the covariance; the loss moment
  /// and cross moment update only when the corresponding data was observed
  /// (aggregate feedback hides per-step losses; the last step has no
  /// successor state).
  void observe(const Eigen::VectorXd& phi, std::optional<double> loss,
               std::optional<int> next_state) {
    if (phi.size() != cov_.dim())
      throw std::invalid_argument("StepEstimators: feature dimension mismatch");
    if (phi.norm() > 1.0 + 1e-12)
      throw std::invalid_argument("StepEstimators: ||phi|| exceeds 1");
    if (loss && (*loss < -1e-12 || *loss > 1.0 + 1e-12))
      throw std::invalid_argument("StepEstimators: loss outside [0,1]");
    if (next_state && (*next_state < 0 || *next_state >= cross_.cols()))
      throw std::invalid_argument("StepEstimators: next state out of range");
    cov_.update(phi);
    if (loss) b_ += phi * *loss;
    if (next_state) cross_.col(*next_state) += phi;
  }

  /// theta_hat = Lambda^{-1} sum phi * loss; zero before any data.
  Eigen::VectorXd theta_hat() const { return cov_.lambda_inv() * b_; }

  /// psi_hat V = Lambda^{-1} sum phi V(x'); linear in V.
  Eigen::VectorXd psi_apply(const Eigen::VectorXd& V) const {
    return cov_.lambda_inv() * (cross_ * V);
  }

  const CovarianceAccumulator& cov() const { return cov_; }
  CovarianceAccumulator& cov() { return cov_; }
  const Eigen::VectorXd& loss_moment() const { return b_; }
  const Eigen::MatrixXd& cross_moment() const { return cross_; }

 private:
  CovarianceAccumulator cov_;
  Eigen::VectorXd b_;
  Eigen::MatrixXd cross_;
};

/// One estimator set per run: a StepEstimators per horizon.
class Estimators {
 public:
  Estimators(int d, int H, int num_states) {
    steps_.reserve(H);
    for (int h = 0; h < H; ++h) steps_.emplace_back(d, num_states);
  }

  StepEstimators& at(int h) { return steps_[h]; }
  const StepEstimators& at(int h) const { return steps_[h]; }
  int horizon() const { return static_cast<int>(steps_.size()); }

 private:
  std::vector<StepEstimators> steps_;
};

/// Ridge regression of the aggregate episode loss v on concatenated episode
/// features phi in R^{dH} (aggregate bandit feedback).
class AggregateThetaEstimator {
 public:
  explicit AggregateThetaEstimator(int dim)
      : cov_(dim), moment_(Eigen::VectorXd::Zero(dim)) {}

  void observe(const Eigen::VectorXd& phi_concat, double v) {
    cov_.update(phi_concat);
    moment_ += phi_concat * v;
  }

  Eigen::VectorXd theta_hat() const { return cov_.lambda_inv() * moment_; }

  const CovarianceAccumulator& cov() const { return cov_; }
  CovarianceAccumulator& cov() { return cov_; }

 private:
  CovarianceAccumulator cov_;
  Eigen::VectorXd moment_;
};

/// ||theta_h - theta_hat||_{Lambda_h}: the reward-error monitor against the
/// ground-truth environment.
inline double reward_error_norm(const StepEstimators& est, const LinearMdp& mdp,
                                int h) {
  return est.cov().mahalanobis(mdp.theta[h] - est.theta_hat());
}

/// ||(psi_h - psi_hat) V||_{Lambda_h} with psi_h V = sum_x psi_h(x) V(x)
/// computed exactly from the environment tables.
inline double dynamics_error_norm(const StepEstimators& est,
                                  const LinearMdp& mdp, int h,
                                  const Eigen::VectorXd& V) {
  const Eigen::VectorXd exact = mdp.psi[h] * V;
  return est.cov().mahalanobis(exact - est.psi_apply(V));
}

struct GoodEventFlags {
  bool e1 = false;
  bool e2 = false;
  bool qbound = false;
};

/// Flags the monitored errors against thresholds: e1 for the reward error,
/// e2 for the dynamics error, qbound for the sup norm of the current Q.
inline GoodEventFlags good_event_check(double reward_err, double dynamics_err,
                                       double q_sup, double beta_r,
                                       double beta_p, double beta_q) {
  return {reward_err <= beta_r, dynamics_err <= beta_p, q_sup <= beta_q};
}

}  // namespace linpo
