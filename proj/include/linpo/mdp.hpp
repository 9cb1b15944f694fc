#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "linpo/errors.hpp"
#include "linpo/rng.hpp"

namespace linpo {

enum class LossNoise { kDeterministic, kBernoulli };

/// Finite linear MDP: losses and transitions are linear in a known
/// d-dimensional feature map,
///   loss_h(x,a) = phi(x,a)' theta_h,   P_h(x'|x,a) = phi(x,a)' psi_h(x').
/// Immutable after construction; shareable read-only across threads.
struct LinearMdp {
  int d = 0;
  int H = 0;
  int num_states = 0;
  int num_actions = 0;
  int x1 = 0;
  LossNoise loss_noise = LossNoise::kBernoulli;
  std::vector<Eigen::VectorXd> phi;    // (x * num_actions + a) -> R^d
  std::vector<Eigen::VectorXd> theta;  // h -> R^d
  std::vector<Eigen::MatrixXd> psi;    // h -> d x num_states, column x' is psi_h(x')

  const Eigen::VectorXd& features(int x, int a) const {
    return phi[static_cast<size_t>(x) * num_actions + a];
  }

  double mean_loss(int h, int x, int a) const {
    return features(x, a).dot(theta[h]);
  }

  /// The transition row phi(x,a)' psi_h, with tiny negatives clamped and the
  /// row renormalized. Deviations beyond tolerance are a model error, never
  /// silently fixed.
  Eigen::VectorXd transition_dist(int h, int x, int a) const {
    Eigen::VectorXd p = psi[h].transpose() * features(x, a);
    double sum = 0.0;
    for (int i = 0; i < p.size(); ++i) {
      if (p(i) < -1e-12)
        throw ModelError("transition_dist: negative probability at (h=" +
                         std::to_string(h) + ", x=" + std::to_string(x) +
                         ", a=" + std::to_string(a) + ")");
      p(i) = std::max(p(i), 0.0);
      sum += p(i);
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw ModelError("transition_dist: row sums to " + std::to_string(sum));
    return p / sum;
  }
};

/// Per-horizon stochastic policy over the finite state space.
struct PolicyTable {
  int H = 0;
  int num_states = 0;
  int num_actions = 0;
  std::vector<Eigen::VectorXd> probs;  // (h * num_states + x) -> simplex over actions

  static PolicyTable uniform(int H, int num_states, int num_actions) {
    PolicyTable pi{H, num_states, num_actions, {}};
    pi.probs.assign(static_cast<size_t>(H) * num_states,
                    Eigen::VectorXd::Constant(num_actions, 1.0 / num_actions));
    return pi;
  }

  Eigen::VectorXd& row(int h, int x) {
    return probs[static_cast<size_t>(h) * num_states + x];
  }
  const Eigen::VectorXd& row(int h, int x) const {
    return probs[static_cast<size_t>(h) * num_states + x];
  }

  void reset_uniform() {
    for (auto& r : probs) r.setConstant(1.0 / num_actions);
  }
};

/// Contraction coefficients rho(h,x,a) in [0,1]; rho == 1 is the identity
/// (no contraction), rho == 0 fully truncates.
struct ContractionMap {
  int H = 0;
  int num_states = 0;
  int num_actions = 0;
  std::vector<double> rho_;  // (h * X + x) * A + a

  static ContractionMap ones(int H, int num_states, int num_actions) {
    ContractionMap c{H, num_states, num_actions, {}};
    c.rho_.assign(static_cast<size_t>(H) * num_states * num_actions, 1.0);
    return c;
  }

  double rho(int h, int x, int a) const {
    return rho_[(static_cast<size_t>(h) * num_states + x) * num_actions + a];
  }
  double& rho(int h, int x, int a) {
    return rho_[(static_cast<size_t>(h) * num_states + x) * num_actions + a];
  }
};

struct TrajectoryStep {
  int state = 0;
  int action = 0;
  double loss_sample = 0.0;
};

struct Trajectory {
  std::vector<TrajectoryStep> steps;  // length H
  double aggregate_loss = 0.0;
};

/// Checks the normalization and validity invariants; returns a list of
/// violations (empty means valid).
inline std::vector<std::string> validate(const LinearMdp& mdp) {
  std::vector<std::string> out;
  const double sqrt_d = std::sqrt(static_cast<double>(mdp.d));
  for (int x = 0; x < mdp.num_states; ++x)
    for (int a = 0; a < mdp.num_actions; ++a)
      if (mdp.features(x, a).norm() > 1.0 + 1e-12)
        out.push_back("||phi(" + std::to_string(x) + "," + std::to_string(a) +
                      ")|| = " + std::to_string(mdp.features(x, a).norm()) + " > 1");
  for (int h = 0; h < mdp.H; ++h) {
    if (mdp.theta[h].norm() > sqrt_d + 1e-12)
      out.push_back("||theta_" + std::to_string(h) + "|| > sqrt(d)");
    if (mdp.psi[h].cwiseAbs().rowwise().sum().norm() > sqrt_d + 1e-9)
      out.push_back("||sum_x |psi_" + std::to_string(h) + "(x)||| > sqrt(d)");
  }
  for (int h = 0; h < mdp.H; ++h)
    for (int x = 0; x < mdp.num_states; ++x)
      for (int a = 0; a < mdp.num_actions; ++a) {
        const Eigen::VectorXd row = mdp.psi[h].transpose() * mdp.features(x, a);
        if (row.minCoeff() < -1e-12)
          out.push_back("P_" + std::to_string(h) + "(.|" + std::to_string(x) +
                        "," + std::to_string(a) + ") has a negative entry");
        if (std::abs(row.sum() - 1.0) > 1e-9)
          out.push_back("P_" + std::to_string(h) + "(.|" + std::to_string(x) +
                        "," + std::to_string(a) + ") sums to " +
                        std::to_string(row.sum()));
        const double ell = mdp.mean_loss(h, x, a);
        if (ell < -1e-12 || ell > 1.0 + 1e-12)
          out.push_back("loss_" + std::to_string(h) + "(" + std::to_string(x) +
                        "," + std::to_string(a) + ") = " + std::to_string(ell) +
                        " outside [0,1]");
      }
  return out;
}

/// Samples one episode under the given policy. Losses are the exact means in
/// deterministic mode and Bernoulli draws with those means otherwise.
inline Trajectory sample_episode(const LinearMdp& mdp, const PolicyTable& policy,
                                 Rng& rng) {
  Trajectory traj;
  traj.steps.reserve(mdp.H);
  int x = mdp.x1;
  for (int h = 0; h < mdp.H; ++h) {
    const int a = rng.categorical(policy.row(h, x));
    const double mean = mdp.mean_loss(h, x, a);
    double loss = mean;
    if (mdp.loss_noise == LossNoise::kBernoulli)
      loss = rng.uniform() < mean ? 1.0 : 0.0;
    traj.steps.push_back({x, a, loss});
    traj.aggregate_loss += loss;
    if (h + 1 < mdp.H) x = rng.categorical(mdp.transition_dist(h, x, a));
  }
  return traj;
}

/// Exact policy evaluation by backward recursion. With a contraction the
/// recursion runs on the contracted (sub-stochastic) MDP
///   V_h(x) = sum_a pi(a|x) rho(h,x,a) [loss + sum_x' P(x'|x,a) V_{h+1}(x')],
/// whose value lower-bounds the true one. Returns H+1 tables, V[H] == 0.
inline std::vector<Eigen::VectorXd> policy_value_dp(
    const LinearMdp& mdp, const PolicyTable& policy,
    const ContractionMap* contraction = nullptr) {
  std::vector<Eigen::VectorXd> V(mdp.H + 1,
                                 Eigen::VectorXd::Zero(mdp.num_states));
  for (int h = mdp.H - 1; h >= 0; --h) {
    for (int x = 0; x < mdp.num_states; ++x) {
      double vx = 0.0;
      for (int a = 0; a < mdp.num_actions; ++a) {
        const double pa = policy.row(h, x)(a);
        if (pa == 0.0) continue;
        const double rho = contraction ? contraction->rho(h, x, a) : 1.0;
        if (rho == 0.0) continue;
        const double backup =
            mdp.mean_loss(h, x, a) +
            (mdp.psi[h].transpose() * mdp.features(x, a)).dot(V[h + 1]);
        vx += pa * rho * backup;
      }
      V[h](x) = vx;
    }
  }
  return V;
}

/// Bellman-optimal deterministic policy (losses are minimized); ties break
/// toward the lowest action index. Returns the policy and V* = V_1(x1).
inline std::pair<PolicyTable, double> optimal_policy_dp(const LinearMdp& mdp) {
  PolicyTable pi = PolicyTable::uniform(mdp.H, mdp.num_states, mdp.num_actions);
  Eigen::VectorXd Vnext = Eigen::VectorXd::Zero(mdp.num_states);
  for (int h = mdp.H - 1; h >= 0; --h) {
    Eigen::VectorXd Vh(mdp.num_states);
    for (int x = 0; x < mdp.num_states; ++x) {
      double best = std::numeric_limits<double>::infinity();
      int best_a = 0;
      for (int a = 0; a < mdp.num_actions; ++a) {
        const double q =
            mdp.mean_loss(h, x, a) +
            (mdp.psi[h].transpose() * mdp.features(x, a)).dot(Vnext);
        if (q < best) {
          best = q;
          best_a = a;
        }
      }
      Vh(x) = best;
      pi.row(h, x).setZero();
      pi.row(h, x)(best_a) = 1.0;
    }
    Vnext = Vh;
  }
  return {pi, Vnext(mdp.x1)};
}

/// State distributions mu_h under the (optionally contracted) dynamics;
/// sub-probability flows when a contraction is given. Returns H tables.
inline std::vector<Eigen::VectorXd> state_occupancy(
    const LinearMdp& mdp, const PolicyTable& policy,
    const ContractionMap* contraction = nullptr) {
  std::vector<Eigen::VectorXd> mu(mdp.H, Eigen::VectorXd::Zero(mdp.num_states));
  mu[0](mdp.x1) = 1.0;
  for (int h = 0; h + 1 < mdp.H; ++h) {
    for (int x = 0; x < mdp.num_states; ++x) {
      if (mu[h](x) == 0.0) continue;
      for (int a = 0; a < mdp.num_actions; ++a) {
        const double w = mu[h](x) * policy.row(h, x)(a) *
                         (contraction ? contraction->rho(h, x, a) : 1.0);
        if (w == 0.0) continue;
        mu[h + 1] += w * (mdp.psi[h].transpose() * mdp.features(x, a));
      }
    }
  }
  return mu;
}

/// Expected contracted feature occupancy: the concatenation over h of
/// E[rho_h phi(x_h,a_h)] under the contracted dynamics, stacked into R^{dH}.
inline Eigen::VectorXd truncated_feature_occupancy(
    const LinearMdp& mdp, const PolicyTable& policy,
    const ContractionMap& contraction) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(mdp.d * mdp.H);
  const std::vector<Eigen::VectorXd> mu =
      state_occupancy(mdp, policy, &contraction);
  for (int h = 0; h < mdp.H; ++h)
    for (int x = 0; x < mdp.num_states; ++x) {
      if (mu[h](x) == 0.0) continue;
      for (int a = 0; a < mdp.num_actions; ++a) {
        const double w =
            mu[h](x) * policy.row(h, x)(a) * contraction.rho(h, x, a);
        if (w == 0.0) continue;
        out.segment(h * mdp.d, mdp.d) += w * mdp.features(x, a);
      }
    }
  return out;
}

/// |LHS - RHS| of the extended value-difference identity
///   V^pi_1(x1) - Vhat_1(x1)
///     = E_pi[ sum_h sum_a Qhat_h(x_h,a) (pi(a|x_h) - pihat(a|x_h)) ]
///     + E_pi[ sum_h loss_h + P_h Vhat_{h+1} - Qhat_h at (x_h,a_h) ],
/// with Vhat_h(x) = sum_a pihat(a|x) Qhat_h(x,a). Both sides are computed by
/// exact forward/backward passes; the residual is floating-point noise only.
inline double value_difference_residual(
    const LinearMdp& mdp, const PolicyTable& pi, const PolicyTable& pihat,
    const std::vector<Eigen::MatrixXd>& Qhat /* h -> X x A */) {
  std::vector<Eigen::VectorXd> Vhat(mdp.H + 1,
                                    Eigen::VectorXd::Zero(mdp.num_states));
  for (int h = mdp.H - 1; h >= 0; --h)
    for (int x = 0; x < mdp.num_states; ++x)
      Vhat[h](x) = pihat.row(h, x).dot(Qhat[h].row(x));

  const std::vector<Eigen::VectorXd> V = policy_value_dp(mdp, pi);
  const double lhs = V[0](mdp.x1) - Vhat[0](mdp.x1);

  const std::vector<Eigen::VectorXd> mu = state_occupancy(mdp, pi);
  double rhs = 0.0;
  for (int h = 0; h < mdp.H; ++h)
    for (int x = 0; x < mdp.num_states; ++x) {
      if (mu[h](x) == 0.0) continue;
      for (int a = 0; a < mdp.num_actions; ++a) {
        rhs += mu[h](x) * Qhat[h](x, a) * (pi.row(h, x)(a) - pihat.row(h, x)(a));
        const double pa = mu[h](x) * pi.row(h, x)(a);
        if (pa == 0.0) continue;
        const double backup =
            mdp.mean_loss(h, x, a) +
            (mdp.psi[h].transpose() * mdp.features(x, a)).dot(Vhat[h + 1]);
        rhs += pa * (backup - Qhat[h](x, a));
      }
    }
  return std::abs(lhs - rhs);
}

/// Canonical valid instance: the one-hot tabular embedding with
/// d = |X| |A|, indicator features, random transition tables and
/// i.i.d. uniform [0,1] losses.
inline LinearMdp gen_tabular_onehot(int num_states, int num_actions, int H,
                                    Rng& rng,
                                    LossNoise noise = LossNoise::kBernoulli) {
  LinearMdp mdp;
  mdp.d = num_states * num_actions;
  mdp.H = H;
  mdp.num_states = num_states;
  mdp.num_actions = num_actions;
  mdp.x1 = 0;
  mdp.loss_noise = noise;
  for (int x = 0; x < num_states; ++x)
    for (int a = 0; a < num_actions; ++a) {
      Eigen::VectorXd e = Eigen::VectorXd::Zero(mdp.d);
      e(x * num_actions + a) = 1.0;
      mdp.phi.push_back(std::move(e));
    }
  for (int h = 0; h < H; ++h) {
    Eigen::VectorXd th(mdp.d);
    for (int i = 0; i < mdp.d; ++i) th(i) = rng.uniform();
    mdp.theta.push_back(std::move(th));
    Eigen::MatrixXd ps = Eigen::MatrixXd::Zero(mdp.d, num_states);
    for (int x = 0; x < num_states; ++x)
      for (int a = 0; a < num_actions; ++a)
        ps.row(x * num_actions + a) = rng.dirichlet(num_states).transpose();
    mdp.psi.push_back(std::move(ps));
  }
  return mdp;
}

/// Valid-by-convexity family: features on the d-simplex, psi_h columns built
/// from d latent distributions over states, uniform [0,1] loss parameters.
inline LinearMdp gen_mixture(int d, int num_states, int num_actions, int H,
                             Rng& rng, LossNoise noise = LossNoise::kBernoulli) {
  LinearMdp mdp;
  mdp.d = d;
  mdp.H = H;
  mdp.num_states = num_states;
  mdp.num_actions = num_actions;
  mdp.x1 = 0;
  mdp.loss_noise = noise;
  for (int x = 0; x < num_states; ++x)
    for (int a = 0; a < num_actions; ++a) mdp.phi.push_back(rng.dirichlet(d));
  for (int h = 0; h < H; ++h) {
    Eigen::VectorXd th(d);
    for (int i = 0; i < d; ++i) th(i) = rng.uniform();
    mdp.theta.push_back(std::move(th));
    Eigen::MatrixXd ps(d, num_states);
    for (int j = 0; j < d; ++j) ps.row(j) = rng.dirichlet(num_states).transpose();
    mdp.psi.push_back(std::move(ps));
  }
  return mdp;
}

}  // namespace linpo
