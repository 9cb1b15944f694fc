#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "linpo/covariance.hpp"
#include "linpo/errors.hpp"
#include "linpo/estimators.hpp"
#include "linpo/mdp.hpp"
#include "linpo/rng.hpp"
#include "linpo/run_record.hpp"

namespace linpo {

enum class Variant { kCfpo, kRepo, kDepo };
enum class Feedback { kBandit, kFull, kAggregate };

struct Hyperparams {
  Variant variant = Variant::kCfpo;
  double delta = 0.1;
  double beta_r = 0.0;
  double beta_p = 0.0;
  double beta_q = 0.0;
  double beta_b = 0.0;
  double beta_w = 0.0;
  double beta_zeta = 0.0;
  double eta_o = 0.0;
  double eta_x = 0.0;
  int m = 1;          // ensemble size (REPO); DEPO always uses 2dH arms
  double scale = 1.0;  // multiplier on beta_r, beta_p; derived values follow
};

/// Theory values for all hyperparameters. beta_r and beta_p are multiplied
/// by `scale`; beta_b, beta_w and the step sizes are derived from the scaled
/// values. Natural logarithms throughout.
inline Hyperparams hyperparams_theory(int d, int H, long K, int num_actions,
                                      double delta, Variant variant,
                                      double scale = 1.0) {
  if (K < 2) throw std::invalid_argument("hyperparams_theory: K must be >= 2");
  if (!(delta > 0.0 && delta < 1.0))
    throw std::invalid_argument("hyperparams_theory: delta must be in (0,1)");
  if (!(scale > 0.0))
    throw std::invalid_argument("hyperparams_theory: scale must be positive");

  Hyperparams hp;
  hp.variant = variant;
  hp.delta = delta;
  hp.scale = scale;
  const double dd = d, HH = H, KK = static_cast<double>(K);
  const double A = num_actions;
  hp.beta_q = 2.0 * HH;
  hp.eta_o = std::sqrt(3.0 * dd * HH * std::log(2.0 * KK) * std::log(A) /
                       (KK * hp.beta_q * hp.beta_q));

  switch (variant) {
    case Variant::kCfpo:
      hp.m = 1;
      hp.beta_r = scale * 2.0 * std::sqrt(2.0 * dd * std::log(6.0 * KK * HH / delta));
      hp.beta_p = scale * 28.0 * HH * dd *
                  std::sqrt(std::log(10.0 * std::pow(KK, 5) * HH / delta));
      hp.beta_b = hp.beta_r + hp.beta_p;
      hp.beta_w = 4.0 * (hp.beta_r + hp.beta_p) * std::log(KK);
      break;
    case Variant::kRepo:
    case Variant::kDepo: {
      hp.m = variant == Variant::kRepo
                 ? static_cast<int>(std::ceil(9.0 * std::log(7.0 * KK / delta)))
                 : 2 * d * H;
      hp.beta_r = scale * 2.0 * std::sqrt(2.0 * dd * std::log(12.0 * KK * HH / delta));
      hp.beta_p = scale * 12.0 * hp.beta_q *
                  std::sqrt(dd * std::log(60.0 * std::pow(KK, 3) * hp.beta_q / delta));
      hp.beta_zeta = std::sqrt(6.0 * dd * std::log(6.0 * hp.m * HH * KK / delta));
      hp.beta_w = std::sqrt(HH) * (hp.beta_r + hp.beta_p) * hp.beta_zeta +
                  hp.beta_r + hp.beta_p;
      hp.eta_x = std::sqrt(3.0 * dd * HH * std::log(2.0 * KK) *
                           std::log(static_cast<double>(hp.m)) /
                           (KK * hp.beta_q * hp.beta_q));
      break;
    }
  }
  return hp;
}

/// One entropy-regularized mirror descent step on the simplex:
/// p'(a) proportional to p(a) exp(-eta q(a)). Exact simplex output,
/// invariant under adding a constant to q. Uses max-shift normalization;
/// steps with eta * max|q| > 50 are rejected as a numerical fatal (never
/// reached while the Q-bound invariant holds).
inline Eigen::VectorXd omd_step(const Eigen::VectorXd& p,
                                const Eigen::VectorXd& q, double eta) {
  if (p.size() != q.size())
    throw std::invalid_argument("omd_step: dimension mismatch");
  if (p.minCoeff() < -1e-12 || std::abs(p.sum() - 1.0) > 1e-9)
    throw std::invalid_argument("omd_step: input is not on the simplex");
  if (eta < 0.0) throw std::invalid_argument("omd_step: eta must be nonnegative");
  if (q.size() > 0 && eta * q.cwiseAbs().maxCoeff() > 50.0)
    throw NumericalError("omd_step: eta * max|q| exceeds the overflow guard");

  const double neg_inf = -std::numeric_limits<double>::infinity();
  Eigen::VectorXd logit(p.size());
  double mx = neg_inf;
  for (int i = 0; i < p.size(); ++i) {
    logit(i) = (p(i) > 0.0 ? std::log(p(i)) : neg_inf) - eta * q(i);
    mx = std::max(mx, logit(i));
  }
  Eigen::VectorXd w(p.size());
  double sum = 0.0;
  for (int i = 0; i < p.size(); ++i) {
    w(i) = std::isfinite(logit(i)) ? std::exp(logit(i) - mx) : 0.0;
    sum += w(i);
  }
  return w / sum;
}

/// Multiplicative-weights arbitration over ensemble copies; same kernel.
inline Eigen::VectorXd hedge_step(const Eigen::VectorXd& p,
                                  const Eigen::VectorXd& values, double eta) {
  return omd_step(p, values, eta);
}

/// Sigmoid contraction coefficient sigma(-beta_w u + log K) with
/// u = ||phi||_{(Lambda_hat)^{-1}}. Monotone decreasing in u, values in
/// (0, K/(K+1)].
inline double contraction_sigmoid(double u, double beta_w, double K) {
  const double z = -beta_w * u + std::log(K);
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// Indicator truncation 1{u <= 1/beta_w}, inclusive at the boundary.
inline double contraction_indicator(double u, double beta_w) {
  if (beta_w <= 0.0) return 1.0;
  return u <= 1.0 / beta_w ? 1.0 : 0.0;
}

/// Draws one ensemble perturbation vector in R^{dH}: per-h block
/// sqrt(H) (beta_r + beta_p) (Lambda_hat_h)^{-1/2} g with g standard normal,
/// so the covariance equals H (beta_r+beta_p)^2 diag(Lambda_hat_h)^{-1}.
/// The square root is the symmetric (spectral) one.
inline Eigen::VectorXd zeta_sample(Rng& rng,
                                   const std::vector<Eigen::MatrixXd>& inv_sqrts,
                                   double beta_r, double beta_p, int H) {
  if (static_cast<int>(inv_sqrts.size()) != H)
    throw std::invalid_argument("zeta_sample: need one snapshot per horizon");
  const int d = inv_sqrts.empty() ? 0 : static_cast<int>(inv_sqrts[0].rows());
  const double coeff = std::sqrt(static_cast<double>(H)) * (beta_r + beta_p);
  Eigen::VectorXd zeta(d * H);
  for (int h = 0; h < H; ++h)
    zeta.segment(h * d, d) = coeff * (inv_sqrts[h] * rng.normal_vector(d));
  return zeta;
}

struct RunSeed {
  std::uint64_t base = 0;
  std::uint64_t index = 0;
};

struct RunOptions {
  Feedback feedback = Feedback::kBandit;
  bool zeta_off = false;  // REPO ablation: perturbations forced to zero
  // Called with the arbiter weights at the start of each episode (after any
  // epoch reset, before the copy is sampled).
  std::function<void(long k, const Eigen::VectorXd& hedge)> hedge_observer;
};

/// Everything frozen at an epoch boundary: covariance snapshots, the
/// uncertainty norms u(h,x,a) = ||phi||_{(Lambda_hat_h)^{-1}}, and the
/// contraction built from them.
struct EpochData {
  std::vector<CovarianceSnapshot> snap;
  std::vector<Eigen::MatrixXd> u;  // h -> X x A
  ContractionMap rho;
};

/// Snapshots the covariances and freezes the contraction (sigmoid for CFPO,
/// indicator for the ensembles) from the current estimator state.
inline EpochData freeze_epoch(const LinearMdp& env, const Estimators& est,
                              double beta_w, long K, bool sigmoid) {
  EpochData ed;
  ed.rho = ContractionMap::ones(env.H, env.num_states, env.num_actions);
  ed.u.assign(env.H, Eigen::MatrixXd::Zero(env.num_states, env.num_actions));
  ed.snap.reserve(env.H);
  for (int h = 0; h < env.H; ++h) ed.snap.push_back(est.at(h).cov().snapshot());
  for (int h = 0; h < env.H; ++h)
    for (int x = 0; x < env.num_states; ++x)
      for (int a = 0; a < env.num_actions; ++a) {
        const double u = ed.snap[h].mahalanobis_inv(env.features(x, a));
        ed.u[h](x, a) = u;
        ed.rho.rho(h, x, a) =
            sigmoid ? contraction_sigmoid(u, beta_w, static_cast<double>(K))
                    : contraction_indicator(u, beta_w);
      }
  return ed;
}

struct BackwardPassResult {
  std::vector<Eigen::MatrixXd> Q;     // h -> X x A
  std::vector<Eigen::MatrixXd> Qref;  // contracted true backup of Vhat
  std::vector<Eigen::VectorXd> Vhat;  // H+1 tables, Vhat[H] == 0
  double reward_err_max = 0.0;
  double dynamics_err_max = 0.0;
  double q_sup = 0.0;
};

/// One CFPO backward pass: for h = H..1 build
///   Qhat_h = phibar' (theta_hat + psi_hat Vhat_{h+1}) - beta_b ||phibar||
/// with phibar the rho-contracted features and the bonus norm taken in the
/// frozen epoch inverse, then Vhat_h from the pre-update policy, then the
/// OMD policy step. Also evaluates the error monitors against the exact
/// environment and the contracted true backup used by the optimism check.
inline BackwardPassResult cfpo_backward_pass(const LinearMdp& env,
                                             const Estimators& est,
                                             const EpochData& ed,
                                             const Hyperparams& hp,
                                             bool full_info, PolicyTable& pi) {
  BackwardPassResult out;
  out.Q.resize(env.H);
  out.Qref.resize(env.H);
  out.Vhat.assign(env.H + 1, Eigen::VectorXd::Zero(env.num_states));
  for (int h = env.H - 1; h >= 0; --h) {
    const Eigen::VectorXd theta_eff =
        full_info ? env.theta[h] : est.at(h).theta_hat();
    const Eigen::VectorXd psi_hat_v = est.at(h).psi_apply(out.Vhat[h + 1]);
    const Eigen::VectorXd w = theta_eff + psi_hat_v;
    const Eigen::VectorXd w_true = env.theta[h] + env.psi[h] * out.Vhat[h + 1];
    if (!full_info)
      out.reward_err_max = std::max(
          out.reward_err_max, est.at(h).cov().mahalanobis(env.theta[h] - theta_eff));
    out.dynamics_err_max =
        std::max(out.dynamics_err_max,
                 est.at(h).cov().mahalanobis(env.psi[h] * out.Vhat[h + 1] - psi_hat_v));

    out.Q[h].resize(env.num_states, env.num_actions);
    out.Qref[h].resize(env.num_states, env.num_actions);
    for (int x = 0; x < env.num_states; ++x)
      for (int a = 0; a < env.num_actions; ++a) {
        const double rho = ed.rho.rho(h, x, a);
        const Eigen::VectorXd& phi = env.features(x, a);
        out.Q[h](x, a) = rho * phi.dot(w) - hp.beta_b * rho * ed.u[h](x, a);
        out.Qref[h](x, a) = rho * phi.dot(w_true);
      }
    out.q_sup = std::max(out.q_sup, out.Q[h].cwiseAbs().maxCoeff());
    for (int x = 0; x < env.num_states; ++x) {
      out.Vhat[h](x) = pi.row(h, x).dot(out.Q[h].row(x));
      pi.row(h, x) = omd_step(pi.row(h, x), out.Q[h].row(x).transpose(), hp.eta_o);
    }
  }
  return out;
}

namespace detail {

/// True whether any per-h covariance determinant doubled since its epoch
/// snapshot. May refresh accumulators near the decision threshold.
inline bool any_det_doubled(Estimators& est, const std::vector<double>& snap_logdet) {
  bool fired = false;
  for (int h = 0; h < est.horizon(); ++h)
    fired = est.at(h).cov().det_doubled(snap_logdet[h]) || fired;
  return fired;
}

inline void ingest_trajectory(Estimators& est, const LinearMdp& env,
                              const Trajectory& traj, bool observe_losses) {
  for (int h = 0; h < env.H; ++h) {
    const TrajectoryStep& s = traj.steps[h];
    std::optional<double> loss;
    if (observe_losses) loss = s.loss_sample;
    std::optional<int> next;
    if (h + 1 < env.H) next = traj.steps[h + 1].state;
    est.at(h).observe(env.features(s.state, s.action), loss, next);
  }
}

inline bool on_simplex(const Eigen::VectorXd& p) {
  return std::abs(p.sum() - 1.0) <= 1e-12 && p.minCoeff() >= 0.0;
}

inline bool policy_on_simplex(const PolicyTable& pi) {
  for (const auto& row : pi.probs)
    if (!on_simplex(row)) return false;
  return true;
}

}  // namespace detail

/// Contracted Features Policy Optimization: single policy, sigmoid
/// contraction frozen per epoch, explicit bonus beta_b ||phibar||,
/// OMD policy updates. Bandit feedback estimates theta by least squares;
/// full-information feedback substitutes the true theta_h (beta_r = 0).
inline RunRecord cfpo_run(const LinearMdp& env, const Hyperparams& hp, long K,
                          RunSeed seed, RunOptions opts = {}) {
  Rng traj_rng(seed.base, "traj", seed.index);
  Estimators est(env.d, env.H, env.num_states);
  PolicyTable pi = PolicyTable::uniform(env.H, env.num_states, env.num_actions);
  const auto [pistar, vstar] = optimal_policy_dp(env);
  const bool full_info = opts.feedback == Feedback::kFull;
  const double beta_r_eff = full_info ? 0.0 : hp.beta_r;

  RunRecord rec;
  rec.rows.reserve(K);
  EpochData ed;
  std::vector<double> snap_logdet(env.H, 0.0);
  int epoch = -1;
  double cum = 0.0;
  bool good_always = true;

  for (long k = 1; k <= K; ++k) {
    if (k == 1 || detail::any_det_doubled(est, snap_logdet)) {
      ++epoch;
      ed = freeze_epoch(env, est, hp.beta_w, K, /*sigmoid=*/true);
      for (int h = 0; h < env.H; ++h) snap_logdet[h] = ed.snap[h].log_det;
      pi.reset_uniform();
      rec.epochs.push_back({k, 0.0, 0.0, true});
    }

    const double value = policy_value_dp(env, pi)[0](env.x1);
    const Trajectory traj = sample_episode(env, pi, traj_rng);
    detail::ingest_trajectory(est, env, traj, /*observe_losses=*/true);

    const BackwardPassResult pass =
        cfpo_backward_pass(env, est, ed, hp, full_info, pi);

    // Conditional invariants: monitored only when both error monitors are
    // within bounds at every h.
    if (pass.reward_err_max <= beta_r_eff && pass.dynamics_err_max <= hp.beta_p) {
      ++rec.monitored_episodes;
      for (int h = 0; h < env.H; ++h) {
        if (pass.Q[h].cwiseAbs().maxCoeff() > 2.0 * (env.H - h) + 1e-9)
          ++rec.qbound_violations;
        for (int x = 0; x < env.num_states; ++x)
          for (int a = 0; a < env.num_actions; ++a)
            if (pass.Q[h](x, a) - pass.Qref[h](x, a) > 1e-9)
              ++rec.optimism_violations;
      }
    }

    if (!detail::policy_on_simplex(pi)) ++rec.simplex_violations;
    const bool e1 = pass.reward_err_max <= beta_r_eff;
    const bool e2 = pass.dynamics_err_max <= hp.beta_p && pass.q_sup <= hp.beta_q;
    good_always = good_always && e1 && e2;
    const double inst = value - vstar;
    cum += inst;
    rec.rows.push_back({k, value, inst, cum, epoch, e1, e2, pass.q_sup,
                        pass.reward_err_max, pass.dynamics_err_max});
  }
  rec.total_regret = cum;
  rec.epoch_count = epoch + 1;
  rec.good_event_always = good_always;
  return rec;
}

/// Randomized Ensemble Policy Optimization: m PO copies differing only in
/// their Gaussian reward perturbation (resampled at epoch boundaries),
/// indicator truncation, and a multiplicative-weights arbiter picking the
/// copy to play each episode.
inline RunRecord repo_run(const LinearMdp& env, const Hyperparams& hp, long K,
                          RunSeed seed, RunOptions opts = {}) {
  Rng traj_rng(seed.base, "traj", seed.index);
  Rng zeta_rng(seed.base, "zeta", seed.index);
  const int m = hp.m;
  if (m < 1) throw std::invalid_argument("repo_run: ensemble size must be >= 1");
  Estimators est(env.d, env.H, env.num_states);
  std::vector<PolicyTable> pis(
      m, PolicyTable::uniform(env.H, env.num_states, env.num_actions));
  Eigen::VectorXd p = Eigen::VectorXd::Constant(m, 1.0 / m);
  const auto [pistar, vstar] = optimal_policy_dp(env);
  const bool full_info = opts.feedback == Feedback::kFull;

  RunRecord rec;
  rec.rows.reserve(K);
  EpochData ed;
  std::vector<double> snap_logdet(env.H, 0.0);
  std::vector<Eigen::VectorXd> zetas(m);  // each dH
  int epoch = -1;
  double cum = 0.0;
  bool good_always = true;

  std::vector<Eigen::VectorXd> Vhat(env.H + 1,
                                    Eigen::VectorXd::Zero(env.num_states));
  Eigen::MatrixXd Qh(env.num_states, env.num_actions);

  for (long k = 1; k <= K; ++k) {
    if (k == 1 || detail::any_det_doubled(est, snap_logdet)) {
      ++epoch;
      ed = freeze_epoch(env, est, hp.beta_w, K, /*sigmoid=*/false);
      for (int h = 0; h < env.H; ++h) snap_logdet[h] = ed.snap[h].log_det;
      if (opts.zeta_off) {
        for (auto& z : zetas) z = Eigen::VectorXd::Zero(env.d * env.H);
      } else {
        std::vector<Eigen::MatrixXd> inv_sqrts;
        inv_sqrts.reserve(env.H);
        for (int h = 0; h < env.H; ++h) inv_sqrts.push_back(ed.snap[h].inv_sqrt());
        for (auto& z : zetas)
          z = zeta_sample(zeta_rng, inv_sqrts, hp.beta_r, hp.beta_p, env.H);
      }
      p.setConstant(1.0 / m);
      for (auto& copy : pis) copy.reset_uniform();

      // Ensemble anti-concentration statistic at the epoch boundary:
      // max_i <phibar*, zeta_i> vs ||phibar*||_{Sigma_zeta}.
      const Eigen::VectorXd phibar =
          truncated_feature_occupancy(env, pistar, ed.rho);
      double lhs = -std::numeric_limits<double>::infinity();
      for (int i = 0; i < m; ++i) lhs = std::max(lhs, phibar.dot(zetas[i]));
      double rhs_sq = 0.0;
      const double c = env.H * (hp.beta_r + hp.beta_p) * (hp.beta_r + hp.beta_p);
      for (int h = 0; h < env.H; ++h) {
        const Eigen::VectorXd block = phibar.segment(h * env.d, env.d);
        rhs_sq += c * block.dot(ed.snap[h].inv * block);
      }
      const double rhs = std::sqrt(std::max(rhs_sq, 0.0));
      rec.epochs.push_back({k, lhs, rhs, lhs >= rhs - 1e-12});
    }
    if (opts.hedge_observer) opts.hedge_observer(k, p);

    const int ik = m == 1 ? 0 : traj_rng.categorical(p);
    const double value = policy_value_dp(env, pis[ik])[0](env.x1);
    const Trajectory traj = sample_episode(env, pis[ik], traj_rng);
    detail::ingest_trajectory(est, env, traj, /*observe_losses=*/true);

    std::vector<Eigen::VectorXd> theta_eff(env.H);
    double rerr_max = 0.0;
    for (int h = 0; h < env.H; ++h) {
      theta_eff[h] = full_info ? env.theta[h] : est.at(h).theta_hat();
      if (!full_info)
        rerr_max = std::max(
            rerr_max, est.at(h).cov().mahalanobis(env.theta[h] - theta_eff[h]));
    }

    double derr_max = 0.0, q_sup = 0.0;
    Eigen::VectorXd v1(m);
    for (int i = 0; i < m; ++i) {
      Vhat[env.H].setZero();
      for (int h = env.H - 1; h >= 0; --h) {
        const Eigen::VectorXd psi_hat_v = est.at(h).psi_apply(Vhat[h + 1]);
        const Eigen::VectorXd w =
            theta_eff[h] - zetas[i].segment(h * env.d, env.d) + psi_hat_v;
        derr_max = std::max(derr_max, est.at(h).cov().mahalanobis(
                                          env.psi[h] * Vhat[h + 1] - psi_hat_v));
        for (int x = 0; x < env.num_states; ++x)
          for (int a = 0; a < env.num_actions; ++a) {
            const double rho = ed.rho.rho(h, x, a);
            Qh(x, a) = rho == 0.0 ? 0.0 : rho * env.features(x, a).dot(w);
          }
        q_sup = std::max(q_sup, Qh.cwiseAbs().maxCoeff());
        for (int x = 0; x < env.num_states; ++x) {
          Vhat[h](x) = pis[i].row(h, x).dot(Qh.row(x));
          pis[i].row(h, x) =
              omd_step(pis[i].row(h, x), Qh.row(x).transpose(), hp.eta_o);
        }
      }
      v1(i) = Vhat[0](env.x1);
    }
    p = hedge_step(p, v1, hp.eta_x);

    bool simplex_ok = detail::on_simplex(p);
    for (const auto& copy : pis)
      simplex_ok = simplex_ok && detail::policy_on_simplex(copy);
    if (!simplex_ok) ++rec.simplex_violations;

    const bool e1 = rerr_max <= (full_info ? 0.0 : hp.beta_r);
    const bool e2 = derr_max <= hp.beta_p && q_sup <= hp.beta_q;
    good_always = good_always && e1 && e2;
    const double inst = value - vstar;
    cum += inst;
    rec.rows.push_back(
        {k, value, inst, cum, epoch, e1, e2, q_sup, rerr_max, derr_max});
  }
  rec.total_regret = cum;
  rec.epoch_count = epoch + 1;
  rec.good_event_always = good_always;
  return rec;
}

/// Deterministic Ensemble Policy Optimization under aggregate bandit
/// feedback: 2dH PO copies with deterministic perturbations
/// +/- sqrt(dH) Sigma_zeta^{1/2} e_i of the aggregate loss estimate,
/// hedge over the copies. Only the episode loss v^k feeds the (dH-dim)
/// aggregate regression; per-step losses are never observed.
inline RunRecord depo_run(const LinearMdp& env, const Hyperparams& hp, long K,
                          RunSeed seed, RunOptions opts = {}) {
  Rng traj_rng(seed.base, "traj", seed.index);
  const int dH = env.d * env.H;
  const int num_arms = 2 * dH;
  Estimators est(env.d, env.H, env.num_states);
  AggregateThetaEstimator agg(dH);
  std::vector<PolicyTable> pis(
      num_arms, PolicyTable::uniform(env.H, env.num_states, env.num_actions));
  Eigen::VectorXd p = Eigen::VectorXd::Constant(num_arms, 1.0 / num_arms);
  const auto [pistar, vstar] = optimal_policy_dp(env);

  Eigen::VectorXd theta_concat_true(dH);
  for (int h = 0; h < env.H; ++h)
    theta_concat_true.segment(h * env.d, env.d) = env.theta[h];

  RunRecord rec;
  rec.rows.reserve(K);
  EpochData ed;
  std::vector<double> snap_logdet(env.H, 0.0);
  double agg_snap_logdet = 0.0;
  Eigen::MatrixXd sigma_zeta_sqrt;
  int epoch = -1;
  double cum = 0.0;
  bool good_always = true;

  std::vector<Eigen::VectorXd> Vhat(env.H + 1,
                                    Eigen::VectorXd::Zero(env.num_states));
  Eigen::MatrixXd Qh(env.num_states, env.num_actions);

  for (long k = 1; k <= K; ++k) {
    const bool agg_doubled = k > 1 && agg.cov().det_doubled(agg_snap_logdet);
    if (k == 1 || detail::any_det_doubled(est, snap_logdet) || agg_doubled) {
      ++epoch;
      ed = freeze_epoch(env, est, hp.beta_w, K, /*sigmoid=*/false);
      for (int h = 0; h < env.H; ++h) snap_logdet[h] = ed.snap[h].log_det;
      const CovarianceSnapshot agg_snap = agg.cov().snapshot();
      agg_snap_logdet = agg_snap.log_det;

      Eigen::MatrixXd sigma_zeta =
          2.0 * hp.beta_r * hp.beta_r * agg_snap.inv;
      const double cp = 2.0 * env.H * hp.beta_p * hp.beta_p;
      for (int h = 0; h < env.H; ++h)
        sigma_zeta.block(h * env.d, h * env.d, env.d, env.d) +=
            cp * ed.snap[h].inv;
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma_zeta);
      if (es.info() != Eigen::Success)
        throw NumericalError("depo_run: Sigma_zeta eigendecomposition failed");
      sigma_zeta_sqrt = es.eigenvectors() *
                        es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
                        es.eigenvectors().transpose();

      p.setConstant(1.0 / num_arms);
      for (auto& copy : pis) copy.reset_uniform();
      rec.epochs.push_back({k, 0.0, 0.0, true});
    }
    if (opts.hedge_observer) opts.hedge_observer(k, p);

    const int ck = traj_rng.categorical(p);
    const double value = policy_value_dp(env, pis[ck])[0](env.x1);
    const Trajectory traj = sample_episode(env, pis[ck], traj_rng);
    detail::ingest_trajectory(est, env, traj, /*observe_losses=*/false);
    Eigen::VectorXd phi_concat(dH);
    for (int h = 0; h < env.H; ++h)
      phi_concat.segment(h * env.d, env.d) =
          env.features(traj.steps[h].state, traj.steps[h].action);
    agg.observe(phi_concat, traj.aggregate_loss);

    const Eigen::VectorXd theta_agg = agg.theta_hat();
    const double rerr = agg.cov().mahalanobis(theta_concat_true - theta_agg);
    const double root_dh = std::sqrt(static_cast<double>(dH));

    double derr_max = 0.0, q_sup = 0.0;
    Eigen::VectorXd v1(num_arms);
    for (int c = 0; c < num_arms; ++c) {
      const int i = c / 2;
      const double chi = (c % 2 == 0) ? -1.0 : 1.0;
      const Eigen::VectorXd theta_arm =
          theta_agg - root_dh * chi * sigma_zeta_sqrt.col(i);
      Vhat[env.H].setZero();
      for (int h = env.H - 1; h >= 0; --h) {
        const Eigen::VectorXd psi_hat_v = est.at(h).psi_apply(Vhat[h + 1]);
        const Eigen::VectorXd w = theta_arm.segment(h * env.d, env.d) + psi_hat_v;
        derr_max = std::max(derr_max, est.at(h).cov().mahalanobis(
                                          env.psi[h] * Vhat[h + 1] - psi_hat_v));
        for (int x = 0; x < env.num_states; ++x)
          for (int a = 0; a < env.num_actions; ++a) {
            const double rho = ed.rho.rho(h, x, a);
            Qh(x, a) = rho == 0.0 ? 0.0 : rho * env.features(x, a).dot(w);
          }
        q_sup = std::max(q_sup, Qh.cwiseAbs().maxCoeff());
        for (int x = 0; x < env.num_states; ++x) {
          Vhat[h](x) = pis[c].row(h, x).dot(Qh.row(x));
          pis[c].row(h, x) =
              omd_step(pis[c].row(h, x), Qh.row(x).transpose(), hp.eta_o);
        }
      }
      v1(c) = Vhat[0](env.x1);
    }
    p = hedge_step(p, v1, hp.eta_x);

    bool simplex_ok = detail::on_simplex(p);
    for (const auto& copy : pis)
      simplex_ok = simplex_ok && detail::policy_on_simplex(copy);
    if (!simplex_ok) ++rec.simplex_violations;

    const bool e1 = rerr <= hp.beta_r;
    const bool e2 = derr_max <= hp.beta_p && q_sup <= hp.beta_q;
    good_always = good_always && e1 && e2;
    const double inst = value - vstar;
    cum += inst;
    rec.rows.push_back(
        {k, value, inst, cum, epoch, e1, e2, q_sup, rerr, derr_max});
  }
  rec.total_regret = cum;
  rec.epoch_count = epoch + 1;
  rec.good_event_always = good_always;
  return rec;
}

/// Plays the uniform policy every episode; per-episode regret is the
/// constant V^{unif} - V*.
inline RunRecord uniform_baseline_run(const LinearMdp& env, long K, RunSeed seed) {
  Rng traj_rng(seed.base, "traj", seed.index);
  const PolicyTable pi =
      PolicyTable::uniform(env.H, env.num_states, env.num_actions);
  const auto [pistar, vstar] = optimal_policy_dp(env);
  const double value = policy_value_dp(env, pi)[0](env.x1);
  RunRecord rec;
  rec.rows.reserve(K);
  double cum = 0.0;
  for (long k = 1; k <= K; ++k) {
    sample_episode(env, pi, traj_rng);  // interaction happens, data unused
    cum += value - vstar;
    rec.rows.push_back({k, value, value - vstar, cum, 0, true, true, 0.0, 0.0, 0.0});
  }
  rec.epochs.push_back({1, 0.0, 0.0, true});
  rec.total_regret = cum;
  rec.epoch_count = 1;
  rec.good_event_always = true;
  return rec;
}

/// Debug comparator that plays the DP-optimal policy; regret is zero up to
/// floating-point noise.
inline RunRecord optimal_policy_run(const LinearMdp& env, long K, RunSeed seed) {
  Rng traj_rng(seed.base, "traj", seed.index);
  const auto [pistar, vstar] = optimal_policy_dp(env);
  const double value = policy_value_dp(env, pistar)[0](env.x1);
  RunRecord rec;
  rec.rows.reserve(K);
  double cum = 0.0;
  for (long k = 1; k <= K; ++k) {
    sample_episode(env, pistar, traj_rng);
    cum += value - vstar;
    rec.rows.push_back({k, value, value - vstar, cum, 0, true, true, 0.0, 0.0, 0.0});
  }
  rec.epochs.push_back({1, 0.0, 0.0, true});
  rec.total_regret = cum;
  rec.epoch_count = 1;
  rec.good_event_always = true;
  return rec;
}

}  // namespace linpo
