#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "linpo/algorithms.hpp"
#include "linpo/covariance.hpp"
#include "linpo/mdp.hpp"
#include "linpo/rng.hpp"

namespace linpo::verify {

struct CheckResult {
  std::string name;
  bool passed = false;
  double worst_margin = 0.0;  // min of RHS - LHS over tested instances
  long trials = 0;
  std::string details;
};

namespace detail {

struct MarginTracker {
  double worst = std::numeric_limits<double>::infinity();
  long trials = 0;
  void add(double margin) {
    worst = std::min(worst, margin);
    ++trials;
  }
};

inline CheckResult finish(const std::string& name, const MarginTracker& t,
                          double tolerance, std::string details = "") {
  CheckResult r;
  r.name = name;
  r.worst_margin = t.worst;
  r.trials = t.trials;
  r.passed = t.worst >= -tolerance;
  if (details.empty()) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "pass iff worst margin >= -%g", tolerance);
    details = buf;
  }
  r.details = details;
  return r;
}

inline Eigen::MatrixXd random_psd(Rng& rng, int d, double floor) {
  Eigen::MatrixXd A(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) A(i, j) = rng.normal();
  return A * A.transpose() + floor * Eigen::MatrixXd::Identity(d, d);
}

inline double op_norm(const Eigen::MatrixXd& sym) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

inline Eigen::MatrixXd sym_sqrt(const Eigen::MatrixXd& sym) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  return es.eigenvectors() *
         es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
         es.eigenvectors().transpose();
}

}  // namespace detail

/// max_{y >= 0} y * sigma(-beta_w y + log K) <= 2 log K / beta_w,
/// maximized by a dense grid plus golden-section refinement.
inline CheckResult check_logistic_linear() {
  detail::MarginTracker t;
  const double golden = (std::sqrt(5.0) - 1.0) / 2.0;
  for (double beta_w : {0.5, 1.0, 4.0, 16.0}) {
    for (double K : {2.0, 10.0, 1e3, 1e6}) {
      const double bound = 2.0 * std::log(K) / beta_w;
      const auto f = [&](double y) {
        return y * contraction_sigmoid(y, beta_w, K);
      };
      const double hi = 10.0 * std::log(K) / beta_w;
      double best = 0.0, best_y = 0.0;
      const int n = 10000;
      for (int i = 0; i <= n; ++i) {
        const double y = hi * i / n;
        if (f(y) > best) {
          best = f(y);
          best_y = y;
        }
      }
      double lo = std::max(0.0, best_y - hi / n), up = std::min(hi, best_y + hi / n);
      for (int it = 0; it < 200; ++it) {
        const double y1 = up - golden * (up - lo);
        const double y2 = lo + golden * (up - lo);
        if (f(y1) < f(y2)) lo = y1; else up = y2;
      }
      best = std::max(best, f(0.5 * (lo + up)));
      t.add(bound - best);
    }
  }
  return detail::finish("logistic_linear", t, 1e-9);
}

/// sigma(x - log K) <= 2 (x^2 + 1/K) on a dense grid of x in [0, 10].
inline CheckResult check_logistic_quadratic() {
  detail::MarginTracker t;
  for (double K : {1.0, 10.0, 1e3}) {
    for (int i = 0; i <= 10000; ++i) {
      const double x = 10.0 * i / 10000.0;
      const double lhs = 1.0 / (1.0 + std::exp(-(x - std::log(K))));
      const double rhs = 2.0 * (x * x + 1.0 / K);
      t.add(rhs - lhs);
    }
  }
  return detail::finish("logistic_quadratic", t, 1e-12);
}

/// ||v||_N^2 <= (det N / det M) ||v||_M^2 for N >= M > 0.
inline CheckResult check_matrix_norm_inequality(Rng& rng) {
  detail::MarginTracker t;
  for (int trial = 0; trial < 1000; ++trial) {
    const int d = 1 + rng.uniform_int(6);
    const Eigen::MatrixXd M = detail::random_psd(rng, d, 0.1);
    const Eigen::MatrixXd N = M + detail::random_psd(rng, d, 0.0);
    const Eigen::VectorXd v = rng.normal_vector(d);
    const double lhs = v.dot(N * v);
    const double ratio = std::exp(std::log(N.determinant()) - std::log(M.determinant()));
    const double rhs = ratio * v.dot(M * v);
    t.add((rhs - lhs) / std::max(1.0, std::abs(rhs)));
  }
  return detail::finish("matrix_norm", t, 1e-9);
}

/// ||A^{1/2} - B^{1/2}|| <= ||A - B|| / (2 sqrt(lambda)) for A, B >= lambda I
/// (operator norm, lambda the smaller of the two minimum eigenvalues).
inline CheckResult check_sqrt_lipschitz(Rng& rng) {
  detail::MarginTracker t;
  for (int trial = 0; trial < 1000; ++trial) {
    const int d = 1 + rng.uniform_int(6);
    const double floor = 0.1 + rng.uniform();
    const Eigen::MatrixXd A = detail::random_psd(rng, d, floor);
    const Eigen::MatrixXd B = detail::random_psd(rng, d, floor);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(A), eb(B);
    const double lambda =
        std::min(ea.eigenvalues().minCoeff(), eb.eigenvalues().minCoeff());
    const double lhs = detail::op_norm(detail::sym_sqrt(A) - detail::sym_sqrt(B));
    const double rhs = detail::op_norm(A - B) / (2.0 * std::sqrt(lambda));
    t.add((rhs - lhs) / std::max(1.0, std::abs(rhs)));
  }
  return detail::finish("sqrt_lipschitz", t, 1e-8);
}

/// sum_t ||z_t||_{V_t^{-1}} <= sqrt(2 T d' log(T+1)) for ||z_t||^2 <= 1,
/// V_t = I + sum_{s<t} z_s z_s'.
inline CheckResult check_elliptical_potential(Rng& rng) {
  detail::MarginTracker t;
  for (int trial = 0; trial < 100; ++trial) {
    const int d = 1 + rng.uniform_int(8);
    const long T = 100 + rng.uniform_int(9901);
    CovarianceAccumulator acc(d);
    double sum = 0.0;
    for (long s = 0; s < T; ++s) {
      Eigen::VectorXd z = rng.normal_vector(d);
      z *= rng.uniform() / std::max(z.norm(), 1e-12);  // ||z|| <= 1
      sum += acc.mahalanobis_inv(z);
      acc.update(z);
    }
    const double bound = std::sqrt(2.0 * T * d * std::log(T + 1.0));
    t.add(bound - sum);
  }
  return detail::finish("elliptical_potential", t, 0.0);
}

/// Hedge certificate: realized regret against every fixed comparator is at
/// most (log A)/eta + eta sum_t sum_a x_t(a) y_t(a)^2.
inline CheckResult check_omd_bound(Rng& rng) {
  detail::MarginTracker t;
  for (int trial = 0; trial < 1000; ++trial) {
    const int A = 1 + rng.uniform_int(6);
    const int T = 10 + rng.uniform_int(491);
    const double eta = 0.01 + 0.99 * rng.uniform();
    const bool pm_one = trial % 4 == 0;  // adversarial +/-1 losses
    Eigen::VectorXd x = Eigen::VectorXd::Constant(A, 1.0 / A);
    Eigen::VectorXd totals = Eigen::VectorXd::Zero(A);
    double realized = 0.0, quad = 0.0;
    for (int s = 0; s < T; ++s) {
      Eigen::VectorXd y(A);
      for (int a = 0; a < A; ++a)
        y(a) = pm_one ? (rng.uniform() < 0.5 ? -1.0 : 1.0) : rng.uniform(-1.0, 1.0);
      realized += x.dot(y);
      quad += x.dot(y.cwiseProduct(y));
      totals += y;
      x = omd_step(x, y, eta);
    }
    const double regret = realized - totals.minCoeff();
    const double bound = std::log(static_cast<double>(A)) / eta + eta * quad;
    t.add(bound - regret);
  }
  return detail::finish("omd_bound", t, 1e-9);
}

/// Drives the extended value-difference identity on random instances.
inline CheckResult check_value_difference(Rng& rng) {
  detail::MarginTracker t;
  for (int trial = 0; trial < 50; ++trial) {
    const int d = 2 + rng.uniform_int(3);
    const int X = 2 + rng.uniform_int(4);
    const int A = 2 + rng.uniform_int(2);
    const int H = 1 + rng.uniform_int(4);
    const LinearMdp env = gen_mixture(d, X, A, H, rng);
    PolicyTable pi = PolicyTable::uniform(H, X, A);
    PolicyTable pihat = PolicyTable::uniform(H, X, A);
    for (int h = 0; h < H; ++h)
      for (int x = 0; x < X; ++x) {
        pi.row(h, x) = rng.dirichlet(A);
        pihat.row(h, x) = rng.dirichlet(A);
      }
    std::vector<Eigen::MatrixXd> Qhat(H);
    for (int h = 0; h < H; ++h) {
      Qhat[h].resize(X, A);
      for (int x = 0; x < X; ++x)
        for (int a = 0; a < A; ++a) Qhat[h](x, a) = rng.uniform(-2.0, 2.0);
    }
    const double residual = value_difference_residual(env, pi, pihat, Qhat);
    t.add(1e-9 - residual);
  }
  return detail::finish("value_difference", t, 0.0,
                        "pass iff max residual <= 1e-9");
}

/// Contracted values never exceed uncontracted ones, at every (h, x).
inline CheckResult check_contracted_optimism(Rng& rng) {
  detail::MarginTracker t;
  for (int trial = 0; trial < 200; ++trial) {
    const int d = 2 + rng.uniform_int(3);
    const int X = 2 + rng.uniform_int(4);
    const int A = 2 + rng.uniform_int(2);
    const int H = 1 + rng.uniform_int(4);
    const LinearMdp env = gen_mixture(d, X, A, H, rng);
    PolicyTable pi = PolicyTable::uniform(H, X, A);
    for (int h = 0; h < H; ++h)
      for (int x = 0; x < X; ++x) pi.row(h, x) = rng.dirichlet(A);
    ContractionMap rho = ContractionMap::ones(H, X, A);
    for (int h = 0; h < H; ++h)
      for (int x = 0; x < X; ++x)
        for (int a = 0; a < A; ++a) {
          const double u = rng.uniform();
          rho.rho(h, x, a) = u < 0.1 ? 0.0 : (u > 0.9 ? 1.0 : rng.uniform());
        }
    const auto V = policy_value_dp(env, pi);
    const auto Vbar = policy_value_dp(env, pi, &rho);
    for (int h = 0; h < H; ++h)
      for (int x = 0; x < X; ++x) t.add(V[h](x) - Vbar[h](x));
  }
  return detail::finish("contracted_optimism", t, 1e-10);
}

/// P(max of m standard normals >= sigma-threshold) >= 1 - e^{-m/9},
/// checked empirically at 3-sigma binomial slack; includes a sigma = 3
/// scale-equivariance case.
inline CheckResult check_gaussian_anticoncentration(Rng& rng) {
  detail::MarginTracker t;
  const long n = 100000;
  std::string details;
  for (double sigma : {1.0, 3.0}) {
    for (int m : {1, 9, 20, 50}) {
      long hits = 0;
      for (long trial = 0; trial < n; ++trial) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int i = 0; i < m; ++i) mx = std::max(mx, sigma * rng.normal());
        if (mx >= sigma) ++hits;
      }
      const double p = 1.0 - std::exp(-m / 9.0);
      const double slack = 3.0 * std::sqrt(p * (1.0 - p) / n);
      t.add(static_cast<double>(hits) / n - (p - slack));
    }
  }
  return detail::finish("gaussian_anticoncentration", t, 0.0,
                        "empirical freq >= 1 - exp(-m/9) - 3 sigma");
}

/// P(||g|| <= sqrt(3d/2 + 4 log(1/delta))) >= 1 - delta at 3-sigma slack,
/// plus a chi-square mean sanity check.
inline CheckResult check_gaussian_norm(Rng& rng) {
  detail::MarginTracker t;
  const long n = 100000;
  for (int d : {2, 8, 32}) {
    double sumsq = 0.0;
    for (double delta : {0.1, 0.01}) {
      const double bound = std::sqrt(1.5 * d + 4.0 * std::log(1.0 / delta));
      long hits = 0;
      for (long trial = 0; trial < n; ++trial) {
        double nsq = 0.0;
        for (int i = 0; i < d; ++i) {
          const double g = rng.normal();
          nsq += g * g;
        }
        sumsq += nsq;
        if (std::sqrt(nsq) <= bound) ++hits;
      }
      const double slack = 3.0 * std::sqrt(delta * (1.0 - delta) / n);
      t.add(static_cast<double>(hits) / n - (1.0 - delta - slack));
    }
    // E ||g||^2 = d within 3 sigma of the sample mean.
    const double mean = sumsq / (2.0 * n);
    const double tol = 3.0 * std::sqrt(2.0 * d / (2.0 * n));
    t.add(tol - std::abs(mean - d));
  }
  return detail::finish("gaussian_norm", t, 0.0,
                        "empirical freq >= 1 - delta - 3 sigma");
}

/// Bernstein-type bound for adapted sequences in [0,1]:
/// sum E[X_t | F_{t-1}] <= 2 sum X_t + 4 log(2/delta), violated with
/// frequency at most delta (checked at 3-sigma slack).
inline CheckResult check_bernstein(Rng& rng) {
  detail::MarginTracker t;
  const double delta = 0.05;
  const long reps = 10000, T = 1000;
  long violations = 0;
  for (long rep = 0; rep < reps; ++rep) {
    double sum_mean = 0.0, sum_x = 0.0;
    double prev = 0.0;
    for (long s = 0; s < T; ++s) {
      const double mean = 0.3 + 0.4 * prev;  // state-dependent, in [0.3, 0.7]
      const double x = rng.uniform() < mean ? 1.0 : 0.0;
      sum_mean += mean;
      sum_x += x;
      prev = x;
    }
    if (sum_mean > 2.0 * sum_x + 4.0 * std::log(2.0 / delta)) ++violations;
  }
  const double freq = static_cast<double>(violations) / reps;
  const double slack = 3.0 * std::sqrt(delta * (1.0 - delta) / reps);
  t.add(delta + slack - freq);
  return detail::finish("bernstein", t, 0.0,
                        "violation freq <= delta + 3 sigma");
}

struct RuntimeCheckConfig {
  int cfpo_runs = 10;
  int d = 3;
  int num_states = 4;
  int num_actions = 3;
  int H = 3;
  long K = 800;
  double delta = 0.1;
  // Second batch at a small scale so the monitor condition genuinely binds.
  int cfpo_small_scale_runs = 5;
  double small_scale = 0.02;
  // REPO ensemble anti-concentration batch. The scale is small enough that
  // the indicator truncation opens up within the run, so the statistic is
  // exercised on nonzero occupancies.
  int repo_runs = 3;
  long repo_K = 1500;
  double repo_scale = 1e-4;
  std::uint64_t seed = 20240517;
};

/// Runs CFPO and asserts the conditional optimism and Q-bound invariants on
/// every monitored episode, the per-variant epoch-count bounds, and REPO's
/// ensemble anti-concentration frequency (with a zeta = 0 negative control).
inline CheckResult check_runtime_optimism_and_qbound(const RuntimeCheckConfig& cfg) {
  detail::MarginTracker t;
  std::string details;
  long monitored = 0;

  auto run_cfpo_batch = [&](int runs, double scale) {
    for (int r = 0; r < runs; ++r) {
      Rng env_rng(cfg.seed + r, "env");
      const LinearMdp env = gen_mixture(cfg.d, cfg.num_states, cfg.num_actions,
                                        cfg.H, env_rng);
      const Hyperparams hp =
          hyperparams_theory(env.d, env.H, cfg.K, env.num_actions, cfg.delta,
                             Variant::kCfpo, scale);
      const RunRecord rec =
          cfpo_run(env, hp, cfg.K, {cfg.seed, static_cast<std::uint64_t>(r)});
      monitored += rec.monitored_episodes;
      t.add(rec.optimism_violations == 0 ? 0.0 : -1.0);
      t.add(rec.qbound_violations == 0 ? 0.0 : -1.0);
      t.add(1.5 * env.d * env.H * std::log(2.0 * cfg.K) - rec.epoch_count);
    }
  };
  run_cfpo_batch(cfg.cfpo_runs, 1.0);
  run_cfpo_batch(cfg.cfpo_small_scale_runs, cfg.small_scale);

  // REPO: pooled per-epoch anti-concentration frequency at theory m.
  long epochs_total = 0, epochs_holding = 0, active_epochs = 0;
  Hyperparams hp_repo;
  for (int r = 0; r < cfg.repo_runs; ++r) {
    Rng env_rng(cfg.seed + 100 + r, "env");
    const LinearMdp env = gen_mixture(cfg.d, cfg.num_states, cfg.num_actions,
                                      cfg.H, env_rng);
    hp_repo = hyperparams_theory(env.d, env.H, cfg.repo_K, env.num_actions,
                                 cfg.delta, Variant::kRepo, cfg.repo_scale);
    const RunRecord rec = repo_run(env, hp_repo, cfg.repo_K,
                                   {cfg.seed + 500, static_cast<std::uint64_t>(r)});
    t.add(3.0 * env.d * env.H * std::log(2.0 * cfg.repo_K) - rec.epoch_count);
    for (const auto& ep : rec.epochs) {
      ++epochs_total;
      if (ep.e4_holds) ++epochs_holding;
      if (ep.e4_rhs > 0.0) ++active_epochs;
    }
  }
  if (epochs_total > 0) {
    const double p = 1.0 - std::exp(-hp_repo.m / 9.0);
    const double slack = 3.0 * std::sqrt(p * (1.0 - p) / epochs_total);
    t.add(static_cast<double>(epochs_holding) / epochs_total - (p - slack));
  }

  // Negative control: zeta forced to zero must break anti-concentration in
  // every epoch whose truncated occupancy is nonzero.
  {
    Rng env_rng(cfg.seed + 100, "env");
    const LinearMdp env = gen_mixture(cfg.d, cfg.num_states, cfg.num_actions,
                                      cfg.H, env_rng);
    RunOptions opts;
    opts.zeta_off = true;
    const RunRecord rec =
        repo_run(env, hp_repo, cfg.repo_K, {cfg.seed + 500, 0}, opts);
    long nonzero = 0, wrongly_holding = 0;
    for (const auto& ep : rec.epochs) {
      if (ep.e4_rhs > 1e-12) {
        ++nonzero;
        if (ep.e4_holds) ++wrongly_holding;
      }
    }
    t.add(nonzero > 0 ? 0.0 : -1.0);  // control must be exercised
    t.add(wrongly_holding == 0 ? 0.0 : -1.0);
  }

  details = "monitored episodes: " + std::to_string(monitored) +
            "; pooled repo epochs: " + std::to_string(epochs_total) +
            " (" + std::to_string(active_epochs) + " with nonzero occupancy)";
  CheckResult r = detail::finish("runtime_optimism_qbound", t, 0.0, details);
  return r;
}

inline std::vector<CheckResult> run_all(const std::string& filter = "") {
  std::vector<CheckResult> results;
  const auto want = [&](const std::string& name) {
    return filter.empty() || name.find(filter) != std::string::npos;
  };
  if (want("logistic_linear")) results.push_back(check_logistic_linear());
  if (want("logistic_quadratic")) results.push_back(check_logistic_quadratic());
  if (want("matrix_norm")) {
    Rng rng(1001, "verify");
    results.push_back(check_matrix_norm_inequality(rng));
  }
  if (want("sqrt_lipschitz")) {
    Rng rng(1002, "verify");
    results.push_back(check_sqrt_lipschitz(rng));
  }
  if (want("elliptical_potential")) {
    Rng rng(1003, "verify");
    results.push_back(check_elliptical_potential(rng));
  }
  if (want("omd_bound")) {
    Rng rng(1004, "verify");
    results.push_back(check_omd_bound(rng));
  }
  if (want("value_difference")) {
    Rng rng(1005, "verify");
    results.push_back(check_value_difference(rng));
  }
  if (want("contracted_optimism")) {
    Rng rng(1006, "verify");
    results.push_back(check_contracted_optimism(rng));
  }
  if (want("gaussian_anticoncentration")) {
    Rng rng(1007, "verify");
    results.push_back(check_gaussian_anticoncentration(rng));
  }
  if (want("gaussian_norm")) {
    Rng rng(1008, "verify");
    results.push_back(check_gaussian_norm(rng));
  }
  if (want("bernstein")) {
    Rng rng(1009, "verify");
    results.push_back(check_bernstein(rng));
  }
  if (want("runtime_optimism_qbound"))
    results.push_back(check_runtime_optimism_and_qbound({}));
  return results;
}

inline nlohmann::json to_json(const std::vector<CheckResult>& results) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : results)
    out.push_back({{"name", r.name},
                   {"passed", r.passed},
                   {"worst_margin", r.worst_margin},
                   {"trials", r.trials},
                   {"details", r.details}});
  return out;
}

}  // namespace linpo::verify
