#pragma once

#include <vector>

namespace linpo {

/// Per-episode diagnostics; one row per episode, serialized to CSV by the
/// harness. Regret entries are exact DP values, never sampled returns.
struct EpisodeRow {
  long k = 0;  // 1-based episode index
  double value = 0.0;
  double inst_regret = 0.0;
  double cum_regret = 0.0;
  int epoch = 0;
  bool e1 = false;
  bool e2 = false;
  double max_abs_q = 0.0;
  double reward_err = 0.0;    // max over h
  double dynamics_err = 0.0;  // max over h (and copies, for ensembles)

  friend bool operator==(const EpisodeRow&, const EpisodeRow&) = default;
};

/// Per-epoch data for the ensemble anti-concentration monitor: whether
/// max_i <phibar*, zeta_i> >= ||phibar*||_{Sigma_zeta} held at epoch start.
struct EpochStat {
  long first_episode = 0;  // 1-based
  double e4_lhs = 0.0;
  double e4_rhs = 0.0;
  bool e4_holds = false;

  friend bool operator==(const EpochStat&, const EpochStat&) = default;
};

struct RunRecord {
  std::vector<EpisodeRow> rows;
  std::vector<EpochStat> epochs;
  double total_regret = 0.0;
  int epoch_count = 0;
  bool good_event_always = false;  // e1 && e2 at every episode

  // Conditional-invariant counters: episodes where both error monitors were
  // within (beta_r, beta_p) at every h, and violations observed there.
  long monitored_episodes = 0;
  long optimism_violations = 0;
  long qbound_violations = 0;

  // Episodes where a hedge weight vector or a policy row left the simplex
  // (sum off by more than 1e-12 or a negative entry).
  long simplex_violations = 0;

  friend bool operator==(const RunRecord&, const RunRecord&) = default;
};

}  // namespace linpo
