#pragma once

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "linpo/algorithms.hpp"
#include "linpo/errors.hpp"
#include "linpo/mdp.hpp"
#include "linpo/run_record.hpp"

namespace linpo {

struct EnvSpec {
  std::string kind;  // "tabular" | "mixture"
  int num_states = 0;
  int num_actions = 0;
  int H = 0;
  int d = 0;  // mixture only; tabular derives d = |X||A|
  std::uint64_t seed = 0;
  LossNoise noise = LossNoise::kBernoulli;
};

struct ExperimentConfig {
  EnvSpec env;
  std::string variant;  // cfpo | repo | depo | uniform | optimal
  long K = 0;
  double delta = 0.0;
  double scale = 0.05;
  int num_seeds = 1;
  std::uint64_t base_seed = 0;
  Feedback feedback = Feedback::kBandit;
  std::string output;              // empty: no CSV written
  std::vector<long> sweep_K;       // sweep grid (sweep subcommand)
  std::vector<double> sweep_scale;
};

inline LinearMdp make_env(const EnvSpec& spec) {
  Rng rng(spec.seed, "env");
  LinearMdp env;
  if (spec.kind == "tabular") {
    env = gen_tabular_onehot(spec.num_states, spec.num_actions, spec.H, rng,
                             spec.noise);
  } else if (spec.kind == "mixture") {
    env = gen_mixture(spec.d, spec.num_states, spec.num_actions, spec.H, rng,
                      spec.noise);
  } else {
    throw UsageError("unknown env kind '" + spec.kind + "'");
  }
  const auto violations = validate(env);
  if (!violations.empty())
    throw ModelError("generated environment failed validation: " + violations[0]);
  return env;
}

inline ExperimentConfig parse_config(const nlohmann::json& j) {
  ExperimentConfig c;
  try {
    if (!j.contains("K")) throw UsageError("config: missing required field 'K'");
    if (!j.contains("delta")) throw UsageError("config: missing required field 'delta'");
    if (!j.contains("variant")) throw UsageError("config: missing required field 'variant'");
    if (!j.contains("env")) throw UsageError("config: missing required field 'env'");
    c.K = j.at("K").get<long>();
    c.delta = j.at("delta").get<double>();
    c.variant = j.at("variant").get<std::string>();
    const auto& je = j.at("env");
    c.env.kind = je.at("kind").get<std::string>();
    c.env.num_states = je.at("num_states").get<int>();
    c.env.num_actions = je.at("num_actions").get<int>();
    c.env.H = je.at("H").get<int>();
    c.env.seed = je.value("seed", 0ULL);
    if (c.env.kind == "mixture") c.env.d = je.at("d").get<int>();
    if (je.value("loss_noise", std::string("bernoulli")) == "deterministic")
      c.env.noise = LossNoise::kDeterministic;
    c.scale = j.value("scale", 0.05);
    c.num_seeds = j.value("num_seeds", 1);
    c.base_seed = j.value("base_seed", 0ULL);
    c.output = j.value("output", std::string());
    const std::string fb =
        j.value("feedback", c.variant == "depo" ? std::string("aggregate")
                                                : std::string("bandit"));
    if (fb == "bandit") c.feedback = Feedback::kBandit;
    else if (fb == "full") c.feedback = Feedback::kFull;
    else if (fb == "aggregate") c.feedback = Feedback::kAggregate;
    else throw UsageError("config: unknown feedback mode '" + fb + "'");
    if (j.contains("sweep")) {
      const auto& js = j.at("sweep");
      if (js.contains("K")) c.sweep_K = js.at("K").get<std::vector<long>>();
      if (js.contains("scale"))
        c.sweep_scale = js.at("scale").get<std::vector<double>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  if (c.K < 1) throw UsageError("config: K must be >= 1");
  if (!(c.delta > 0.0 && c.delta < 1.0))
    throw UsageError("config: delta must be in (0,1)");
  if (c.num_seeds < 1) throw UsageError("config: num_seeds must be >= 1");
  if (c.variant == "depo" && c.feedback != Feedback::kAggregate)
    throw UsageError("config: variant depo requires aggregate feedback");
  if (c.variant != "depo" && c.feedback == Feedback::kAggregate)
    throw UsageError("config: aggregate feedback requires variant depo");
  return c;
}

struct Report {
  ExperimentConfig config;
  double v_star = 0.0;
  double v_uniform = 0.0;
  std::vector<RunRecord> runs;  // one per seed
};

inline RunRecord dispatch_run(const LinearMdp& env, const ExperimentConfig& c,
                              long K, double scale, std::uint64_t seed_index) {
  const RunSeed seed{c.base_seed, seed_index};
  RunOptions opts;
  opts.feedback = c.feedback;
  if (c.variant == "uniform") return uniform_baseline_run(env, K, seed);
  if (c.variant == "optimal") return optimal_policy_run(env, K, seed);
  Variant v;
  if (c.variant == "cfpo") v = Variant::kCfpo;
  else if (c.variant == "repo") v = Variant::kRepo;
  else if (c.variant == "depo") v = Variant::kDepo;
  else throw UsageError("config: unknown variant '" + c.variant + "'");
  // The theory formulas need log K > 0; a one-episode run still uses them.
  const Hyperparams hp = hyperparams_theory(env.d, env.H, std::max(K, 2L),
                                            env.num_actions, c.delta, v, scale);
  switch (v) {
    case Variant::kCfpo: return cfpo_run(env, hp, K, seed, opts);
    case Variant::kRepo: return repo_run(env, hp, K, seed, opts);
    case Variant::kDepo: return depo_run(env, hp, K, seed);
  }
  throw UsageError("unreachable variant");
}

/// Generates the environment once from the env seed and runs one record per
/// seed; the whole report is a pure function of (config).
inline Report run_experiment(const ExperimentConfig& c) {
  Report report;
  report.config = c;
  const LinearMdp env = make_env(c.env);
  report.v_star = optimal_policy_dp(env).second;
  report.v_uniform = policy_value_dp(
      env, PolicyTable::uniform(env.H, env.num_states, env.num_actions))[0](env.x1);
  report.runs.reserve(c.num_seeds);
  for (int s = 0; s < c.num_seeds; ++s)
    report.runs.push_back(dispatch_run(env, c, c.K, c.scale, s));
  return report;
}

inline std::vector<double> cumulative_regret(const RunRecord& rec) {
  std::vector<double> out;
  out.reserve(rec.rows.size());
  double acc = 0.0;
  for (const auto& row : rec.rows) {
    acc += row.inst_regret;
    out.push_back(acc);
  }
  return out;
}

namespace detail {

inline void append_real(std::string& out, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out += buf;
}

}  // namespace detail

/// CSV with one row per (seed, episode); reals rendered with 17 significant
/// digits so identical inputs give byte-identical files.
inline std::string report_to_csv(const Report& report) {
  std::string out = "seed,k,value,inst_regret,cum_regret,epoch,e1,e2,max_abs_q,rerr,derr\n";
  for (size_t s = 0; s < report.runs.size(); ++s) {
    for (const auto& r : report.runs[s].rows) {
      out += std::to_string(s);
      out += ',';
      out += std::to_string(r.k);
      out += ',';
      detail::append_real(out, r.value);
      out += ',';
      detail::append_real(out, r.inst_regret);
      out += ',';
      detail::append_real(out, r.cum_regret);
      out += ',';
      out += std::to_string(r.epoch);
      out += ',';
      out += r.e1 ? '1' : '0';
      out += ',';
      out += r.e2 ? '1' : '0';
      out += ',';
      detail::append_real(out, r.max_abs_q);
      out += ',';
      detail::append_real(out, r.reward_err);
      out += ',';
      detail::append_real(out, r.dynamics_err);
      out += '\n';
    }
  }
  return out;
}

inline void write_csv(const Report& report, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_csv: cannot open '" + path + "'");
  const std::string body = report_to_csv(report);
  f.write(body.data(), static_cast<std::streamsize>(body.size()));
  if (!f) throw std::runtime_error("write_csv: write failed for '" + path + "'");
}

/// Sweep over the (K, scale) grid: one summary row per cell with the mean
/// and standard error of the final cumulative regret over seeds.
inline std::string sweep_to_csv(const ExperimentConfig& c) {
  std::vector<long> Ks = c.sweep_K.empty() ? std::vector<long>{c.K} : c.sweep_K;
  std::vector<double> scales =
      c.sweep_scale.empty() ? std::vector<double>{c.scale} : c.sweep_scale;
  const LinearMdp env = make_env(c.env);
  std::string out = "K,scale,mean_final_regret,stderr_final_regret,mean_epochs,num_seeds\n";
  for (long K : Ks)
    for (double scale : scales) {
      double sum = 0.0, sumsq = 0.0, epochs = 0.0;
      for (int s = 0; s < c.num_seeds; ++s) {
        const RunRecord rec = dispatch_run(env, c, K, scale, s);
        sum += rec.total_regret;
        sumsq += rec.total_regret * rec.total_regret;
        epochs += rec.epoch_count;
      }
      const double n = c.num_seeds;
      const double mean = sum / n;
      const double var = std::max(0.0, sumsq / n - mean * mean);
      const double stderr_v = n > 1 ? std::sqrt(var / (n - 1)) : 0.0;
      out += std::to_string(K);
      out += ',';
      detail::append_real(out, scale);
      out += ',';
      detail::append_real(out, mean);
      out += ',';
      detail::append_real(out, stderr_v);
      out += ',';
      detail::append_real(out, epochs / n);
      out += ',';
      out += std::to_string(c.num_seeds);
      out += '\n';
    }
  return out;
}

/// JSON description of an environment; numeric arrays are row-major and
/// round-trip bit-exactly through load_env_json.
inline nlohmann::json dump_env_json(const LinearMdp& env) {
  nlohmann::json j;
  j["d"] = env.d;
  j["H"] = env.H;
  j["num_states"] = env.num_states;
  j["num_actions"] = env.num_actions;
  j["x1"] = env.x1;
  j["loss_noise"] =
      env.loss_noise == LossNoise::kBernoulli ? "bernoulli" : "deterministic";
  nlohmann::json phi = nlohmann::json::array();
  for (int x = 0; x < env.num_states; ++x) {
    nlohmann::json row = nlohmann::json::array();
    for (int a = 0; a < env.num_actions; ++a) {
      const Eigen::VectorXd& v = env.features(x, a);
      row.push_back(std::vector<double>(v.data(), v.data() + v.size()));
    }
    phi.push_back(row);
  }
  j["phi"] = phi;
  nlohmann::json theta = nlohmann::json::array();
  for (const auto& t : env.theta)
    theta.push_back(std::vector<double>(t.data(), t.data() + t.size()));
  j["theta"] = theta;
  nlohmann::json psi = nlohmann::json::array();
  for (const auto& m : env.psi) {
    nlohmann::json rows = nlohmann::json::array();
    for (int i = 0; i < m.rows(); ++i) {
      std::vector<double> row(m.cols());
      for (int c = 0; c < m.cols(); ++c) row[c] = m(i, c);
      rows.push_back(row);
    }
    psi.push_back(rows);
  }
  j["psi"] = psi;
  return j;
}

inline LinearMdp load_env_json(const nlohmann::json& j) {
  LinearMdp env;
  env.d = j.at("d").get<int>();
  env.H = j.at("H").get<int>();
  env.num_states = j.at("num_states").get<int>();
  env.num_actions = j.at("num_actions").get<int>();
  env.x1 = j.at("x1").get<int>();
  env.loss_noise = j.value("loss_noise", std::string("bernoulli")) == "deterministic"
                       ? LossNoise::kDeterministic
                       : LossNoise::kBernoulli;
  for (int x = 0; x < env.num_states; ++x)
    for (int a = 0; a < env.num_actions; ++a) {
      const auto vals = j.at("phi").at(x).at(a).get<std::vector<double>>();
      env.phi.push_back(Eigen::Map<const Eigen::VectorXd>(vals.data(), vals.size()));
    }
  for (int h = 0; h < env.H; ++h) {
    const auto vals = j.at("theta").at(h).get<std::vector<double>>();
    env.theta.push_back(Eigen::Map<const Eigen::VectorXd>(vals.data(), vals.size()));
    Eigen::MatrixXd m(env.d, env.num_states);
    for (int i = 0; i < env.d; ++i) {
      const auto row = j.at("psi").at(h).at(i).get<std::vector<double>>();
      for (int c = 0; c < env.num_states; ++c) m(i, c) = row[c];
    }
    env.psi.push_back(std::move(m));
  }
  return env;
}

}  // namespace linpo
