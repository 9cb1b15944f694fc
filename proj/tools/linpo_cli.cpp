// Command-line driver: run experiments, sweep grids, verify the lemma
// suite, and dump generated environments.
//
// Exit codes: 0 success, 1 usage error, 2 failed verification suite,
// 3 numerical fatal.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "linpo/errors.hpp"
#include "linpo/harness.hpp"
#include "linpo/verify.hpp"

namespace {

nlohmann::json load_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw linpo::UsageError("cannot open config file '" + path + "'");
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw linpo::UsageError("config parse error in '" + path + "': " + e.what());
  }
  return j;
}

int cmd_run(const std::string& config_path) {
  const linpo::ExperimentConfig cfg =
      linpo::parse_config(load_json_file(config_path));
  const linpo::Report report = linpo::run_experiment(cfg);
  double mean_final = 0.0;
  for (const auto& run : report.runs) mean_final += run.total_regret;
  mean_final /= static_cast<double>(report.runs.size());
  std::printf("env: %s |X|=%d |A|=%d H=%d d=%d\n", cfg.env.kind.c_str(),
              cfg.env.num_states, cfg.env.num_actions, cfg.env.H,
              cfg.env.kind == "tabular" ? cfg.env.num_states * cfg.env.num_actions
                                        : cfg.env.d);
  std::printf("V* = %.6f  V^unif = %.6f\n", report.v_star, report.v_uniform);
  std::printf("%s: K=%ld seeds=%d scale=%g  mean final regret = %.6f\n",
              cfg.variant.c_str(), cfg.K, cfg.num_seeds, cfg.scale, mean_final);
  if (!cfg.output.empty()) {
    linpo::write_csv(report, cfg.output);
    std::printf("wrote %s\n", cfg.output.c_str());
  }
  return 0;
}

int cmd_sweep(const std::string& config_path) {
  const linpo::ExperimentConfig cfg =
      linpo::parse_config(load_json_file(config_path));
  const std::string csv = linpo::sweep_to_csv(cfg);
  if (!cfg.output.empty()) {
    std::ofstream f(cfg.output, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open '" + cfg.output + "'");
    f << csv;
    std::printf("wrote %s\n", cfg.output.c_str());
  } else {
    std::fputs(csv.c_str(), stdout);
  }
  return 0;
}

int cmd_verify(const std::string& suite, const std::string& report_path) {
  const auto results = linpo::verify::run_all(suite);
  if (results.empty()) throw linpo::UsageError("no checks match '" + suite + "'");
  bool all_passed = true;
  for (const auto& r : results) {
    std::printf("%-28s %s  worst margin %.3g  (%ld trials)\n", r.name.c_str(),
                r.passed ? "PASS" : "FAIL", r.worst_margin, r.trials);
    all_passed = all_passed && r.passed;
  }
  std::ofstream f(report_path, std::ios::binary);
  if (f) f << linpo::verify::to_json(results).dump(2) << '\n';
  std::printf("report: %s\n", report_path.c_str());
  return all_passed ? 0 : 2;
}

int cmd_dump_env(const std::string& config_path) {
  const nlohmann::json j = load_json_file(config_path);
  linpo::EnvSpec spec;
  const auto& je = j.contains("env") ? j.at("env") : j;
  spec.kind = je.at("kind").get<std::string>();
  spec.num_states = je.at("num_states").get<int>();
  spec.num_actions = je.at("num_actions").get<int>();
  spec.H = je.at("H").get<int>();
  spec.seed = je.value("seed", 0ULL);
  if (spec.kind == "mixture") spec.d = je.at("d").get<int>();
  const linpo::LinearMdp env = linpo::make_env(spec);
  std::cout << linpo::dump_env_json(env).dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Policy optimization for finite linear MDPs"};
  app.require_subcommand(1);

  std::string run_config, sweep_config, dump_config;
  std::string suite, verify_report = "verify_report.json";

  CLI::App* run = app.add_subcommand("run", "Run one experiment from a JSON config");
  run->add_option("config", run_config, "config JSON path")->required();

  CLI::App* sweep = app.add_subcommand("sweep", "Grid over K and scale");
  sweep->add_option("config", sweep_config, "config JSON path")->required();

  CLI::App* verify = app.add_subcommand("verify", "Run the lemma verification suite");
  verify->add_option("--suite", suite, "only checks whose name contains this");
  verify->add_option("--report", verify_report, "JSON report path");

  CLI::App* dump = app.add_subcommand("dump-env", "Emit the generated environment as JSON");
  dump->add_option("config", dump_config, "config JSON path")->required();

  try {
    app.parse(argc, argv);
    if (run->parsed()) return cmd_run(run_config);
    if (sweep->parsed()) return cmd_sweep(sweep_config);
    if (verify->parsed()) return cmd_verify(suite, verify_report);
    if (dump->parsed()) return cmd_dump_env(dump_config);
    return 1;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints usage or help text
    return code == 0 ? 0 : 1;
  } catch (const linpo::UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 1;
  } catch (const linpo::NumericalError& e) {
    std::fprintf(stderr, "numerical fatal: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
