#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "fednorm/experiments.hpp"

namespace fn = fednorm;

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

// flat key=value lines; '#' starts a comment, blank lines are skipped
std::vector<std::pair<std::string, std::string>> read_config_file(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw fn::config_error("cannot read config file: " + path);
  std::vector<std::pair<std::string, std::string>> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw fn::config_error("config file line is not key=value: " + line);
    }
    std::string val = trim(line.substr(eq + 1));
    if (val.size() >= 2 && (val.front() == '"' || val.front() == '\'') &&
        val.back() == val.front()) {
      val = val.substr(1, val.size() - 2);
    }
    kv.emplace_back(trim(line.substr(0, eq)), val);
  }
  return kv;
}

bool has_flag(const std::vector<std::string>& args, const std::string& name) {
  for (const auto& a : args) {
    if (a == name || a.rfind(name + "=", 0) == 0) return true;
  }
  return false;
}

// splice file-derived options in front of the original command line; every
// option takes its last value, so explicit flags win over the file
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    }
  }
  if (path.empty() || args.front() != "run") return args;
  std::vector<std::string> out;
  out.push_back(args.front());
  for (const auto& [key, val] : read_config_file(path)) {
    // the partition is either/or: an explicit flag replaces the file's choice
    if (key == "gamma" && has_flag(args, "--dirichlet")) continue;
    if (key == "dirichlet" && has_flag(args, "--gamma")) continue;
    out.push_back(key.size() == 1 ? "-" + key : "--" + key);
    out.push_back(val);
  }
  out.insert(out.end(), args.begin() + 1, args.end());
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"federated batch-normalization simulator", "fednorm"};
  app.require_subcommand(1);
  CLI::App* run = app.add_subcommand(
      "run", "run one experiment cell and write its CSV outputs");

  std::string config_path;
  std::string experiment;
  std::string algo = "fbn";
  std::string attack = "none";
  std::string targets = "stats";
  std::string agg = "mean";
  std::string freeze = "corrected";
  std::string levels = "0,0.1,0.5,1";
  std::string out = ".";
  double gamma = 1.0, alpha = 1.0, foe_eps = 1.0, alie_z = 0.0;
  double beta = 0.1, eps = 1e-5, lr = 0.1, sgd_momentum = 0.99;
  std::uint64_t seed = 1;
  std::size_t n = 10, batch = 30, rounds = 0, hidden = 32, classes = 10;
  std::size_t m_per_class = 300, test_per_class = 100, f = 0, t_switch = 0;

  run->add_option("--experiment", experiment,
                  "separability | norm_error | toy_training | robustness")
      ->required();
  run->add_option("--algo", algo, "centralized | fbn | naive | fixbn");
  auto* opt_gamma = run->add_option(
      "--gamma", gamma, "label similarity in [0, 1]; 1 iid, 0 extreme");
  auto* opt_alpha = run->add_option(
      "--dirichlet", alpha,
      "dirichlet concentration; selects the dirichlet partition");
  opt_gamma->excludes(opt_alpha);
  opt_alpha->excludes(opt_gamma);
  run->add_option("--attack", attack, "none | sf | foe | alie");
  run->add_option("--attack-targets", targets, "stats | grads | both");
  run->add_option("--foe-eps", foe_eps, "scale of the negated honest mean");
  auto* opt_z = run->add_option(
      "--alie-z", alie_z, "explicit shift; default derives it from n and f");
  run->add_option("--agg", agg,
                  "mean | median | trimmed | nnm_mean | nnm_median | "
                  "nnm_trimmed");
  run->add_option("-f,--byzantine", f,
                  "attacker-controlled clients; also the rules' trim/mix count");
  run->add_option("-n,--clients", n, "client count");
  run->add_option("--rounds", rounds, "rounds; 0 keeps the experiment default");
  run->add_option("--batch", batch,
                  "per-client batch; per-component pool draw in the "
                  "statistics experiments");
  run->add_option("--hidden", hidden, "hidden width of the classifier");
  run->add_option("--classes", classes, "mixture components / classes");
  run->add_option("--m-per-class", m_per_class, "training points per class");
  run->add_option("--test-per-class", test_per_class, "test points per class");
  run->add_option("--beta", beta, "running-statistics momentum");
  run->add_option("--eps", eps, "normalization epsilon");
  run->add_option("--lr", lr, "base rate of the three-step schedule");
  run->add_option("--sgd-momentum", sgd_momentum, "client momentum");
  run->add_option("--t-switch", t_switch,
                  "fixbn switch round; 0 means rounds / 2");
  run->add_option("--fixbn-freeze", freeze, "corrected | naive");
  run->add_option("--levels", levels,
                  "comma-separated gamma grid for norm_error");
  run->add_option("--seed", seed, "master seed");
  run->add_option("--out", out, "output directory");
  run->add_option("--config", config_path,
                  "flat key=value file; command-line flags override it");
  for (CLI::Option* opt : run->get_options()) {
    opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  }

  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    args = expand_config(args);
  } catch (const fn::config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }
  std::reverse(args.begin(), args.end());
  try {
    app.parse(std::move(args));
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;  // help stays a success, anything else is config
  }

  try {
    fn::ExperimentConfig cfg;
    cfg.experiment = fn::parse_experiment_kind(experiment);
    cfg.algo = fn::parse_backend(algo);
    cfg.partition = opt_alpha->count() > 0 ? fn::PartitionKind::Dirichlet
                                           : fn::PartitionKind::Gamma;
    cfg.gamma = gamma;
    cfg.alpha = alpha;
    cfg.attack = fn::parse_attack_kind(attack);
    cfg.targets = fn::parse_attack_targets(targets);
    cfg.f = f;
    cfg.foe_eps = foe_eps;
    if (opt_z->count() > 0) cfg.alie_z = alie_z;
    cfg.agg = fn::parse_aggregator(agg);
    cfg.n_clients = n;
    cfg.batch = batch;
    cfg.rounds = rounds;
    cfg.hidden = hidden;
    cfg.classes = classes;
    cfg.m_per_class = m_per_class;
    cfg.test_per_class = test_per_class;
    cfg.beta = beta;
    cfg.eps = eps;
    cfg.lr = lr;
    cfg.sgd_momentum = sgd_momentum;
    cfg.t_switch = t_switch;
    cfg.freeze = fn::parse_freeze_mode(freeze);
    cfg.levels = fn::parse_levels(levels);
    cfg.seed = seed;
    cfg.out_dir = out;

    switch (cfg.experiment) {
      case fn::ExperimentKind::Separability: {
        const auto r = fn::run_separability(cfg);
        std::printf(
            "separability: ratio_spread=%.3g fbn_central_distance=%.6g "
            "max_naive_centroid=%.6g\n",
            r.max_ratio_spread, r.fbn_central_distance, r.max_naive_centroid);
        break;
      }
      case fn::ExperimentKind::NormError: {
        for (const auto& c : fn::run_norm_error(cfg)) {
          std::printf("norm_error: level=%g fbn=%.6g fixbn=%.6g naive=%.6g\n",
                      c.level, c.fbn, c.fixbn, c.naive);
        }
        break;
      }
      case fn::ExperimentKind::ToyTraining: {
        const auto r = fn::run_toy_training(cfg);
        std::printf("toy_training: final_loss=%.6g final_accuracy=%.4f\n",
                    r.final_loss, r.final_accuracy);
        break;
      }
      case fn::ExperimentKind::Robustness: {
        const auto r = fn::run_robustness(cfg);
        std::printf(
            "robustness: no_attack=%.4f no_defense=%.4f defense=%.4f\n",
            r.no_attack.back().accuracy, r.no_defense.back().accuracy,
            r.defense.back().accuracy);
        break;
      }
    }
  } catch (const fn::numerical_error& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
