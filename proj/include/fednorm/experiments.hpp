#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fednorm/errors.hpp"
#include "fednorm/robustagg.hpp"
#include "fednorm/training.hpp"

namespace fednorm {

enum class ExperimentKind { Separability, NormError, ToyTraining, Robustness };
enum class PartitionKind { Gamma, Dirichlet };

// One experiment cell. Field names mirror the CLI flags one to one; every
// run writes the resolved values back out as a config-echo sidecar.
struct ExperimentConfig {
  ExperimentKind experiment = ExperimentKind::ToyTraining;
  Backend algo = Backend::Fbn;
  PartitionKind partition = PartitionKind::Gamma;
  double gamma = 1.0;   // label similarity, 1 = iid, 0 = one label block each
  double alpha = 1.0;   // dirichlet concentration

  AttackKind attack = AttackKind::None;
  AttackTargets targets = AttackTargets::StatsOnly;
  std::size_t f = 0;    // attacker count; also the trim/mix count of the rules
  double foe_eps = 1.0;
  std::optional<double> alie_z;  // unset derives the shift from (n, f)
  Aggregator agg;                // f is filled in from the field above

  std::size_t n_clients = 10;
  std::size_t batch = 30;   // per-client minibatch; per-component pool draw in
                            // the statistics experiments
  std::size_t rounds = 0;   // 0 keeps the experiment default (see resolve)
  std::size_t hidden = 32;
  std::size_t classes = 10;
  std::size_t m_per_class = 300;
  std::size_t test_per_class = 100;
  double beta = 0.1;
  double eps = 1e-5;
  double lr = 0.1;
  double sgd_momentum = 0.99;
  std::size_t t_switch = 0;  // 0 resolves to rounds / 2
  FreezeMode freeze = FreezeMode::Corrected;
  std::vector<double> levels = {0.0, 0.1, 0.5, 1.0};  // norm-error gamma grid

  std::uint64_t seed = 1;
  std::string out_dir = ".";
};

// name <-> enum helpers shared by the CLI, the config grammar, and the CSV
// writers; parsers throw config_error on unknown names
ExperimentKind parse_experiment_kind(const std::string& s);
Backend parse_backend(const std::string& s);
PartitionKind parse_partition_kind(const std::string& s);
AttackKind parse_attack_kind(const std::string& s);
AttackTargets parse_attack_targets(const std::string& s);
Aggregator parse_aggregator(const std::string& s);  // f left at zero
FreezeMode parse_freeze_mode(const std::string& s);
std::vector<double> parse_levels(const std::string& csv);

std::string to_string(ExperimentKind k);
std::string to_string(Backend b);
std::string to_string(PartitionKind k);
std::string to_string(AttackKind k);
std::string to_string(AttackTargets t);
std::string to_string(FreezeMode m);
std::string aggregator_name(const Aggregator& agg);

// fills in defaulted rounds / t_switch for the configured experiment
ExperimentConfig resolve(const ExperimentConfig& cfg);

// cross-field validity; throws config_error with the offending field named
void validate(const ExperimentConfig& cfg);

// the resolved config in the flat key=value grammar the CLI accepts
std::string render_config(const ExperimentConfig& resolved);

// assembled from the flat attack/aggregator fields
AttackConfig attack_config(const ExperimentConfig& cfg);
Aggregator aggregator(const ExperimentConfig& cfg);

struct SeparabilityResult {
  // spread of the pairwise-distance ratios under centralized normalization
  // (zero for an exact per-coordinate affine map)
  double max_ratio_spread = 0.0;
  // mean distance between the shared-statistics and centralized outputs
  double fbn_central_distance = 0.0;
  // largest post-normalization client centroid norm under local batch stats
  double max_naive_centroid = 0.0;
};

struct NormErrorCell {
  double level = 0.0;
  double fbn = 0.0;
  double fixbn = 0.0;
  double naive = 0.0;
};

struct RoundRecord {
  std::size_t round = 0;
  double loss = 0.0;
  double accuracy = 0.0;
};

struct ToyTrainingResult {
  std::vector<RoundRecord> curve;
  double final_loss = 0.0;
  double final_accuracy = 0.0;
};

struct RobustnessResult {
  std::vector<RoundRecord> no_attack;
  std::vector<RoundRecord> no_defense;
  std::vector<RoundRecord> defense;
};

// Normalization-only protocol rounds on the ring mixture; writes the final
// round's raw and normalized point cloud for every algorithm.
//   separability_points.csv: round,algo,client,label,x_raw,y_raw,x_norm,y_norm
SeparabilityResult run_separability(const ExperimentConfig& cfg);

// Per-round distance between each algorithm's normalized pool and the same
// pool normalized with the union batch statistics, averaged over the run,
// one row per (heterogeneity level, algorithm).
//   norm_error.csv: level,algo,error
std::vector<NormErrorCell> run_norm_error(const ExperimentConfig& cfg);

// Trains the ring classifier under the configured backend and partition.
//   training_curve.csv: round,loss,accuracy
//   summary.csv: one row of the cell parameters plus final loss/accuracy
ToyTrainingResult run_toy_training(const ExperimentConfig& cfg);

// The no-attack / no-defense / defense triple for one attack x aggregator
// cell. No defense aggregates plainly while the attack hits statistics and
// gradients; defense applies the robust rule to whatever is under attack.
//   robustness_curves.csv: scenario,round,loss,accuracy
//   robustness_summary.csv: scenario plus cell parameters and final accuracy
RobustnessResult run_robustness(const ExperimentConfig& cfg);

}  // namespace fednorm
