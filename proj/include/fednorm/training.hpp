#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "fednorm/datagen.hpp"
#include "fednorm/fedproto.hpp"
#include "fednorm/netmodel.hpp"
#include "fednorm/robustagg.hpp"
#include "fednorm/rng.hpp"

namespace fednorm {

// Centralized: one worker trains on the union of the per-client batches.
// Fbn: clients normalize with the shared running statistics and the server
//      rebuilds the union statistics from their reports.
// Naive: clients normalize with their own batch statistics and the server
//      plain-averages the reported running statistics.
// FixBn: runs like Naive until t_switch, then freezes the shared statistics
//      and keeps training with them.
enum class Backend { Centralized, Fbn, Naive, FixBn };

// what FixBn freezes at the switch: statistics maintained through the
// union-consistent aggregation (Corrected) or the plain average (Naive)
enum class FreezeMode { Corrected, Naive };

struct TrainConfig {
  Backend backend = Backend::Fbn;
  std::size_t n_clients = 10;
  std::size_t batch = 30;      // per client, every round
  std::size_t rounds = 500;
  std::size_t hidden = 32;
  std::size_t classes = 10;
  double beta = 0.1;           // running-statistics momentum
  double eps = 1e-5;
  double base_lr = 0.1;        // first third of the step schedule
  double sgd_momentum = 0.99;
  std::size_t t_switch = 0;    // 0 resolves to rounds / 2 (FixBn only)
  FreezeMode freeze = FreezeMode::Corrected;
  AttackConfig attack;
  Aggregator grad_agg;         // plain mean unless a defense is configured
  Aggregator stats_agg;
  std::uint64_t seed = 1;
};

struct TrainState {
  TrainConfig cfg;
  LabeledDataset data;
  std::vector<std::vector<std::size_t>> parts;  // per-client sample indices
  Model model;
  std::vector<std::vector<double>> velocity;    // per-client momentum buffers
  Rng master{0};
  std::size_t round = 0;  // completed rounds
};

// validates the configuration and initializes the model from cfg.seed
TrainState make_train_state(const TrainConfig& cfg, LabeledDataset data,
                            std::vector<std::vector<std::size_t>> parts);

// one synchronous round; returns the mean training loss across clients
double run_round(TrainState& st);

// runs the remaining rounds
void train(TrainState& st);

// accuracy under the model's current running statistics
double evaluate_accuracy(const TrainState& st, const LabeledDataset& test);

// mean Euclidean distance between matching rows
double normalization_error(const FeatureBatch& a, const FeatureBatch& b);

}  // namespace fednorm
