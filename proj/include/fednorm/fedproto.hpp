#pragma once

#include <cstddef>
#include <optional>
#include <utility>
#include <vector>

#include "fednorm/statkernels.hpp"

namespace fednorm {

struct ClientStatsReport {
  std::vector<double> run_mean;
  std::vector<double> run_var;
};

// Broadcast protocol state for one normalized feature map.
struct SharedState {
  RunningStats stats;
  std::size_t round = 0;
  std::size_t n_clients = 0;
  std::size_t k_per_client = 0;  // equal batch sizes are part of the contract
};

SharedState make_shared_state(std::size_t d, std::size_t n_clients,
                              std::size_t k_per_client, double momentum = 0.1,
                              double eps = 1e-5);

ClientStatsReport to_report(const RunningStats& stats);

// The report a client derives from its batch moments: EMA against the shared
// statistics, with the variance debiased by the union count Kn.
ClientStatsReport fbn_report(const Moments& m, const SharedState& shared);

// Normalize with the shared running statistics (not the batch's own) and
// produce the statistics report for the server.
std::pair<FeatureBatch, ClientStatsReport> fbn_client_step(
    const FeatureBatch& batch, const SharedState& shared,
    const AffineParams& affine);

// Average the client reports; the variance additionally picks up the spread
// of the reported means so the result matches a pass over the union batch.
RunningStats fbn_server_aggregate(const std::vector<ClientStatsReport>& reports,
                                  const SharedState& shared);

// Plain batch normalization on the local batch; the updated running
// statistics use the local Bessel factor K/(K-1).
std::pair<FeatureBatch, RunningStats> naive_client_step(
    const FeatureBatch& batch, const RunningStats& local,
    const AffineParams& affine);

// Coordinate-wise average of the reported statistics, no correction.
RunningStats naive_server_aggregate(const std::vector<ClientStatsReport>& reports,
                                    double momentum, double eps);

enum class FixBnPhase { Batch, Frozen };

struct FixBnState {
  SharedState shared;
  std::size_t t_switch = 0;
  FixBnPhase phase = FixBnPhase::Batch;
  std::optional<RunningStats> frozen;
};

struct FixBnStepResult {
  FeatureBatch normalized;
  std::optional<RunningStats> updated_local;  // absent once frozen
};

// Batch phase: identical to naive_client_step against the shared statistics.
// Frozen phase: normalize with the frozen statistics, no further updates.
FixBnStepResult fixbn_step(const FeatureBatch& batch, const FixBnState& state,
                           const AffineParams& affine);

// Normalization with fixed statistics (evaluation mode).
FeatureBatch eval_normalize(const FeatureBatch& batch,
                            const RunningStats& stats,
                            const AffineParams& affine);

}  // namespace fednorm
