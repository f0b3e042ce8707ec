#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "fednorm/fedproto.hpp"
#include "fednorm/statkernels.hpp"

namespace fednorm {

// n vectors of equal width, one per client
using VectorSet = std::vector<std::vector<double>>;

// per-coordinate median; even counts average the two central values
std::vector<double> coordinate_median(const VectorSet& rows);

// per coordinate, drop the f smallest and f largest, average the rest;
// needs more than 2f rows
std::vector<double> trimmed_mean(const VectorSet& rows, std::size_t f);

// replace each row by the mean of its n - f nearest rows (itself included);
// distance ties go to the lower row index
VectorSet nnm_mix(const VectorSet& rows, std::size_t f);

enum class AggRule { Mean, Median, Trimmed };

// optional nearest-neighbor mixing followed by a per-coordinate rule;
// the plain Mean rule reproduces column_mean bit for bit
struct Aggregator {
  AggRule rule = AggRule::Mean;
  bool nnm = false;
  std::size_t f = 0;

  std::vector<double> apply(const VectorSet& rows) const;
};

// quantile function of the standard normal, p in (0, 1)
double inverse_normal_cdf(double p);

// shift that keeps crafted values inside the honest spread while still
// displacing rank-based aggregates; derived from the cohort size
double alie_z(std::size_t n_clients, std::size_t n_byz);

enum class AttackKind { None, SignFlip, Foe, Alie };
enum class AttackTargets { StatsOnly, GradientsOnly, Both };

struct AttackConfig {
  AttackKind kind = AttackKind::None;
  AttackTargets targets = AttackTargets::StatsOnly;
  std::size_t f = 0;
  double eps = 1.0;          // scale of the negated honest mean (Foe)
  std::optional<double> z;   // Alie shift; unset derives it from (n, f)
};

bool attacks_stats(const AttackConfig& a);
bool attacks_gradients(const AttackConfig& a);

// rows 0..f-1 are attacker-controlled; honest rows follow.
// SignFlip negates the controlled rows, Foe sends -eps times the honest
// mean, Alie sends honest mean minus z honest standard deviations.
void attack_vectors(VectorSet& rows, const AttackConfig& atk);

// same attacks aimed at normalization statistics: the run_mean halves are
// manipulated as above while crafted run_var entries copy the honest mean
// so the reports stay plausible
void attack_reports(std::vector<ClientStatsReport>& reports,
                    const AttackConfig& atk);

// aggregation of client statistics under a robust rule, keeping the
// mean-spread variance correction; with the plain Mean rule this is
// bit-identical to fbn_server_aggregate
RunningStats robust_stats_aggregate(const std::vector<ClientStatsReport>& reports,
                                    const SharedState& shared,
                                    const Aggregator& agg);

// rule over means and vars with no correction term; plain Mean reproduces
// naive_server_aggregate
RunningStats robust_stats_plain(const std::vector<ClientStatsReport>& reports,
                                double momentum, double eps,
                                const Aggregator& agg);

}  // namespace fednorm
