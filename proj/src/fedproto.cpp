#include "fednorm/fedproto.hpp"

#include <stdexcept>
#include <string>

namespace fednorm {

namespace {

void check_shared(const SharedState& shared, const char* what) {
  if (shared.n_clients == 0 || shared.k_per_client == 0) {
    throw std::invalid_argument(std::string(what) +
                                ": shared state has no clients or empty batches");
  }
  if (shared.n_clients * shared.k_per_client < 2) {
    throw std::invalid_argument(std::string(what) +
                                ": union batch needs at least 2 samples");
  }
}

}  // namespace

SharedState make_shared_state(std::size_t d, std::size_t n_clients,
                              std::size_t k_per_client, double momentum,
                              double eps) {
  SharedState s;
  s.stats = make_running_stats(d, momentum, eps);
  s.n_clients = n_clients;
  s.k_per_client = k_per_client;
  check_shared(s, "make_shared_state");
  return s;
}

ClientStatsReport to_report(const RunningStats& stats) {
  return ClientStatsReport{stats.mean, stats.var};
}

ClientStatsReport fbn_report(const Moments& m, const SharedState& shared) {
  check_shared(shared, "fbn_report");
  const std::size_t d = shared.stats.mean.size();
  if (m.mean.size() != d || m.var_biased.size() != d) {
    throw std::invalid_argument("fbn_report: moment width does not match state");
  }
  RunningStats base = shared.stats;
  const std::size_t kn = shared.n_clients * shared.k_per_client;
  return to_report(update_running(base, m, kn));
}

std::pair<FeatureBatch, ClientStatsReport> fbn_client_step(
    const FeatureBatch& batch, const SharedState& shared,
    const AffineParams& affine) {
  check_shared(shared, "fbn_client_step");
  if (batch.rows != shared.k_per_client) {
    throw std::invalid_argument(
        "fbn_client_step: batch has " + std::to_string(batch.rows) +
        " rows, protocol requires " + std::to_string(shared.k_per_client));
  }
  const Moments m = batch_moments(batch);
  FeatureBatch out = normalize(batch, shared.stats.mean, shared.stats.var,
                               shared.stats.eps, affine);
  return {std::move(out), fbn_report(m, shared)};
}

RunningStats fbn_server_aggregate(const std::vector<ClientStatsReport>& reports,
                                  const SharedState& shared) {
  check_shared(shared, "fbn_server_aggregate");
  if (reports.size() != shared.n_clients) {
    throw std::invalid_argument(
        "fbn_server_aggregate: got " + std::to_string(reports.size()) +
        " reports for " + std::to_string(shared.n_clients) + " clients");
  }
  const std::size_t d = shared.stats.mean.size();
  std::vector<std::vector<double>> means, vars;
  means.reserve(reports.size());
  vars.reserve(reports.size());
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    if (r.run_mean.size() != d || r.run_var.size() != d) {
      throw std::invalid_argument("fbn_server_aggregate: report " +
                                  std::to_string(i) + " has wrong width");
    }
    for (std::size_t c = 0; c < d; ++c) {
      if (r.run_var[c] < 0.0) {
        throw std::invalid_argument(
            "fbn_server_aggregate: negative variance in report " +
            std::to_string(i) + ", column " + std::to_string(c));
      }
    }
    means.push_back(r.run_mean);
    vars.push_back(r.run_var);
  }
  RunningStats out = shared.stats;
  out.mean = column_mean(means);
  out.var = column_mean(vars);
  const double kn =
      static_cast<double>(shared.n_clients * shared.k_per_client);
  const double corr = kn / ((kn - 1.0) * shared.stats.momentum);
  std::vector<std::vector<double>> devsq(reports.size(),
                                         std::vector<double>(d));
  for (std::size_t i = 0; i < reports.size(); ++i) {
    for (std::size_t c = 0; c < d; ++c) {
      const double dev = means[i][c] - out.mean[c];
      devsq[i][c] = dev * dev;
    }
  }
  const std::vector<double> spread = column_mean(devsq);
  for (std::size_t c = 0; c < d; ++c) out.var[c] += corr * spread[c];
  return out;
}

std::pair<FeatureBatch, RunningStats> naive_client_step(
    const FeatureBatch& batch, const RunningStats& local,
    const AffineParams& affine) {
  if (batch.rows < 2) {
    throw std::invalid_argument(
        "naive_client_step: batch needs at least 2 samples");
  }
  const Moments m = batch_moments(batch);
  FeatureBatch out =
      normalize(batch, m.mean, m.var_biased, local.eps, affine);
  return {std::move(out), update_running(local, m, batch.rows)};
}

RunningStats naive_server_aggregate(const std::vector<ClientStatsReport>& reports,
                                    double momentum, double eps) {
  if (reports.empty()) {
    throw std::invalid_argument("naive_server_aggregate: no reports");
  }
  const std::size_t d = reports.front().run_mean.size();
  std::vector<std::vector<double>> means, vars;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    if (reports[i].run_mean.size() != d || reports[i].run_var.size() != d) {
      throw std::invalid_argument("naive_server_aggregate: report " +
                                  std::to_string(i) + " has wrong width");
    }
    means.push_back(reports[i].run_mean);
    vars.push_back(reports[i].run_var);
  }
  RunningStats out;
  out.mean = column_mean(means);
  out.var = column_mean(vars);
  out.momentum = momentum;
  out.eps = eps;
  return out;
}

FixBnStepResult fixbn_step(const FeatureBatch& batch, const FixBnState& state,
                           const AffineParams& affine) {
  if (state.phase == FixBnPhase::Frozen) {
    if (!state.frozen.has_value()) {
      throw std::invalid_argument(
          "fixbn_step: frozen phase without frozen statistics");
    }
    return {eval_normalize(batch, *state.frozen, affine), std::nullopt};
  }
  auto [out, updated] =
      naive_client_step(batch, state.shared.stats, affine);
  return {std::move(out), std::move(updated)};
}

FeatureBatch eval_normalize(const FeatureBatch& batch,
                            const RunningStats& stats,
                            const AffineParams& affine) {
  return normalize(batch, stats.mean, stats.var, stats.eps, affine);
}

}  // namespace fednorm
