#include "fednorm/robustagg.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>

namespace fednorm {

namespace {

void check_rows(const VectorSet& rows, const char* what) {
  if (rows.empty()) throw std::invalid_argument(std::string(what) + ": no rows");
  const std::size_t d = rows.front().size();
  if (d == 0) throw std::invalid_argument(std::string(what) + ": empty rows");
  for (const auto& r : rows) {
    if (r.size() != d) throw std::invalid_argument(std::string(what) + ": ragged rows");
  }
}

std::vector<double> honest_mean(const VectorSet& rows, std::size_t f) {
  VectorSet honest(rows.begin() + static_cast<std::ptrdiff_t>(f), rows.end());
  return column_mean(honest);
}

// population standard deviation of rows f.. per coordinate
std::vector<double> honest_stddev(const VectorSet& rows, std::size_t f,
                                  const std::vector<double>& mu) {
  const std::size_t n = rows.size() - f;
  std::vector<double> sd(mu.size(), 0.0);
  for (std::size_t i = f; i < rows.size(); ++i) {
    for (std::size_t c = 0; c < mu.size(); ++c) {
      const double dev = rows[i][c] - mu[c];
      sd[c] += dev * dev;
    }
  }
  for (auto& v : sd) v = std::sqrt(v / static_cast<double>(n));
  return sd;
}

}  // namespace

std::vector<double> coordinate_median(const VectorSet& rows) {
  check_rows(rows, "coordinate_median");
  const std::size_t n = rows.size();
  const std::size_t d = rows.front().size();
  std::vector<double> out(d);
  std::vector<double> col(n);
  for (std::size_t c = 0; c < d; ++c) {
    for (std::size_t i = 0; i < n; ++i) col[i] = rows[i][c];
    std::sort(col.begin(), col.end());
    out[c] = (n % 2 == 1) ? col[n / 2] : (col[n / 2 - 1] + col[n / 2]) / 2.0;
  }
  return out;
}

std::vector<double> trimmed_mean(const VectorSet& rows, std::size_t f) {
  check_rows(rows, "trimmed_mean");
  const std::size_t n = rows.size();
  if (n <= 2 * f) {
    throw std::invalid_argument("trimmed_mean: needs more than 2f rows, got " +
                                std::to_string(n) + " with f = " + std::to_string(f));
  }
  const std::size_t d = rows.front().size();
  std::vector<double> out(d);
  std::vector<double> col(n);
  for (std::size_t c = 0; c < d; ++c) {
    for (std::size_t i = 0; i < n; ++i) col[i] = rows[i][c];
    std::sort(col.begin(), col.end());
    double sum = 0.0;
    for (std::size_t i = f; i < n - f; ++i) sum += col[i];
    out[c] = sum / static_cast<double>(n - 2 * f);
  }
  return out;
}

VectorSet nnm_mix(const VectorSet& rows, std::size_t f) {
  check_rows(rows, "nnm_mix");
  const std::size_t n = rows.size();
  if (f >= n) throw std::invalid_argument("nnm_mix: f must be below the row count");
  const std::size_t keep = n - f;
  VectorSet out(n);
  std::vector<std::pair<double, std::size_t>> order(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double d2 = 0.0;
      for (std::size_t c = 0; c < rows[i].size(); ++c) {
        const double dv = rows[i][c] - rows[j][c];
        d2 += dv * dv;
      }
      order[j] = {d2, j};
    }
    std::sort(order.begin(), order.end());
    VectorSet nearest;
    nearest.reserve(keep);
    for (std::size_t k = 0; k < keep; ++k) nearest.push_back(rows[order[k].second]);
    out[i] = column_mean(nearest);
  }
  return out;
}

std::vector<double> Aggregator::apply(const VectorSet& rows) const {
  if (nnm) {
    const VectorSet mixed = nnm_mix(rows, f);
    Aggregator plain{rule, false, f};
    return plain.apply(mixed);
  }
  switch (rule) {
    case AggRule::Mean:
      check_rows(rows, "Aggregator");
      return column_mean(rows);
    case AggRule::Median:
      return coordinate_median(rows);
    case AggRule::Trimmed:
      return trimmed_mean(rows, f);
  }
  throw std::invalid_argument("Aggregator: unknown rule");
}

double inverse_normal_cdf(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw std::invalid_argument("inverse_normal_cdf: p must lie in (0, 1)");
  }
  // work on the lower tail; erfc loses precision near 1
  if (p > 0.5) return -inverse_normal_cdf(1.0 - p);
  // rational approximation, then one Halley correction
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double dd[] = {7.784695709041462e-03, 3.224671290700398e-01,
                              2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  double x;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((dd[0] * q + dd[1]) * q + dd[2]) * q + dd[3]) * q + 1.0);
  } else {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  }
  const double err = 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
  const double u = err * std::sqrt(2.0 * std::numbers::pi) * std::exp(x * x / 2.0);
  return x - u / (1.0 + x * u / 2.0);
}

double alie_z(std::size_t n_clients, std::size_t n_byz) {
  if (n_byz >= n_clients) {
    throw std::invalid_argument("alie_z: attackers must be a strict minority");
  }
  const std::size_t honest = n_clients - n_byz;
  const std::size_t majority = n_clients / 2 + 1;
  if (majority <= n_byz) {
    throw std::invalid_argument("alie_z: attackers already hold a majority");
  }
  const std::size_t supporters = majority - n_byz;
  if (supporters >= honest) {
    throw std::invalid_argument("alie_z: not enough honest clients to blend into");
  }
  const double p = static_cast<double>(honest - supporters) / static_cast<double>(honest);
  return inverse_normal_cdf(p);
}

bool attacks_stats(const AttackConfig& a) {
  return a.kind != AttackKind::None && a.f > 0 &&
         a.targets != AttackTargets::GradientsOnly;
}

bool attacks_gradients(const AttackConfig& a) {
  return a.kind != AttackKind::None && a.f > 0 &&
         a.targets != AttackTargets::StatsOnly;
}

void attack_vectors(VectorSet& rows, const AttackConfig& atk) {
  if (atk.kind == AttackKind::None || atk.f == 0) return;
  check_rows(rows, "attack_vectors");
  if (atk.f >= rows.size()) {
    throw std::invalid_argument("attack_vectors: needs at least one honest row");
  }
  const std::size_t d = rows.front().size();
  switch (atk.kind) {
    case AttackKind::SignFlip:
      for (std::size_t i = 0; i < atk.f; ++i) {
        for (auto& v : rows[i]) v = -v;
      }
      return;
    case AttackKind::Foe: {
      if (atk.eps < 0.0) throw std::invalid_argument("attack_vectors: eps must be non-negative");
      const auto mu = honest_mean(rows, atk.f);
      for (std::size_t i = 0; i < atk.f; ++i) {
        for (std::size_t c = 0; c < d; ++c) rows[i][c] = -atk.eps * mu[c];
      }
      return;
    }
    case AttackKind::Alie: {
      const auto mu = honest_mean(rows, atk.f);
      const auto sd = honest_stddev(rows, atk.f, mu);
      const double z = atk.z ? *atk.z : alie_z(rows.size(), atk.f);
      for (std::size_t i = 0; i < atk.f; ++i) {
        for (std::size_t c = 0; c < d; ++c) rows[i][c] = mu[c] - z * sd[c];
      }
      return;
    }
    case AttackKind::None:
      return;
  }
}

void attack_reports(std::vector<ClientStatsReport>& reports,
                    const AttackConfig& atk) {
  if (atk.kind == AttackKind::None || atk.f == 0) return;
  if (atk.f >= reports.size()) {
    throw std::invalid_argument("attack_reports: needs at least one honest report");
  }
  VectorSet means, vars;
  for (const auto& r : reports) {
    means.push_back(r.run_mean);
    vars.push_back(r.run_var);
  }
  attack_vectors(means, atk);
  for (std::size_t i = 0; i < atk.f; ++i) reports[i].run_mean = means[i];
  if (atk.kind == AttackKind::Foe || atk.kind == AttackKind::Alie) {
    const auto hv = honest_mean(vars, atk.f);
    for (std::size_t i = 0; i < atk.f; ++i) reports[i].run_var = hv;
  }
}

RunningStats robust_stats_aggregate(const std::vector<ClientStatsReport>& reports,
                                    const SharedState& shared,
                                    const Aggregator& agg) {
  if (reports.size() != shared.n_clients) {
    throw std::invalid_argument(
        "robust_stats_aggregate: got " + std::to_string(reports.size()) +
        " reports for " + std::to_string(shared.n_clients) + " clients");
  }
  const std::size_t d = shared.stats.mean.size();
  VectorSet means, vars;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    if (reports[i].run_mean.size() != d || reports[i].run_var.size() != d) {
      throw std::invalid_argument("robust_stats_aggregate: report " +
                                  std::to_string(i) + " has wrong width");
    }
    means.push_back(reports[i].run_mean);
    vars.push_back(reports[i].run_var);
  }
  RunningStats out = shared.stats;
  out.mean = agg.apply(means);
  out.var = agg.apply(vars);
  const double kn = static_cast<double>(shared.n_clients * shared.k_per_client);
  if (kn < 2.0) throw std::invalid_argument("robust_stats_aggregate: union batch too small");
  const double corr = kn / ((kn - 1.0) * shared.stats.momentum);
  VectorSet devsq(reports.size(), std::vector<double>(d));
  for (std::size_t i = 0; i < reports.size(); ++i) {
    for (std::size_t c = 0; c < d; ++c) {
      const double dev = means[i][c] - out.mean[c];
      devsq[i][c] = dev * dev;
    }
  }
  const std::vector<double> spread = agg.apply(devsq);
  for (std::size_t c = 0; c < d; ++c) out.var[c] += corr * spread[c];
  return out;
}

RunningStats robust_stats_plain(const std::vector<ClientStatsReport>& reports,
                                double momentum, double eps,
                                const Aggregator& agg) {
  if (reports.empty()) throw std::invalid_argument("robust_stats_plain: no reports");
  VectorSet means, vars;
  for (const auto& r : reports) {
    means.push_back(r.run_mean);
    vars.push_back(r.run_var);
  }
  RunningStats out;
  out.mean = agg.apply(means);
  out.var = agg.apply(vars);
  out.momentum = momentum;
  out.eps = eps;
  return out;
}

}  // namespace fednorm
