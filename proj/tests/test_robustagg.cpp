#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "fednorm/fedproto.hpp"
#include "fednorm/rng.hpp"
#include "fednorm/robustagg.hpp"
#include "fednorm/statkernels.hpp"

using namespace fednorm;

namespace {

double std_normal_cdf(double x) {
  return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

// slow but dependable reference for the quantile function
double inverse_by_bisection(double p) {
  double lo = -10.0, hi = 10.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (std_normal_cdf(mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

std::vector<ClientStatsReport> random_reports(Rng& r, std::size_t n,
                                              std::size_t d) {
  std::vector<ClientStatsReport> reps(n);
  for (auto& rep : reps) {
    rep.run_mean.resize(d);
    rep.run_var.resize(d);
    for (auto& v : rep.run_mean) v = r.normal(2.0, 3.0);
    for (auto& v : rep.run_var) v = 0.5 + r.uniform(0.0, 4.0);
  }
  return reps;
}

}  // namespace

TEST_SUITE_BEGIN("robustagg");

TEST_CASE("coordinate_median handles odd and even counts") {
  CHECK(coordinate_median({{1.0}, {5.0}, {2.0}})[0] == 2.0);
  CHECK(coordinate_median({{1.0}, {2.0}, {3.0}, {100.0}})[0] == 2.5);
  auto m = coordinate_median({{1.0, 10.0}, {2.0, 30.0}, {3.0, 20.0}});
  CHECK(m[0] == 2.0);
  CHECK(m[1] == 20.0);
}

TEST_CASE("trimmed_mean drops the tails") {
  auto t = trimmed_mean({{1.0}, {2.0}, {3.0}, {4.0}, {100.0}}, 1);
  CHECK(t[0] == doctest::Approx(3.0));
  CHECK_THROWS_AS((void)trimmed_mean({{1.0}, {2.0}}, 1), std::invalid_argument);
  CHECK(trimmed_mean({{5.0}}, 0)[0] == 5.0);
}

TEST_CASE("nnm_mix averages each row with its nearest peers") {
  auto mixed = nnm_mix({{0.0}, {1.0}, {2.0}, {10.0}}, 1);
  CHECK(mixed[0][0] == doctest::Approx(1.0));
  CHECK(mixed[1][0] == doctest::Approx(1.0));
  CHECK(mixed[2][0] == doctest::Approx(1.0));
  CHECK(mixed[3][0] == doctest::Approx(13.0 / 3.0));
}

TEST_CASE("nnm_mix breaks distance ties toward the lower index") {
  auto mixed = nnm_mix({{0.0}, {1.0}, {-1.0}, {5.0}}, 2);
  CHECK(mixed[0][0] == doctest::Approx(0.5));
}

TEST_CASE("mean rule is the plain column mean, bit for bit") {
  Rng r(7);
  VectorSet rows(9, std::vector<double>(5));
  for (auto& row : rows) {
    for (auto& v : row) v = r.normal(0.0, 10.0);
  }
  Aggregator agg;
  CHECK(agg.apply(rows) == column_mean(rows));
}

TEST_CASE("quantile function matches a bisection reference") {
  CHECK(inverse_normal_cdf(0.5) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(inverse_normal_cdf(0.975) ==
        doctest::Approx(1.959963984540054).epsilon(1e-12));
  // 1 - 1e-9 is excluded: probabilities that close to 1 cannot be resolved
  // in double precision, by the oracle or by anything else
  for (double p :
       {1e-9, 1e-4, 0.02, 0.1, 0.3, 0.5, 4.0 / 7.0, 0.9, 0.99, 0.9999}) {
    const double x = inverse_normal_cdf(p);
    const double xb = inverse_by_bisection(p);
    CHECK(std::abs(x - xb) <= 1e-9 * std::max(1.0, std::abs(xb)));
  }
  // upper-tail arguments reflect to the lower tail exactly
  for (double p : {0.75, 0.875, 0.984375}) {
    CHECK(inverse_normal_cdf(p) == -inverse_normal_cdf(1.0 - p));
  }
  CHECK_THROWS_AS((void)inverse_normal_cdf(0.0), std::invalid_argument);
  CHECK_THROWS_AS((void)inverse_normal_cdf(1.0), std::invalid_argument);
}

TEST_CASE("alie shift for the ten-client three-attacker cohort") {
  CHECK(alie_z(10, 3) == doctest::Approx(0.18001236979270493).epsilon(1e-12));
  CHECK(alie_z(4, 1) ==
        doctest::Approx(inverse_normal_cdf(1.0 / 3.0)).epsilon(1e-15));
  CHECK_THROWS_AS((void)alie_z(10, 6), std::invalid_argument);
  CHECK_THROWS_AS((void)alie_z(2, 0), std::invalid_argument);
  CHECK_THROWS_AS((void)alie_z(3, 3), std::invalid_argument);
}

TEST_CASE("sign flip negates the controlled rows and is an involution") {
  VectorSet rows = {{1.0, -2.0}, {3.0, 4.0}, {5.0, 6.0}};
  const VectorSet orig = rows;
  AttackConfig atk{AttackKind::SignFlip, AttackTargets::Both, 1, 1.0, {}};
  attack_vectors(rows, atk);
  CHECK(rows[0] == std::vector<double>{-1.0, 2.0});
  CHECK(rows[1] == orig[1]);
  attack_vectors(rows, atk);
  CHECK(rows == orig);
}

TEST_CASE("negated-mean attack sends minus eps times the honest mean") {
  VectorSet rows = {{9.0, 9.0}, {1.0, 1.0}, {3.0, 3.0}};
  attack_vectors(rows, {AttackKind::Foe, AttackTargets::Both, 1, 1.0, {}});
  CHECK(rows[0] == std::vector<double>{-2.0, -2.0});

  rows = {{9.0, 9.0}, {1.0, 1.0}, {3.0, 3.0}};
  attack_vectors(rows, {AttackKind::Foe, AttackTargets::Both, 1, 0.5, {}});
  CHECK(rows[0] == std::vector<double>{-1.0, -1.0});
}

TEST_CASE("small-shift attack hides below the honest spread") {
  VectorSet rows = {{100.0}, {0.0}, {2.0}};
  attack_vectors(rows, {AttackKind::Alie, AttackTargets::Both, 1, 1.0, 2.5});
  CHECK(rows[0][0] == doctest::Approx(1.0 - 2.5 * 1.0));  // mu 1, sigma 1
}

TEST_CASE("report attacks leave crafted variances plausible") {
  Rng r(9);
  auto reps = random_reports(r, 5, 3);
  const auto orig = reps;

  SUBCASE("sign flip touches only the means") {
    attack_reports(reps, {AttackKind::SignFlip, AttackTargets::Both, 2, 1.0, {}});
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t c = 0; c < 3; ++c) {
        CHECK(reps[i].run_mean[c] == -orig[i].run_mean[c]);
      }
      CHECK(reps[i].run_var == orig[i].run_var);
    }
    CHECK(reps[3].run_mean == orig[3].run_mean);
  }

  SUBCASE("negated-mean and small-shift copy the honest variance mean") {
    for (auto kind : {AttackKind::Foe, AttackKind::Alie}) {
      reps = orig;
      attack_reports(reps, {kind, AttackTargets::Both, 2, 1.0, {}});
      VectorSet hv;
      for (std::size_t i = 2; i < 5; ++i) hv.push_back(orig[i].run_var);
      const auto hvm = column_mean(hv);
      CHECK(reps[0].run_var == hvm);
      CHECK(reps[1].run_var == hvm);
      CHECK(reps[4].run_mean == orig[4].run_mean);
    }
  }
}

TEST_CASE("mean-rule robust aggregation reproduces the protocol server") {
  Rng r(13);
  SharedState shared = make_shared_state(4, 6, 5, 0.1, 1e-5);
  auto reps = random_reports(r, 6, 4);
  const Aggregator mean_rule;
  const auto a = robust_stats_aggregate(reps, shared, mean_rule);
  const auto b = fbn_server_aggregate(reps, shared);
  CHECK(a.mean == b.mean);
  CHECK(a.var == b.var);

  const auto c = robust_stats_plain(reps, 0.1, 1e-5, mean_rule);
  const auto d = naive_server_aggregate(reps, 0.1, 1e-5);
  CHECK(c.mean == d.mean);
  CHECK(c.var == d.var);
}

TEST_CASE("median rule shrugs off a sign-flip minority") {
  Rng r(17);
  SharedState shared = make_shared_state(2, 10, 6, 0.1, 1e-5);
  std::vector<ClientStatsReport> reps(10);
  for (auto& rep : reps) {
    rep.run_mean = {5.0 + r.normal(0.0, 0.05), -3.0 + r.normal(0.0, 0.05)};
    rep.run_var = {1.0 + r.uniform(0.0, 0.05), 2.0 + r.uniform(0.0, 0.05)};
  }
  const auto honest = robust_stats_aggregate(reps, shared, Aggregator{});
  attack_reports(reps, {AttackKind::SignFlip, AttackTargets::Both, 3, 1.0, {}});

  const Aggregator defense{AggRule::Median, true, 3};
  const auto defended = robust_stats_aggregate(reps, shared, defense);
  for (std::size_t c = 0; c < 2; ++c) {
    CHECK(std::abs(defended.mean[c] - honest.mean[c]) < 0.2);
    CHECK(std::abs(defended.var[c] - honest.var[c]) < 1.0);
  }

  // plain averaging is wrecked by the same minority
  const auto undefended = robust_stats_aggregate(reps, shared, Aggregator{});
  CHECK(std::abs(undefended.mean[0] - honest.mean[0]) > 2.0);
}

TEST_CASE("aggregation input contracts") {
  SharedState shared = make_shared_state(2, 3, 4, 0.1, 1e-5);
  Rng r(1);
  auto reps = random_reports(r, 2, 2);
  CHECK_THROWS_AS((void)robust_stats_aggregate(reps, shared, Aggregator{}),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)robust_stats_plain({}, 0.1, 1e-5, Aggregator{}),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)coordinate_median({}), std::invalid_argument);
  CHECK_THROWS_AS((void)nnm_mix({{1.0}}, 1), std::invalid_argument);

  VectorSet rows = {{1.0}, {2.0}};
  CHECK_THROWS_AS(
      attack_vectors(rows, {AttackKind::Foe, AttackTargets::Both, 2, 1.0, {}}),
      std::invalid_argument);
  CHECK_THROWS_AS(
      attack_vectors(rows, {AttackKind::Foe, AttackTargets::Both, 1, -1.0, {}}),
      std::invalid_argument);
}

TEST_SUITE_END();
