#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <set>
#include <stdexcept>

#include "doctest.h"
#include "fednorm/datagen.hpp"
#include "fednorm/rng.hpp"
#include "fednorm/statkernels.hpp"

using namespace fednorm;

namespace {

std::map<int, std::size_t> label_counts(const std::vector<int>& labels,
                                        const std::vector<std::size_t>& idx) {
  std::map<int, std::size_t> counts;
  for (auto i : idx) ++counts[labels[i]];
  return counts;
}

// every index appears exactly once across clients, equal shares
void check_partition(const std::vector<std::vector<std::size_t>>& clients,
                     std::size_t used, bool equal_shares) {
  std::set<std::size_t> seen;
  std::size_t total = 0;
  for (const auto& c : clients) {
    if (equal_shares) CHECK(c.size() == used / clients.size());
    total += c.size();
    seen.insert(c.begin(), c.end());
  }
  CHECK(total == used);
  CHECK(seen.size() == used);
}

}  // namespace

TEST_SUITE_BEGIN("datagen");

TEST_CASE("gaussian_ring blob layout") {
  Rng rng(11);
  auto d = gaussian_ring(10, 30, 1.0, rng);
  REQUIRE(d.x.rows == 300);
  REQUIRE(d.x.cols == 2);

  // component-major labels
  for (std::size_t i = 0; i < 300; ++i) CHECK(d.labels[i] == static_cast<int>(i / 30));

  // each blob's sample mean sits near its center (sd 1, 30 samples)
  for (std::size_t i = 0; i < 10; ++i) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(i) / 10.0;
    double mx = 0.0, my = 0.0;
    for (std::size_t j = 0; j < 30; ++j) {
      mx += d.x.at(i * 30 + j, 0);
      my += d.x.at(i * 30 + j, 1);
    }
    CHECK(std::abs(mx / 30.0 - 10.0 * std::cos(angle)) < 1.0);
    CHECK(std::abs(my / 30.0 - 10.0 * std::sin(angle)) < 1.0);
  }
}

TEST_CASE("gaussian_ring per-coordinate variance approaches 51") {
  // blob variance 1 plus spread of the centers: 1 + 100 * mean(cos^2) = 51
  Rng rng(12);
  auto d = gaussian_ring(10, 3000, 1.0, rng);
  auto m = batch_moments(d.x);
  CHECK(m.var_biased[0] == doctest::Approx(51.0).epsilon(0.05));
  CHECK(m.var_biased[1] == doctest::Approx(51.0).epsilon(0.05));
}

TEST_CASE("gamma_split at the extremes") {
  Rng rng(21);
  auto d = gaussian_ring(10, 30, 1.0, rng);

  SUBCASE("gamma 0 gives one pure component per client") {
    auto clients = gamma_split(d.labels, 10, 0.0, rng);
    check_partition(clients, 300, true);
    std::set<int> owned;
    for (const auto& c : clients) {
      auto counts = label_counts(d.labels, c);
      REQUIRE(counts.size() == 1);
      owned.insert(counts.begin()->first);
    }
    CHECK(owned.size() == 10);
  }

  SUBCASE("gamma 1 spreads labels across every client") {
    auto clients = gamma_split(d.labels, 10, 1.0, rng);
    check_partition(clients, 300, true);
    for (const auto& c : clients) {
      CHECK(label_counts(d.labels, c).size() >= 5);
    }
  }

  SUBCASE("gamma 0.5 keeps a dominant pair of labels per client") {
    auto clients = gamma_split(d.labels, 10, 0.5, rng);
    check_partition(clients, 300, true);
    for (const auto& c : clients) {
      auto counts = label_counts(d.labels, c);
      std::vector<std::size_t> sizes;
      for (const auto& [lbl, cnt] : counts) sizes.push_back(cnt);
      std::sort(sizes.rbegin(), sizes.rend());
      std::size_t top2 = sizes[0] + (sizes.size() > 1 ? sizes[1] : 0);
      CHECK(top2 >= 15);  // the sorted half spans at most two labels
    }
  }
}

TEST_CASE("gamma_split drops the remainder at random") {
  std::vector<int> labels(17, 0);
  Rng rng(3);
  auto clients = gamma_split(labels, 5, 1.0, rng);
  check_partition(clients, 15, true);
}

TEST_CASE("dirichlet_split partitions without empty clients") {
  Rng rng(31);
  auto d = gaussian_ring(10, 30, 1.0, rng);
  for (double alpha : {0.1, 1.0, 100.0}) {
    auto clients = dirichlet_split(d.labels, 10, alpha, rng);
    check_partition(clients, 300, false);
  }
}

TEST_CASE("dirichlet_split skew grows as alpha shrinks") {
  Rng rng(32);
  auto d = gaussian_ring(10, 300, 1.0, rng);
  auto dominant_share = [&](double alpha) {
    Rng local = rng.split(static_cast<std::uint64_t>(alpha * 1000));
    auto clients = dirichlet_split(d.labels, 10, alpha, local);
    double total = 0.0;
    for (const auto& c : clients) {
      std::size_t top = 0;
      for (const auto& [lbl, cnt] : label_counts(d.labels, c)) top = std::max(top, cnt);
      total += static_cast<double>(top) / static_cast<double>(c.size());
    }
    return total / 10.0;
  };
  CHECK(dominant_share(0.05) > dominant_share(100.0) + 0.2);
  CHECK(dominant_share(100.0) < 0.2);
}

TEST_CASE("take_rows gathers rows and labels") {
  LabeledDataset d(3, 2);
  for (std::size_t r = 0; r < 3; ++r) {
    d.x.at(r, 0) = static_cast<double>(r);
    d.x.at(r, 1) = 10.0 * static_cast<double>(r);
    d.labels[r] = static_cast<int>(r);
  }
  auto sub = take_rows(d, {2, 0});
  CHECK(sub.x.rows == 2);
  CHECK(sub.x.at(0, 1) == 20.0);
  CHECK(sub.labels[0] == 2);
  CHECK(sub.labels[1] == 0);
  CHECK_THROWS_AS((void)take_rows(d, {5}), std::invalid_argument);
}

TEST_CASE("labeled csv round-trips bit-exactly") {
  Rng rng(41);
  LabeledDataset d(20, 3);
  for (auto& v : d.x.data) v = rng.normal(0.0, 1e6) + rng.uniform(-1e-7, 1e-7);
  for (auto& l : d.labels) l = static_cast<int>(rng.below(10));

  const std::string path = "datagen_roundtrip_test.csv";
  write_labeled_csv(path, d);
  auto back = read_labeled_csv(path);
  REQUIRE(back.x.rows == d.x.rows);
  REQUIRE(back.x.cols == d.x.cols);
  CHECK(back.x.data == d.x.data);
  CHECK(back.labels == d.labels);
  std::remove(path.c_str());
}

TEST_CASE("bad partition arguments are rejected") {
  std::vector<int> labels = {0, 1};
  Rng rng(1);
  CHECK_THROWS_AS((void)gamma_split(labels, 0, 0.5, rng), std::invalid_argument);
  CHECK_THROWS_AS((void)gamma_split(labels, 2, 1.5, rng), std::invalid_argument);
  CHECK_THROWS_AS((void)gamma_split(labels, 3, 0.5, rng), std::invalid_argument);
  CHECK_THROWS_AS((void)dirichlet_split(labels, 2, 0.0, rng), std::invalid_argument);
  CHECK_THROWS_AS((void)gaussian_ring(0, 5, 1.0, rng), std::invalid_argument);
  CHECK_THROWS_AS((void)read_labeled_csv("no_such_file_here.csv"), std::runtime_error);
}

TEST_SUITE_END();
