#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "fednorm/netmodel.hpp"
#include "fednorm/rng.hpp"
#include "fednorm/statkernels.hpp"

using namespace fednorm;

namespace {

FeatureBatch random_batch(Rng& r, std::size_t rows, std::size_t cols,
                          double spread = 2.0) {
  FeatureBatch b(rows, cols);
  for (auto& v : b.data) v = r.normal(0.0, spread);
  return b;
}

std::vector<int> random_labels(Rng& r, std::size_t rows, std::size_t classes) {
  std::vector<int> y(rows);
  for (auto& v : y) v = static_cast<int>(r.below(classes));
  return y;
}

// central differences over every parameter against the analytic gradient
double max_grad_gap(Model& m, const FeatureBatch& x, const std::vector<int>& y,
                    NormSource source) {
  ForwardCache cache;
  (void)forward(m, x, source, &cache);
  const auto grad = backward(m, cache, y);
  const double h = 1e-4;
  double worst = 0.0;
  for (std::size_t j = 0; j < m.params.size(); ++j) {
    const double keep = m.params[j];
    m.params[j] = keep + h;
    const double up = nll_loss(forward(m, x, source).output, y);
    m.params[j] = keep - h;
    const double dn = nll_loss(forward(m, x, source).output, y);
    m.params[j] = keep;
    const double fd = (up - dn) / (2.0 * h);
    const double gap = std::abs(fd - grad[j]) /
                       std::max({std::abs(fd), std::abs(grad[j]), 1e-3});
    worst = std::max(worst, gap);
  }
  return worst;
}

}  // namespace

TEST_SUITE_BEGIN("netmodel");

TEST_CASE("toy architecture layout and parameter count") {
  const auto arch = toy_arch(2, 32, 10);
  REQUIRE(arch.size() == 5);
  CHECK(arch[0].kind == LayerKind::Dense);
  CHECK(arch[1].kind == LayerKind::Norm);
  CHECK(arch[2].kind == LayerKind::Relu);
  CHECK(arch[3].kind == LayerKind::Dense);
  CHECK(arch[4].kind == LayerKind::LogSoftmax);
  CHECK(param_count(arch) == 2 * 32 + 32 + 32 + 32 + 32 * 10 + 10);
  CHECK(norm_layer_count(arch) == 1);
}

TEST_CASE("initialization: bounded weights, zero biases, identity norm") {
  Rng r(3);
  const auto arch = toy_arch(2, 32, 10);
  const auto m = make_model(arch, r);
  const double l1 = std::sqrt(6.0 / (2 + 32));
  double spread = 0.0;
  for (std::size_t j = 0; j < 64; ++j) {
    CHECK(std::abs(m.params[j]) <= l1);
    spread = std::max(spread, std::abs(m.params[j]));
  }
  CHECK(spread > 0.1 * l1);
  for (std::size_t j = 64; j < 96; ++j) CHECK(m.params[j] == 0.0);      // b1
  for (std::size_t j = 96; j < 128; ++j) CHECK(m.params[j] == 1.0);     // scale
  for (std::size_t j = 128; j < 160; ++j) CHECK(m.params[j] == 0.0);    // shift
  REQUIRE(m.norm_stats.size() == 1);
  CHECK(m.norm_stats[0].mean == std::vector<double>(32, 0.0));
  CHECK(m.norm_stats[0].var == std::vector<double>(32, 1.0));
}

TEST_CASE("log-probabilities exponentiate to a distribution") {
  Rng r(5);
  auto m = make_model(toy_arch(2, 8, 5), r);
  const auto x = random_batch(r, 7, 2);
  const auto res = forward(m, x, NormSource::Batch);
  REQUIRE(res.output.rows == 7);
  REQUIRE(res.output.cols == 5);
  for (std::size_t row = 0; row < 7; ++row) {
    double total = 0.0;
    for (std::size_t c = 0; c < 5; ++c) total += std::exp(res.output.at(row, c));
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
  REQUIRE(res.norm_moments.size() == 1);
  CHECK(res.norm_moments[0].count == 7);
}

TEST_CASE("norm layer takes statistics from the requested source") {
  Rng r(7);
  auto m = make_model({{LayerKind::Norm, 3, 3}}, r);
  m.norm_stats[0].mean = {1.0, 2.0, 3.0};
  m.norm_stats[0].var = {4.0, 4.0, 4.0};
  m.norm_stats[0].eps = 0.0;
  FeatureBatch x(2, 3);
  x.data = {3.0, 4.0, 5.0, -1.0, 0.0, 1.0};

  const auto run = forward(m, x, NormSource::Running);
  CHECK(run.output.at(0, 0) == doctest::Approx(1.0));   // (3-1)/2
  CHECK(run.output.at(1, 2) == doctest::Approx(-1.0));  // (1-3)/2

  const auto bat = forward(m, x, NormSource::Batch);
  CHECK(bat.output.at(0, 0) == doctest::Approx(1.0));   // (3-1)/sd(3,-1)
  CHECK(bat.output.at(1, 0) == doctest::Approx(-1.0));

  // emitted moments are the batch moments either way
  CHECK(run.norm_moments[0].mean[0] == doctest::Approx(1.0));
  CHECK(run.norm_moments[0].var_biased[0] == doctest::Approx(4.0));
  CHECK(bat.norm_moments[0].mean == run.norm_moments[0].mean);
}

TEST_CASE("nll_loss of uniform predictions is log classes") {
  FeatureBatch lp(4, 8);
  for (auto& v : lp.data) v = -std::log(8.0);
  CHECK(nll_loss(lp, {0, 3, 5, 7}) == doctest::Approx(std::log(8.0)));
  CHECK_THROWS_AS((void)nll_loss(lp, {0, 1, 2}), std::invalid_argument);
  CHECK_THROWS_AS((void)nll_loss(lp, {0, 1, 2, 8}), std::invalid_argument);
}

TEST_CASE("gradients match finite differences per layer kind") {
  Rng r(11);

  SUBCASE("dense alone") {
    auto m = make_model({{LayerKind::Dense, 3, 4}}, r);
    const auto x = random_batch(r, 6, 3);
    const auto y = random_labels(r, 6, 4);
    CHECK(max_grad_gap(m, x, y, NormSource::Batch) < 1e-4);
  }

  SUBCASE("norm alone, batch statistics") {
    auto m = make_model({{LayerKind::Norm, 4, 4}}, r);
    for (std::size_t c = 0; c < 4; ++c) {
      m.params[c] = r.uniform(0.5, 1.5);
      m.params[4 + c] = r.uniform(-0.5, 0.5);
    }
    const auto x = random_batch(r, 6, 4);
    const auto y = random_labels(r, 6, 4);
    CHECK(max_grad_gap(m, x, y, NormSource::Batch) < 1e-4);
  }

  SUBCASE("norm alone, running statistics") {
    auto m = make_model({{LayerKind::Norm, 4, 4}}, r);
    for (std::size_t c = 0; c < 4; ++c) {
      m.params[c] = r.uniform(0.5, 1.5);
      m.norm_stats[0].mean[c] = r.normal(0.0, 1.0);
      m.norm_stats[0].var[c] = r.uniform(0.5, 3.0);
    }
    const auto x = random_batch(r, 6, 4);
    const auto y = random_labels(r, 6, 4);
    CHECK(max_grad_gap(m, x, y, NormSource::Running) < 1e-4);
  }

  SUBCASE("relu in the path") {
    auto m = make_model({{LayerKind::Dense, 3, 5}, {LayerKind::Relu, 5, 5}}, r);
    const auto x = random_batch(r, 6, 3);
    const auto y = random_labels(r, 6, 5);
    CHECK(max_grad_gap(m, x, y, NormSource::Batch) < 1e-4);
  }

  SUBCASE("log-softmax in the path") {
    auto m = make_model({{LayerKind::Dense, 3, 5}, {LayerKind::LogSoftmax, 5, 5}}, r);
    const auto x = random_batch(r, 6, 3);
    const auto y = random_labels(r, 6, 5);
    CHECK(max_grad_gap(m, x, y, NormSource::Batch) < 1e-4);
  }

  SUBCASE("full toy network, both statistic sources") {
    auto m = make_model(toy_arch(2, 6, 4), r);
    const auto x = random_batch(r, 8, 2);
    const auto y = random_labels(r, 8, 4);
    CHECK(max_grad_gap(m, x, y, NormSource::Batch) < 1e-4);
    auto m2 = make_model(toy_arch(2, 6, 4), r);
    for (std::size_t c = 0; c < 6; ++c) {
      m2.norm_stats[0].mean[c] = r.normal(0.0, 0.5);
      m2.norm_stats[0].var[c] = r.uniform(0.5, 2.0);
    }
    CHECK(max_grad_gap(m2, x, y, NormSource::Running) < 1e-4);
  }
}

TEST_CASE("backward rejects a stale cache") {
  Rng r(13);
  auto m = make_model(toy_arch(2, 4, 3), r);
  const auto x = random_batch(r, 5, 2);
  const auto y = random_labels(r, 5, 3);
  ForwardCache cache;
  (void)forward(m, x, NormSource::Batch, &cache);
  m.params[0] += 1.0;
  CHECK_THROWS_AS((void)backward(m, cache, y), std::invalid_argument);
}

TEST_CASE("sgd momentum folds history into the step") {
  Rng r(17);
  auto m = make_model({{LayerKind::Dense, 1, 1}}, r);
  const double w0 = m.params[0], b0 = m.params[1];
  SgdState opt;
  sgd_update(m, opt, {1.0, 0.0}, 0.1, 0.9);
  CHECK(m.params[0] == doctest::Approx(w0 - 0.1));
  sgd_update(m, opt, {1.0, 0.0}, 0.1, 0.9);
  CHECK(m.params[0] == doctest::Approx(w0 - 0.1 - 0.1 * 1.9));
  CHECK(m.params[1] == b0);
  CHECK_THROWS_AS(sgd_update(m, opt, {1.0}, 0.1, 0.9), std::invalid_argument);
}

TEST_CASE("learning-rate schedule steps at thirds") {
  CHECK(lr_at(1, 500) == 0.1);
  CHECK(lr_at(166, 500) == 0.1);
  CHECK(lr_at(167, 500) == 0.05);
  CHECK(lr_at(333, 500) == 0.05);
  CHECK(lr_at(334, 500) == 0.1 / 3.0);
  CHECK(lr_at(500, 500) == 0.1 / 3.0);
  CHECK(lr_at(100, 300) == 0.05);  // boundary lands on the next piece
  CHECK_THROWS_AS((void)lr_at(0, 10), std::invalid_argument);
}

TEST_CASE("prediction picks the argmax and accuracy counts hits") {
  Rng r(19);
  auto m = make_model({{LayerKind::Dense, 2, 3}}, r);
  m.params.assign(m.params.size(), 0.0);
  m.params[0] = 1.0;               // class 0 score = x0
  m.params[2 + 1] = 1.0;           // class 1 score = x1
  FeatureBatch x(3, 2);
  x.data = {5.0, 1.0, 1.0, 5.0, -1.0, -2.0};
  const auto p = predict(m, x);
  CHECK(p[0] == 0);
  CHECK(p[1] == 1);
  CHECK(p[2] == 2);  // scores (-1, -2, 0)
  CHECK(accuracy(m, x, {0, 1, 0}) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("checkpoint round-trips bit-exactly") {
  Rng r(23);
  auto m = make_model(toy_arch(2, 16, 10), r);
  for (auto& v : m.norm_stats[0].mean) v = r.normal(0.0, 3.0);
  for (auto& v : m.norm_stats[0].var) v = r.uniform(0.1, 5.0);

  const std::string path = "netmodel_ckpt_test.bin";
  save_checkpoint(path, m);
  const auto l = load_checkpoint(path);
  CHECK(l.params == m.params);
  REQUIRE(l.arch.size() == m.arch.size());
  for (std::size_t i = 0; i < m.arch.size(); ++i) {
    CHECK(l.arch[i].kind == m.arch[i].kind);
    CHECK(l.arch[i].in == m.arch[i].in);
    CHECK(l.arch[i].out == m.arch[i].out);
  }
  CHECK(l.norm_stats[0].mean == m.norm_stats[0].mean);
  CHECK(l.norm_stats[0].var == m.norm_stats[0].var);
  CHECK(l.norm_stats[0].momentum == m.norm_stats[0].momentum);
  CHECK(l.norm_stats[0].eps == m.norm_stats[0].eps);
  std::remove(path.c_str());
  CHECK_THROWS_AS((void)load_checkpoint(path), std::runtime_error);
}

TEST_SUITE_END();
