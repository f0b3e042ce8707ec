#include "fednorm/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace fednorm {

namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

inline void philox_round(std::array<std::uint32_t, 4>& x,
                         const std::array<std::uint32_t, 2>& k) {
  const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * x[0];
  const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * x[2];
  const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
  const auto lo0 = static_cast<std::uint32_t>(p0);
  const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
  const auto lo1 = static_cast<std::uint32_t>(p1);
  x = {hi1 ^ x[1] ^ k[0], lo1, hi0 ^ x[3] ^ k[1], lo0};
}

}  // namespace

std::uint64_t splitmix64(std::uint64_t x) {
  x += kGolden;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key) {
  for (int r = 0; r < 10; ++r) {
    if (r > 0) {
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    philox_round(counter, key);
  }
  return counter;
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream) : pos_(4) {
  const std::uint64_t k = splitmix64(seed);
  key_ = {static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
  ctr_ = {0, 0, static_cast<std::uint32_t>(stream),
          static_cast<std::uint32_t>(stream >> 32)};
  block_ = {0, 0, 0, 0};
}

Rng Rng::split(std::uint64_t tag) const {
  const std::uint64_t k =
      key_[0] | (static_cast<std::uint64_t>(key_[1]) << 32);
  const std::uint64_t s =
      ctr_[2] | (static_cast<std::uint64_t>(ctr_[3]) << 32);
  const std::uint64_t child = splitmix64(splitmix64(k ^ (tag + kGolden)) ^ s);
  return Rng(child);
}

void Rng::advance() {
  block_ = philox4x32(ctr_, key_);
  if (++ctr_[0] == 0) ++ctr_[1];
  pos_ = 0;
}

std::uint32_t Rng::next_u32() {
  if (pos_ >= 4) advance();
  return block_[pos_++];
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t lo = next_u32();
  const std::uint64_t hi = next_u32();
  return lo | (hi << 32);
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
  if (!(lo <= hi)) throw std::invalid_argument("Rng::uniform: lo > hi");
  return lo + (hi - lo) * uniform();
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
  const std::uint64_t threshold = (0 - n) % n;  // 2^64 mod n
  for (;;) {
    const std::uint64_t r = next_u64();
    if (r >= threshold) return r % n;
  }
}

double Rng::normal() {
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::normal(double mean, double stddev) {
  return mean + stddev * normal();
}

double Rng::gamma(double shape) {
  if (!(shape > 0.0)) {
    throw std::invalid_argument("Rng::gamma: shape must be positive");
  }
  if (shape < 1.0) {
    double u;
    do {
      u = uniform();
    } while (u <= 0.0);
    return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    const double x = normal();
    double v = 1.0 + c * x;
    if (v <= 0.0) continue;
    v = v * v * v;
    double u;
    do {
      u = uniform();
    } while (u <= 0.0);
    const double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
    if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
  }
}

std::vector<double> Rng::dirichlet(const std::vector<double>& alpha) {
  if (alpha.empty()) {
    throw std::invalid_argument("Rng::dirichlet: alpha must be non-empty");
  }
  for (double a : alpha) {
    if (!(a > 0.0)) {
      throw std::invalid_argument(
          "Rng::dirichlet: concentration parameters must be positive");
    }
  }
  std::vector<double> out(alpha.size());
  for (;;) {
    double total = 0.0;
    for (std::size_t i = 0; i < alpha.size(); ++i) {
      out[i] = gamma(alpha[i]);
      total += out[i];
    }
    if (total > 0.0) {
      for (double& v : out) v /= total;
      return out;
    }
    // all gammas underflowed to zero (tiny alphas); draw again
  }
}

}  // namespace fednorm
