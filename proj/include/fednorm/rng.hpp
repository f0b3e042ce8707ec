#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace fednorm {

// One Philox4x32-10 block (Salmon et al. 2011, reference constants).
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

std::uint64_t splitmix64(std::uint64_t x);

// Counter-based generator. Identically seeded instances produce identical
// sequences on every platform; distribution sampling is implemented here
// rather than with std::<distribution> for the same reason. split() derives
// an independent child stream from (key, stream, tag) only, so it does not
// depend on how much the parent has been consumed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  Rng split(std::uint64_t tag) const;

  std::uint32_t next_u32();
  std::uint64_t next_u64();

  double uniform();  // [0, 1), 53-bit resolution
  double uniform(double lo, double hi);
  std::uint64_t below(std::uint64_t n);  // unbiased draw from [0, n)
  double normal();                       // Box-Muller
  double normal(double mean, double stddev);
  double gamma(double shape);  // Marsaglia-Tsang, shape > 0
  std::vector<double> dirichlet(const std::vector<double>& alpha);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::array<std::uint32_t, 2> key_;
  std::array<std::uint32_t, 4> ctr_;  // [0..1] 64-bit counter, [2..3] stream id
  std::array<std::uint32_t, 4> block_;
  unsigned pos_;

  void advance();
};

}  // namespace fednorm
