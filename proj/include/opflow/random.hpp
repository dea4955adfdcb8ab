#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <utility>
#include <vector>

namespace opflow {

// Seeded generator with platform-independent derived distributions.
// std::mt19937_64 output is fixed by the standard; the <random>
// distributions are not, so uniform variates are built from raw bits.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed), seed_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // log-uniform on [lo, hi], lo > 0
  double log_uniform(double lo, double hi) {
    return std::exp(uniform(std::log(lo), std::log(hi)));
  }

  bool bernoulli(double p) { return p >= 1.0 || uniform() < p; }

  // Uniform integer in [0, bound) by rejection.
  std::uint64_t below(std::uint64_t bound) {
    const std::uint64_t limit = bound == 0 ? 0 : (~std::uint64_t{0} / bound) * bound;
    std::uint64_t r = engine_();
    while (r >= limit) r = engine_();
    return r % bound;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[static_cast<std::size_t>(below(i))]);
    }
  }

  // Derive an independent stream for sub-task `k`.
  Rng split(std::uint64_t k) const {
    std::seed_seq seq{static_cast<std::uint32_t>(seed_ & 0xffffffffu),
                      static_cast<std::uint32_t>(seed_ >> 32),
                      static_cast<std::uint32_t>(k & 0xffffffffu),
                      static_cast<std::uint32_t>(k >> 32)};
    std::uint32_t words[2];
    seq.generate(words, words + 2);
    return Rng((std::uint64_t{words[1]} << 32) | words[0]);
  }

 private:
  std::mt19937_64 engine_;
  std::uint64_t seed_;
};

}  // namespace opflow
