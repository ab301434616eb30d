#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace gtp {

/// Seeded generator with platform-independent sampling. The standard
/// distributions are implementation-defined, so the conversions from raw
/// 64-bit output are written out here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Independent stream keyed by (seed, stream, counter), e.g. one per epoch
  /// or per batch, so results never depend on consumption order elsewhere.
  static Rng derive(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter = 0);

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller.
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace gtp
