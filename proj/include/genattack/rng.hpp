#ifndef GENATTACK_RNG_HPP
#define GENATTACK_RNG_HPP

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>

namespace genattack {

/// SplitMix64 finalizer; used to derive independent seeds from (seed, stream).
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return mix_seed(seed ^ stream);
}

/// mt19937_64 with the real-valued draws done by hand, since the standard
/// distributions are not reproducible across library implementations.
class Rng {
public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform on the open interval (0, 1).
  double uniform() { return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  bool bernoulli(double p) { return uniform() < p; }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) {
      throw std::invalid_argument("Rng::below: empty range");
    }
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  /// Index drawn according to non-negative weights summing to (about) one.
  std::size_t categorical(std::span<const double> probs) {
    const double u = uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      acc += probs[i];
      if (u < acc) {
        return i;
      }
    }
    // Rounding left u above the running sum; fall back to the last non-zero slot.
    for (std::size_t i = probs.size(); i-- > 0;) {
      if (probs[i] > 0.0) {
        return i;
      }
    }
    throw std::invalid_argument("Rng::categorical: all weights are zero");
  }

private:
  std::mt19937_64 engine_;
};

} // namespace genattack

#endif // GENATTACK_RNG_HPP
