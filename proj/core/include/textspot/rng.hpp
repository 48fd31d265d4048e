#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace textspot {

/// Seedable deterministic random stream. Every stochastic choice in the
/// project draws from one of these; child streams are derived by name so
/// that independent subsystems cannot perturb each other's sequences.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), gen_(seed) {}

  uint64_t seed() const { return seed_; }

  uint64_t next_u64() { return gen_(); }

  /// Uniform double in [0, 1). 53-bit resolution, identical on every
  /// platform (mt19937_64 is fully specified by the standard).
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi], both inclusive.
  int uniform_int(int lo, int hi) {
    const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(gen_() % span);
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller. Uses two draws per call; no cached
  /// spare so the stream position is a pure function of the call count.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  /// Child stream derived from this stream's seed and a label. Forking is
  /// order-independent: the parent state does not advance.
  Rng fork(std::string_view name, uint64_t index = 0) const {
    uint64_t h = 0xcbf29ce484222325ull ^ seed_;
    for (char c : name) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ull;
    }
    h ^= index + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    // splitmix64 finalizer, keeps nearby labels well separated
    h += 0x9e3779b97f4a7c15ull;
    h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
    h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
    h = h ^ (h >> 31);
    return Rng(h);
  }

 private:
  uint64_t seed_;
  std::mt19937_64 gen_;
};

}  // namespace textspot
