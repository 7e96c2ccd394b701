#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace srt {

/// Deterministic keyed random stream.
///
/// Each stream is identified by a 64-bit key; drawing walks a SplitMix64
/// sequence from that key. fork(name) / fork(index) derive independent
/// child streams from the key alone, so the set of streams a program uses
/// is a pure function of the root seed and the fork names, never of how
/// many numbers any stream has produced. The integer sequence is identical
/// on every platform; derived doubles additionally depend on IEEE-754
/// arithmetic and libm (log/cos for gaussians).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : key_(seed), state_(seed) {}

  Rng fork(std::string_view name) const;
  Rng fork(std::uint64_t index) const;

  std::uint64_t next_u64();

  /// Uniform in [0, 1).
  double uniform();
  /// Uniform in [lo, hi).
  double uniform(double lo, double hi);
  /// Standard normal via Box-Muller (two uniforms per draw).
  double normal();
  double normal(double mean, double stddev);
  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_;
  std::uint64_t state_;
};

/// FNV-1a over bytes; used to turn stream names into fork keys.
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace srt
