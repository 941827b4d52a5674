#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace essa {

/// Deterministic counter-style random stream (splitmix64 core).
///
/// The whole stream state is a single u64, which keeps checkpointed rng
/// state trivial to persist and bit-exact to restore. Every consumer of
/// randomness in the project (init, data order, augmentation, APLA
/// sampling) owns its own stream so advancing one never perturbs another.
class RngStream {
 public:
  RngStream() : state_(0x9e3779b97f4a7c15ULL) {}
  explicit RngStream(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();

  /// Uniform in [0, 1) with 53 mantissa bits.
  double uniform();

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi);

  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t uniform_index(std::uint64_t n);

  /// Standard normal via Box-Muller (stateless per draw: two uniforms in,
  /// one normal out, so the stream state alone reproduces the sequence).
  double normal();

  double normal(double mean, double sigma);

  /// Normal truncated to mean +/- 2 sigma, rejection sampled.
  double truncated_normal(double mean, double sigma);

  bool bernoulli(double p);

  /// Fisher-Yates shuffle of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n);

  std::uint64_t state() const { return state_; }
  void set_state(std::uint64_t s) { state_ = s; }

 private:
  std::uint64_t state_;
};

/// Stable 64-bit hash of a string (FNV-1a), used to derive per-purpose
/// seeds from a master seed and a tag so streams stay independent.
std::uint64_t stable_hash(std::string_view s);

/// Derive a child seed from (master, tag). Identical across runs.
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag);

/// Derive a child seed from (master, tag, index).
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag,
                          std::uint64_t index);

}  // namespace essa
