#include "essa/rng.hpp"

#include <cmath>
#include <numbers>

#include "essa/errors.hpp"

namespace essa {

std::uint64_t RngStream::next_u64() {
  // splitmix64 (Steele, Lea, Flood 2014).
  std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) {
  return lo + (hi - lo) * uniform();
}

std::uint64_t RngStream::uniform_index(std::uint64_t n) {
  if (n == 0) throw ContractError("uniform_index: n must be > 0");
  // Rejection to avoid modulo bias.
  const std::uint64_t limit = n * (UINT64_MAX / n);
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

double RngStream::normal() {
  // Box-Muller, cosine branch only. u1 nudged away from 0.
  const double u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1 + 1e-300));
  return r * std::cos(2.0 * std::numbers::pi * u2);
}

double RngStream::normal(double mean, double sigma) {
  return mean + sigma * normal();
}

double RngStream::truncated_normal(double mean, double sigma) {
  double z;
  do {
    z = normal();
  } while (z < -2.0 || z > 2.0);
  return mean + sigma * z;
}

bool RngStream::bernoulli(double p) { return uniform() < p; }

std::vector<std::size_t> RngStream::permutation(std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(uniform_index(i));
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

std::uint64_t stable_hash(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t derive_seed(std::uint64_t master, std::string_view tag) {
  RngStream mix(master ^ stable_hash(tag));
  return mix.next_u64();
}

std::uint64_t derive_seed(std::uint64_t master, std::string_view tag,
                          std::uint64_t index) {
  RngStream mix(derive_seed(master, tag) + 0x9e3779b97f4a7c15ULL * (index + 1));
  return mix.next_u64();
}

}  // namespace essa
