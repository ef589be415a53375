#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>
#include <vector>

namespace vip::rng {

// splitmix64 step.  Used both as the stream generator and as the key mixer so
// that derived streams are decorrelated from their parents.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t mix_key(std::uint64_t key, std::uint64_t tag) {
  std::uint64_t s = key ^ (0x6a09e667f3bcc909ULL + tag);
  std::uint64_t a = splitmix64(s);
  std::uint64_t b = splitmix64(s);
  return a ^ (b << 1);
}

inline std::uint64_t hash_tag(std::string_view tag) {
  // FNV-1a, enough to separate stream names.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Deterministic stream keyed by (seed, tags...).  All randomness in the
// pipeline flows through this so that results are reproducible bit for bit
// for a given root seed, independent of thread count or call interleaving:
// every consumer forks its own stream instead of sharing one.  Forks derive
// from the construction key, not the current position, so the number of
// draws taken from a parent never shifts a child stream.
class Rng {
 public:
  explicit Rng(std::uint64_t key) : key_(key), state_(key) {}

  Rng fork(std::uint64_t tag) const { return Rng(mix_key(key_, tag)); }
  Rng fork(std::string_view tag) const { return fork(hash_tag(tag)); }
  Rng fork(std::string_view tag, std::uint64_t n) const {
    return Rng(mix_key(mix_key(key_, hash_tag(tag)), n));
  }

  std::uint64_t next_u64() { return splitmix64(state_); }

  // [0, 1), 53-bit resolution.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  bool bernoulli(double p) { return uniform01() < p; }

  // Unbiased integer in [0, n) via Lemire's multiply-shift with rejection.
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == 0) return 0;
    while (true) {
      std::uint64_t x = next_u64();
      __uint128_t m = static_cast<__uint128_t>(x) * n;
      std::uint64_t lo = static_cast<std::uint64_t>(m);
      if (lo >= n || lo >= (-n) % n) return static_cast<std::uint64_t>(m >> 64);
    }
  }

  // Box-Muller; the spare is discarded to keep the stream position a pure
  // function of the call count.
  double normal() {
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mu, double sigma) { return mu + sigma * normal(); }

  double exponential(double rate) {
    double u = uniform01();
    while (u <= 0.0) u = uniform01();
    return -std::log(u) / rate;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Sample k distinct indices from [0, n), order not meaningful.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    if (k >= n) return idx;
    // Partial Fisher-Yates: first k slots end up uniformly sampled.
    for (std::size_t i = 0; i < k; ++i) {
      std::size_t j = i + static_cast<std::size_t>(uniform_int(n - i));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
  }

 private:
  std::uint64_t key_;
  std::uint64_t state_;
};

}  // namespace vip::rng

namespace vip {
using rng::hash_tag;
using rng::mix_key;
using rng::Rng;
using rng::splitmix64;
}  // namespace vip
