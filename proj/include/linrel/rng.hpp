#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "linrel/errors.hpp"

namespace linrel {

/// Deterministic random source. mt19937_64 is fully specified by the
/// standard; the distributions below are hand-rolled because the standard
/// library ones are implementation-defined, and reports must be
/// byte-reproducible across toolchains.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
  int uniform_int(int n) {
    if (n <= 0) throw ContractError("Rng::uniform_int: n must be positive");
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    std::uint64_t r = next_u64();
    while (r >= limit) r = next_u64();
    return static_cast<int>(r % un);
  }

  /// Uniform double in [0, 1) with 53 bits of entropy.
  double uniform_real() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller with a cached spare.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u = 1.0 - uniform_real(); // avoid log(0)
    double v = uniform_real();
    double radius = std::sqrt(-2.0 * std::log(u));
    double angle = 6.283185307179586476925286766559 * v;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const int j = uniform_int(static_cast<int>(i));
      std::swap(v[i - 1], v[static_cast<std::size_t>(j)]);
    }
  }

  /// k distinct indices drawn uniformly from [0, n), in draw order.
  std::vector<int> sample_indices(int n, int k) {
    if (k > n) throw ContractError("Rng::sample_indices: k > n");
    std::vector<int> pool(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
      const int j = uniform_int(n - i);
      out.push_back(pool[static_cast<std::size_t>(j)]);
      std::swap(pool[static_cast<std::size_t>(j)],
                pool[static_cast<std::size_t>(n - i - 1)]);
    }
    return out;
  }

  /// Independent stream derived from (seed state, label); used to give each
  /// sample/trial its own generator regardless of evaluation order.
  Rng fork(std::uint64_t label) {
    std::uint64_t x = next_u64() ^ (label + 0x9e3779b97f4a7c15ULL);
    // splitmix64 finalizer
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return Rng(x);
  }

private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Stable sub-seed for a named stage (and optional index), so adding a stage
/// never shifts the draws of another.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag,
                                 std::uint64_t extra = 0) {
  std::uint64_t h = 0xcbf29ce484222325ULL; // FNV-1a over the tag
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  std::uint64_t x = seed ^ (h + 0x9e3779b97f4a7c15ULL + (extra << 1));
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

} // namespace linrel
