#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace flearn {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

// Stable sub-stream derivation: the same (seed, tag) always yields the same
// stream, independent of call order. Used for per-tensor init and for the
// forget/learn stage split inside editor strategies.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  return splitmix64(seed ^ fnv1a64(tag));
}

// Thin wrapper over mt19937_64 (whose output sequence is pinned by the
// standard). std::uniform_*_distribution results vary across standard
// libraries, so uniforms and shuffles are derived from raw output directly.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next() { return gen_(); }

  // [0, 1)
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // (-scale, scale)
  float uniform_symmetric(double scale) {
    return static_cast<float>((2.0 * uniform() - 1.0) * scale);
  }

  // [0, n); n must be > 0
  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(next() % n);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[index(i)]);
    }
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace flearn
