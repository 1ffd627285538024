#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace hivae {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives a child seed from a parent seed and a key path. The result depends
// only on (seed, keys), so streams for (agent, episode) pairs can be created
// in any order or on any thread.
inline std::uint64_t derive_seed(std::uint64_t seed,
                                 std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = splitmix64(seed);
  for (std::uint64_t k : keys) h = splitmix64(h ^ splitmix64(k + 0x632be59bd9b4e019ULL));
  return h;
}

// Stream labels used with derive_seed.
namespace stream {
inline constexpr std::uint64_t kGraph = 1;
inline constexpr std::uint64_t kProfiles = 2;
inline constexpr std::uint64_t kEpisodes = 3;
inline constexpr std::uint64_t kDrift = 4;
inline constexpr std::uint64_t kDriftEpisodes = 5;
inline constexpr std::uint64_t kModelInit = 6;
inline constexpr std::uint64_t kTraining = 7;
}  // namespace stream

// A single pseudo-random stream. Not thread-safe; derive one per context.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : engine_(seed) {}

  static RngStream derive(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
    return RngStream(derive_seed(seed, keys));
  }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
  double gamma(double shape) { return std::gamma_distribution<double>(shape, 1.0)(engine_); }
  // Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }
  // Draws an index with probability proportional to weights.
  std::size_t categorical(const std::vector<double>& weights) {
    return std::discrete_distribution<std::size_t>(weights.begin(), weights.end())(engine_);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace hivae
