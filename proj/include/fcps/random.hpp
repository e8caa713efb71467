#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include <Eigen/Core>

namespace fcps {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Counter-based child seed: the result depends only on the parent seed and
/// the path of counters, never on the order in which streams are created.
inline std::uint64_t derive_seed(std::uint64_t parent, std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = mix64(parent);
  for (std::uint64_t c : path) s = mix64(s ^ mix64(c + 0x632be59bd9b4e019ULL));
  return s;
}

inline Rng make_rng(std::uint64_t parent, std::initializer_list<std::uint64_t> path) {
  return Rng(derive_seed(parent, path));
}

// Stream tags for derive_seed paths.
enum StreamTag : std::uint64_t {
  kEnvironmentStream = 1,
  kEpisodeStream = 2,
  kEvaluationStream = 3,
  kTerrainStream = 4,
  kNoiseStream = 5,
  kSelectionStream = 6,
  kHyperparamStream = 7,
  kRepresenterStream = 8,
};

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double standard_normal(Rng& rng) {
  return std::normal_distribution<double>(0.0, 1.0)(rng);
}

inline Eigen::VectorXd standard_normal_vector(Rng& rng, Eigen::Index n) {
  Eigen::VectorXd z(n);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (Eigen::Index i = 0; i < n; ++i) z(i) = dist(rng);
  return z;
}

}  // namespace fcps
