#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace canlearn {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; spreads nearby seeds over the whole state space.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Generator for sub-stream `stream` of `seed` (trial i of a solve uses seed ^ i).
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  return Rng(mix_seed(seed ^ stream));
}

/// Child seed for an indexed sub-task (instance, edge, ...).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) noexcept {
  return mix_seed(mix_seed(seed) + index);
}

inline Eigen::MatrixXd standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd out(rows, cols);
  // Row-major fill so the draw order does not depend on Eigen's storage order.
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) out(r, c) = normal(rng);
  return out;
}

inline int uniform_int(int lo, int hi, Rng& rng) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

}  // namespace canlearn
