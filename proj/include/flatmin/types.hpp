#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <random>

namespace flatmin {

/// H x N first-layer weights of the committee machine, one hidden unit per row.
using WeightMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// P x N input patterns, one pattern per row.
using PatternMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Rng = std::mt19937_64;

/// SplitMix64 mixing of (base, stream) into an independent seed.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Patterns with their +-1 labels. Used both for full datasets and minibatches.
struct LabeledSet {
  PatternMatrix x;
  Eigen::VectorXd y;

  [[nodiscard]] Eigen::Index size() const { return x.rows(); }
  [[nodiscard]] Eigen::Index dim() const { return x.cols(); }
  [[nodiscard]] bool empty() const { return x.rows() == 0; }
};

}  // namespace flatmin
