#pragma once

#include "liseco/types.hpp"

#include <cstdint>
#include <random>

namespace liseco {

using Rng = std::mt19937_64;

/// Independent, reproducible stream for item `index` of a run seeded with `seed`.
inline Rng substream(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    0x5eedu};
  return Rng(seq);
}

inline Vector standard_normal(Eigen::Index n, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(rng);
  return v;
}

inline Matrix standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
  return m;
}

/// Uniform direction on the unit sphere.
inline Vector unit_vector(Eigen::Index n, Rng& rng) {
  Vector v;
  do {
    v = standard_normal(n, rng);
  } while (v.norm() == 0.0);
  return v / v.norm();
}

/// r x d matrix with orthonormal rows.
inline Matrix semi_orthogonal(Eigen::Index r, Eigen::Index d, Rng& rng) {
  const Matrix g = standard_normal(d, r, rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  const Matrix q = qr.householderQ() * Matrix::Identity(d, r);
  return q.transpose();
}

}  // namespace liseco
