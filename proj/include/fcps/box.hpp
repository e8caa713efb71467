#pragma once

#include <algorithm>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "fcps/random.hpp"

namespace fcps {

/// Axis-aligned box [lower, upper] in R^d.
struct Box {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  Box() = default;
  Box(Eigen::VectorXd lo, Eigen::VectorXd hi) : lower(std::move(lo)), upper(std::move(hi)) {
    if (lower.size() != upper.size()) throw std::invalid_argument("Box: bound dimensions differ");
    for (Eigen::Index k = 0; k < lower.size(); ++k) {
      if (!(lower(k) <= upper(k))) throw std::invalid_argument("Box: lower bound exceeds upper bound");
    }
  }

  Eigen::Index dim() const { return lower.size(); }
  Eigen::VectorXd range() const { return upper - lower; }

  bool contains(const Eigen::Ref<const Eigen::VectorXd>& x, double tol = 0.0) const {
    if (x.size() != dim()) return false;
    for (Eigen::Index k = 0; k < dim(); ++k) {
      if (x(k) < lower(k) - tol || x(k) > upper(k) + tol) return false;
    }
    return true;
  }

  Eigen::VectorXd clamp(Eigen::VectorXd x) const {
    for (Eigen::Index k = 0; k < dim(); ++k) x(k) = std::clamp(x(k), lower(k), upper(k));
    return x;
  }

  Eigen::VectorXd sample(Rng& rng) const {
    Eigen::VectorXd x(dim());
    for (Eigen::Index k = 0; k < dim(); ++k) x(k) = lower(k) == upper(k) ? lower(k) : uniform(rng, lower(k), upper(k));
    return x;
  }

  /// Maps x into [0, 1]^d; degenerate axes map to 0.
  Eigen::VectorXd to_unit(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    Eigen::VectorXd u(dim());
    for (Eigen::Index k = 0; k < dim(); ++k) {
      const double r = upper(k) - lower(k);
      u(k) = r > 0.0 ? (x(k) - lower(k)) / r : 0.0;
    }
    return u;
  }

  /// Concatenation (this × other).
  Box product(const Box& other) const {
    Eigen::VectorXd lo(dim() + other.dim()), hi(dim() + other.dim());
    lo << lower, other.lower;
    hi << upper, other.upper;
    return Box(lo, hi);
  }
};

/// Latin-hypercube design of `count` points in `box`.
inline Eigen::MatrixXd latin_hypercube(const Box& box, int count, Rng& rng) {
  Eigen::MatrixXd pts(count, box.dim());
  std::vector<int> perm(static_cast<std::size_t>(count));
  for (Eigen::Index k = 0; k < box.dim(); ++k) {
    for (int i = 0; i < count; ++i) perm[static_cast<std::size_t>(i)] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    for (int i = 0; i < count; ++i) {
      const double u = (perm[static_cast<std::size_t>(i)] + uniform(rng, 0.0, 1.0)) / count;
      pts(i, k) = box.lower(k) + u * (box.upper(k) - box.lower(k));
    }
  }
  return pts;
}

}  // namespace fcps
