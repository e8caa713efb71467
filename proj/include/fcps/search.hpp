#pragma once

// Derivative-free bounded maximization helpers shared by the acquisition
// optimizer and the cannon oracle.

#include <algorithm>
#include <numeric>
#include <vector>

#include <Eigen/Core>

#include "fcps/box.hpp"

namespace fcps {

struct RefineSettings {
  int sweeps = 3;
  /// Step-halving trials per coordinate per sweep.
  int trials = 4;
  /// Step shrink factor applied after every sweep.
  double shrink = 0.5;
};

struct SearchResult {
  Eigen::VectorXd x;
  double value = 0.0;
};

/// Coordinate-wise pattern search inside `box` starting from (x, fx).
template <typename F>
SearchResult coordinate_refine(F&& f, Eigen::VectorXd x, double fx, const Box& box, Eigen::VectorXd steps,
                               const RefineSettings& cfg = {}) {
  for (int sweep = 0; sweep < cfg.sweeps; ++sweep) {
    for (Eigen::Index k = 0; k < x.size(); ++k) {
      double s = steps(k);
      if (!(s > 0.0)) continue;
      for (int t = 0; t < cfg.trials; ++t) {
        bool moved = false;
        for (double dir : {1.0, -1.0}) {
          Eigen::VectorXd y = x;
          y(k) = std::clamp(x(k) + dir * s, box.lower(k), box.upper(k));
          if (y(k) == x(k)) continue;
          const double fy = f(y);
          if (fy > fx) {
            x = std::move(y);
            fx = fy;
            moved = true;
            break;
          }
        }
        if (!moved) s *= 0.5;
      }
    }
    steps *= cfg.shrink;
  }
  return {std::move(x), fx};
}

/// Indices of the `count` largest values (ties broken by lower index).
inline std::vector<Eigen::Index> top_indices(const Eigen::VectorXd& values, Eigen::Index count) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(values.size()));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  count = std::min(count, values.size());
  std::partial_sort(idx.begin(), idx.begin() + count, idx.end(), [&](Eigen::Index a, Eigen::Index b) {
    return values(a) > values(b) || (values(a) == values(b) && a < b);
  });
  idx.resize(static_cast<std::size_t>(count));
  return idx;
}

}  // namespace fcps
