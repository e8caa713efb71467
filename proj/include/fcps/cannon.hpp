#pragma once

// Toy cannon benchmark: a point projectile launched from the origin over
// hilly terrain, scored by a quadratic distance-to-target reward.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "fcps/box.hpp"
#include "fcps/cps.hpp"
#include "fcps/random.hpp"
#include "fcps/search.hpp"
#include "json.hpp"

namespace fcps::cannon {

inline constexpr double kGravity = 9.81;
inline constexpr double kTimeStep = 1e-3;
inline constexpr double kTimeTolerance = 1e-6;
inline constexpr double kMaxFlightTime = 60.0;
/// Angular launch noise used during training (1 degree).
inline constexpr double kTrainingNoise = std::numbers::pi / 180.0;
inline constexpr double kArenaHalfWidth = 11.0;

struct LaunchParams {
  double orientation = 0.0;     // radians, [0, 6.28]
  double vertical_angle = 0.0;  // radians, [0.01, 1.37]
  double velocity = 0.0;        // m/s, [0.1, 5]

  static Box bounds() { return Box(Eigen::Vector3d(0.0, 0.01, 0.1), Eigen::Vector3d(6.28, 1.37, 5.0)); }

  static LaunchParams from_vector(const Eigen::Ref<const Eigen::VectorXd>& v) {
    if (v.size() != 3) throw std::invalid_argument("LaunchParams: expected 3 parameters");
    return {v(0), v(1), v(2)};
  }
  Eigen::VectorXd to_vector() const { return Eigen::Vector3d(orientation, vertical_angle, velocity); }
  bool within_bounds() const { return bounds().contains(to_vector()); }
};

struct Hill {
  double cx = 0.0, cy = 0.0, height = 0.0, radius = 1.0;

  double height_at(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    return height * std::exp(-(dx * dx + dy * dy) / (2.0 * radius * radius));
  }
};

struct Terrain {
  std::vector<Hill> hills;

  double height(double x, double y) const {
    double h = 0.0;
    for (const Hill& hill : hills) h += hill.height_at(x, y);
    return h;
  }

  /// Upper bound on height(x, y) over the disk of radius r around the origin.
  double max_height_within(double r) const {
    double h = 0.0;
    for (const Hill& hill : hills) {
      const double gap = std::max(0.0, std::hypot(hill.cx, hill.cy) - r);
      h += hill.height * std::exp(-gap * gap / (2.0 * hill.radius * hill.radius));
    }
    return h;
  }
};

struct Environment {
  std::uint64_t seed = 0;
  Terrain terrain;
};

struct ImpactPoint {
  double x = 0.0, y = 0.0, z = 0.0;
};

/// Per-hill cap on the height contributed at the origin; four hills stay below 0.05 m.
inline constexpr double kOriginHeightCap = 0.05 / 4.0;

/// 1-4 Gaussian hills, centers in the arena, none near the cannon.
inline Environment generate_environment(std::uint64_t seed, bool flat = false) {
  Environment env{seed, {}};
  if (flat) return env;
  Rng rng = make_rng(seed, {kTerrainStream});
  const int count = std::uniform_int_distribution<int>(1, 4)(rng);
  for (int i = 0; i < count; ++i) {
    Hill h;
    do {
      h.cx = uniform(rng, -kArenaHalfWidth, kArenaHalfWidth);
      h.cy = uniform(rng, -kArenaHalfWidth, kArenaHalfWidth);
      h.height = uniform(rng, 0.5, 3.0);
      h.radius = uniform(rng, 1.5, 4.0);
    } while (std::hypot(h.cx, h.cy) < 3.0 || h.height_at(0.0, 0.0) >= kOriginHeightCap);
    env.terrain.hills.push_back(h);
  }
  return env;
}

/// Ballistic flight from the origin (at ground level) until the projectile meets the terrain.
/// noise_sigma perturbs the vertical angle (clamped to its bounds).
inline ImpactPoint simulate_shot(const Terrain& terrain, const LaunchParams& params, double noise_sigma, Rng& rng) {
  if (!params.within_bounds()) throw std::invalid_argument("simulate_shot: launch parameters out of bounds");
  if (noise_sigma < 0.0) throw std::invalid_argument("simulate_shot: negative noise");
  const Box box = LaunchParams::bounds();
  double alpha = params.vertical_angle;
  if (noise_sigma > 0.0) alpha = std::clamp(alpha + noise_sigma * standard_normal(rng), box.lower(1), box.upper(1));

  const double vh = params.velocity * std::cos(alpha);
  const double vx = vh * std::cos(params.orientation);
  const double vy = vh * std::sin(params.orientation);
  const double vz = params.velocity * std::sin(alpha);
  // The projectile cannot travel further than the flat range before dropping
  // below ground level, so only this part of the terrain matters.
  const double reach = params.velocity * params.velocity / kGravity + 1e-9;
  const double ceiling = terrain.max_height_within(reach);
  // The cannon stands on the terrain surface at the origin.
  const double z0 = terrain.height(0.0, 0.0);

  auto z_at = [&](double t) { return z0 + vz * t - 0.5 * kGravity * t * t; };
  auto below = [&](double t) {
    const double z = z_at(t);
    if (z > ceiling) return false;
    return z <= terrain.height(vx * t, vy * t);
  };

  double lo = 0.0, hi = 0.0;
  const auto max_steps = static_cast<long>(kMaxFlightTime / kTimeStep);
  bool found = false;
  for (long k = 1; k <= max_steps; ++k) {
    const double t = static_cast<double>(k) * kTimeStep;
    if (below(t)) {
      lo = static_cast<double>(k - 1) * kTimeStep;
      hi = t;
      found = true;
      break;
    }
  }
  if (!found) throw std::logic_error("simulate_shot: no impact within the flight-time limit");
  while (hi - lo >= kTimeTolerance) {
    const double mid = 0.5 * (lo + hi);
    (below(mid) ? hi : lo) = mid;
  }
  return {vx * hi, vy * hi, z_at(hi)};
}

inline ImpactPoint simulate_shot(const Environment& env, const LaunchParams& params, double noise_sigma, Rng& rng) {
  return simulate_shot(env.terrain, params, noise_sigma, rng);
}

inline ImpactPoint simulate_shot(const Environment& env, const LaunchParams& params) {
  Rng unused(0);
  return simulate_shot(env.terrain, params, 0.0, unused);
}

struct RewardWeights {
  double distance = 1.0;
  double velocity = 0.01;
  double angle = 0.05;
};

/// Negative squared ground-plane miss distance minus speed and elevation penalties.
inline double reward(const Eigen::Ref<const Eigen::Vector2d>& target, const ImpactPoint& impact,
                     const LaunchParams& params, const RewardWeights& w = {}) {
  const double dx = impact.x - target(0), dy = impact.y - target(1);
  return -w.distance * (dx * dx + dy * dy) - w.velocity * params.velocity * params.velocity -
         w.angle * params.vertical_angle * params.vertical_angle;
}

/// Ground-plane target region [-11, 11]^2.
inline Box target_bounds() {
  return Box(Eigen::Vector2d(-kArenaHalfWidth, -kArenaHalfWidth), Eigen::Vector2d(kArenaHalfWidth, kArenaHalfWidth));
}

inline cps::Outcome to_outcome(const ImpactPoint& p) { return {p.x, p.y, p.z}; }

/// Re-scores a stored shot for any target from its impact point and commanded parameters.
inline cps::RewardFn reward_interface(RewardWeights w = {}) {
  return [w](const Eigen::VectorXd& target, const cps::EpisodeRecord& rec) {
    return reward(target.head<2>(), ImpactPoint{rec.outcome.impact_x, rec.outcome.impact_y, rec.outcome.impact_z},
                  LaunchParams::from_vector(rec.theta), w);
  };
}

/// Empty dataset carrying the cannon task's bounds (no environment-type context).
inline cps::ExperienceDataset empty_dataset() {
  cps::ExperienceDataset d;
  d.theta_bounds = LaunchParams::bounds();
  d.target_bounds = target_bounds();
  return d;
}

/// Brute-force noise-free optimum for arbitrary targets in one environment.
/// The coarse grid of shots is simulated once and shared across targets.
class OracleSolver {
 public:
  static constexpr int kOrientationSteps = 64;
  static constexpr int kAngleSteps = 32;
  static constexpr int kVelocitySteps = 32;
  static constexpr int kRefineStarts = 10;

  explicit OracleSolver(Environment env, RewardWeights weights = {}) : env_(std::move(env)), weights_(weights) {
    const Box box = LaunchParams::bounds();
    const std::array<int, 3> steps{kOrientationSteps, kAngleSteps, kVelocitySteps};
    for (int k = 0; k < 3; ++k) spacing_(k) = box.range()(k) / (steps[static_cast<std::size_t>(k)] - 1);
    const int total = kOrientationSteps * kAngleSteps * kVelocitySteps;
    params_.reserve(static_cast<std::size_t>(total));
    impacts_.reserve(static_cast<std::size_t>(total));
    for (int i = 0; i < kOrientationSteps; ++i) {
      for (int j = 0; j < kAngleSteps; ++j) {
        for (int k = 0; k < kVelocitySteps; ++k) {
          const LaunchParams p = LaunchParams::from_vector(box.clamp(Eigen::Vector3d(
              box.lower(0) + i * spacing_(0), box.lower(1) + j * spacing_(1), box.lower(2) + k * spacing_(2))));
          params_.push_back(p);
          impacts_.push_back(simulate_shot(env_, p));
        }
      }
    }
  }

  const Environment& environment() const { return env_; }

  struct Solution {
    LaunchParams params;
    double reward = 0.0;
  };

  Solution solve(const Eigen::Vector2d& target) const {
    Eigen::VectorXd grid_rewards(static_cast<Eigen::Index>(params_.size()));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      grid_rewards(static_cast<Eigen::Index>(i)) = reward(target, impacts_[i], params_[i], weights_);
    }
    const Box box = LaunchParams::bounds();
    auto objective = [&](const Eigen::VectorXd& x) {
      const LaunchParams p = LaunchParams::from_vector(x);
      return reward(target, simulate_shot(env_, p), p, weights_);
    };
    const RefineSettings cfg{3, 6, 0.25};
    Solution best{params_[0], -std::numeric_limits<double>::infinity()};
    for (Eigen::Index i : top_indices(grid_rewards, kRefineStarts)) {
      const SearchResult r = coordinate_refine(objective, params_[static_cast<std::size_t>(i)].to_vector(),
                                               grid_rewards(i), box, spacing_, cfg);
      if (r.value > best.reward) best = {LaunchParams::from_vector(r.x), r.value};
    }
    return best;
  }

  double optimal_reward(const Eigen::Vector2d& target) const { return solve(target).reward; }

 private:
  Environment env_;
  RewardWeights weights_;
  Eigen::Vector3d spacing_;
  std::vector<LaunchParams> params_;
  std::vector<ImpactPoint> impacts_;
};

inline double optimal_reward(const Environment& env, const Eigen::Vector2d& target) {
  return OracleSolver(env).optimal_reward(target);
}

inline nlohmann::json to_json(const Environment& env) {
  nlohmann::json hills = nlohmann::json::array();
  for (const Hill& h : env.terrain.hills) {
    hills.push_back({{"cx", h.cx}, {"cy", h.cy}, {"height", h.height}, {"radius", h.radius}});
  }
  return {{"seed", env.seed}, {"hills", hills}};
}

inline Environment environment_from_json(const nlohmann::json& j) {
  Environment env;
  env.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& h : j.at("hills")) {
    env.terrain.hills.push_back(
        {h.at("cx").get<double>(), h.at("cy").get<double>(), h.at("height").get<double>(), h.at("radius").get<double>()});
  }
  return env;
}

}  // namespace fcps::cannon
