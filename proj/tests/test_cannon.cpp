#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "fcps/cannon.hpp"

using namespace fcps;
using namespace fcps::cannon;

namespace {

double flat_range(double v, double alpha) { return v * v * std::sin(2.0 * alpha) / kGravity; }

const Environment kFlat = generate_environment(0, true);

}  // namespace

TEST(Environment, DeterministicGivenSeed) {
  const Environment a = generate_environment(42), b = generate_environment(42);
  ASSERT_EQ(a.terrain.hills.size(), b.terrain.hills.size());
  for (std::size_t i = 0; i < a.terrain.hills.size(); ++i) {
    EXPECT_EQ(a.terrain.hills[i].cx, b.terrain.hills[i].cx);
    EXPECT_EQ(a.terrain.hills[i].radius, b.terrain.hills[i].radius);
  }
}

TEST(Environment, CannonSitsAtGroundLevel) {
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const Environment env = generate_environment(seed);
    ASSERT_GE(env.terrain.hills.size(), 1u);
    ASSERT_LE(env.terrain.hills.size(), 4u);
    ASSERT_LT(env.terrain.height(0.0, 0.0), 0.05) << "seed " << seed;
    for (const Hill& h : env.terrain.hills) {
      EXPECT_GE(std::hypot(h.cx, h.cy), 3.0);
      EXPECT_LE(std::abs(h.cx), kArenaHalfWidth);
      EXPECT_GE(h.height, 0.5);
      EXPECT_LE(h.height, 3.0);
      EXPECT_GE(h.radius, 1.5);
      EXPECT_LE(h.radius, 4.0);
    }
    Rng rng(seed);
    EXPECT_GE(env.terrain.height(uniform(rng, -11, 11), uniform(rng, -11, 11)), 0.0);
  }
}

TEST(Environment, FlatOverride) {
  EXPECT_TRUE(kFlat.terrain.hills.empty());
  EXPECT_EQ(kFlat.terrain.height(3.0, -7.0), 0.0);
}

TEST(Environment, JsonRoundTrip) {
  const Environment env = generate_environment(7);
  const Environment back = environment_from_json(nlohmann::json::parse(to_json(env).dump()));
  EXPECT_EQ(back.seed, env.seed);
  ASSERT_EQ(back.terrain.hills.size(), env.terrain.hills.size());
  for (std::size_t i = 0; i < env.terrain.hills.size(); ++i) {
    EXPECT_EQ(back.terrain.hills[i].cx, env.terrain.hills[i].cx);
    EXPECT_EQ(back.terrain.hills[i].cy, env.terrain.hills[i].cy);
    EXPECT_EQ(back.terrain.hills[i].height, env.terrain.hills[i].height);
    EXPECT_EQ(back.terrain.hills[i].radius, env.terrain.hills[i].radius);
  }
}

TEST(SimulateShot, FlatRangeClosedForm) {
  const ImpactPoint far = simulate_shot(kFlat, {0.0, 0.7853982, 5.0});
  EXPECT_NEAR(far.x, 2.5484, 1e-3);
  EXPECT_NEAR(far.y, 0.0, 1e-9);
  const ImpactPoint near = simulate_shot(kFlat, {0.0, 0.7853982, 0.1});
  EXPECT_NEAR(near.x, 0.0010194, 1e-5);
}

TEST(SimulateShot, FlatRangeMatchesFormulaOnGrid) {
  for (int i = 0; i < 8; ++i) {
    for (int j = 0; j < 8; ++j) {
      const double alpha = 0.01 + (std::numbers::pi / 4 - 0.01) * i / 7.0;
      const double v = 0.1 + 4.9 * j / 7.0;
      const ImpactPoint p = simulate_shot(kFlat, {1.0, alpha, v});
      EXPECT_NEAR(std::hypot(p.x, p.y), flat_range(v, alpha), 1e-3);
    }
  }
}

TEST(SimulateShot, RangeIncreasesWithVelocity) {
  for (double alpha : {0.05, 0.4, std::numbers::pi / 4}) {
    double prev = 0.0;
    for (double v = 0.1; v <= 5.0; v += 0.1) {
      const ImpactPoint p = simulate_shot(kFlat, {0.0, alpha, v});
      EXPECT_GT(p.x, prev);
      prev = p.x;
    }
  }
}

TEST(SimulateShot, RotationalEquivariance) {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    const double phi = uniform(rng, 0.0, 3.0), delta = uniform(rng, 0.0, 3.0);
    const LaunchParams a{phi, uniform(rng, 0.01, 1.37), uniform(rng, 0.1, 5.0)};
    LaunchParams b = a;
    b.orientation += delta;
    const ImpactPoint pa = simulate_shot(kFlat, a), pb = simulate_shot(kFlat, b);
    EXPECT_NEAR(pb.x, pa.x * std::cos(delta) - pa.y * std::sin(delta), 1e-6);
    EXPECT_NEAR(pb.y, pa.x * std::sin(delta) + pa.y * std::cos(delta), 1e-6);
  }
}

TEST(SimulateShot, ImpactLiesOnTerrain) {
  Rng rng(4);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Environment env = generate_environment(seed);
    for (int t = 0; t < 50; ++t) {
      const LaunchParams p{uniform(rng, 0.0, 6.28), uniform(rng, 0.01, 1.37), uniform(rng, 0.1, 5.0)};
      const ImpactPoint hit = simulate_shot(env, p);
      EXPECT_LT(std::abs(hit.z - env.terrain.height(hit.x, hit.y)), 1e-3);
      EXPECT_LE(std::hypot(hit.x, hit.y), 5.0 * 5.0 / kGravity + 1e-6);
    }
  }
}

TEST(SimulateShot, HillShortensShot) {
  Environment env;
  env.terrain.hills.push_back({2.0, 0.0, 1.0, 0.5});
  const ImpactPoint hit = simulate_shot(env, {0.0, 0.3, 5.0});
  EXPECT_LT(hit.x, flat_range(5.0, 0.3) - 0.1);
  EXPECT_GT(hit.z, 0.01);
}

TEST(SimulateShot, NoiseIsSeeded) {
  const Environment env = generate_environment(5);
  const LaunchParams p{1.0, 0.6, 4.0};
  Rng a(9), b(9);
  const ImpactPoint ha = simulate_shot(env, p, kTrainingNoise, a);
  const ImpactPoint hb = simulate_shot(env, p, kTrainingNoise, b);
  EXPECT_EQ(ha.x, hb.x);
  EXPECT_EQ(ha.y, hb.y);
  Rng c(10);
  const ImpactPoint hc = simulate_shot(env, p, kTrainingNoise, c);
  EXPECT_NE(ha.x, hc.x);
  Rng d(11), e(12);
  EXPECT_EQ(simulate_shot(env, p, 0.0, d).x, simulate_shot(env, p, 0.0, e).x);
}

TEST(SimulateShot, RejectsOutOfBounds) {
  Rng rng(1);
  EXPECT_THROW(simulate_shot(kFlat, {0.0, 1.5, 1.0}, 0.0, rng), std::invalid_argument);
  EXPECT_THROW(simulate_shot(kFlat, {0.0, 0.5, 6.0}, 0.0, rng), std::invalid_argument);
  EXPECT_THROW(simulate_shot(kFlat, {0.0, 0.5, 1.0}, -1.0, rng), std::invalid_argument);
}

TEST(Reward, OnTargetLeavesPenalties) {
  const LaunchParams p{0.0, 0.5, 1.0};
  EXPECT_NEAR(reward(Eigen::Vector2d(1.0, 2.0), {1.0, 2.0, 0.3}, p), -0.0225, 1e-15);
}

TEST(Reward, TenMetreMiss) {
  const LaunchParams p{0.0, 0.01, 0.1};
  EXPECT_NEAR(reward(Eigen::Vector2d(10.0, 0.0), {0.0, 0.0, 0.0}, p), -100.0, 1e-3);
}

TEST(Reward, RotationInvariantAndNonPositive) {
  Rng rng(6);
  for (int t = 0; t < 100; ++t) {
    const Eigen::Vector2d target(uniform(rng, -11, 11), uniform(rng, -11, 11));
    const ImpactPoint hit{uniform(rng, -3, 3), uniform(rng, -3, 3), uniform(rng, 0, 1)};
    const LaunchParams p{0.0, uniform(rng, 0.01, 1.37), uniform(rng, 0.1, 5.0)};
    const double r = reward(target, hit, p);
    EXPECT_LE(r, 0.0);
    const double c = std::cos(0.7), s = std::sin(0.7);
    const Eigen::Vector2d rt(c * target(0) - s * target(1), s * target(0) + c * target(1));
    const ImpactPoint rh{c * hit.x - s * hit.y, s * hit.x + c * hit.y, hit.z};
    EXPECT_NEAR(reward(rt, rh, p), r, 1e-9);
  }
}

TEST(Oracle, HitsReachableTargetsOnFlatTerrain) {
  const OracleSolver solver(kFlat);
  for (const Eigen::Vector2d& target : {Eigen::Vector2d(1.5, 1.0), Eigen::Vector2d(-2.0, 0.3),
                                       Eigen::Vector2d(0.5, 0.0), Eigen::Vector2d(0.2, -2.4)}) {
    const auto sol = solver.solve(target);
    const ImpactPoint hit = simulate_shot(kFlat, sol.params);
    const double miss = std::pow(hit.x - target(0), 2) + std::pow(hit.y - target(1), 2);
    EXPECT_LT(miss, 1e-2);
    EXPECT_NEAR(sol.reward, reward(target, hit, sol.params), 1e-12);
  }
}

TEST(Oracle, ShortTargetPrefersLowSpeed) {
  const OracleSolver solver(kFlat);
  const auto sol = solver.solve(Eigen::Vector2d(0.5, 0.0));
  EXPECT_LT(sol.params.velocity, 3.0);
  // Reaching the same point at full speed needs a steeper lob, which costs more.
  EXPECT_GT(sol.reward, -0.01 * 25.0);
}

TEST(Oracle, RotatedTargetSameOptimumOnFlatTerrain) {
  const OracleSolver solver(kFlat);
  const double a = solver.optimal_reward(Eigen::Vector2d(6.0, 2.0));
  const double c = std::cos(1.1), s = std::sin(1.1);
  const double b = solver.optimal_reward(Eigen::Vector2d(c * 6.0 - s * 2.0, s * 6.0 + c * 2.0));
  EXPECT_NEAR(a, b, 1e-3);
}
