#include <gtest/gtest.h>

#include <cmath>

#include "fcps/cannon.hpp"
#include "fcps/entropy_search.hpp"

using namespace fcps;
using namespace fcps::es;

namespace {

double total_variation(const VectorXd& a, const VectorXd& b) { return 0.5 * (a - b).cwiseAbs().sum(); }

gp::GPModel random_model(Rng& rng, Eigen::Index n, Eigen::Index d, double noise) {
  MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index k = 0; k < d; ++k) x(i, k) = uniform(rng, 0.0, 1.0);
  VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) y(i) = std::sin(4.0 * x(i, 0)) + 0.3 * standard_normal(rng);
  return gp::GPModel::fit(x, y, gp::Hyperparams::isotropic(d, 0.3, 1.0, noise));
}

MatrixXd uniform_reps(Rng& rng, Eigen::Index m, Eigen::Index p) {
  MatrixXd r(m, p);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index k = 0; k < p; ++k) r(i, k) = uniform(rng, 0.0, 1.0);
  return r;
}

}  // namespace

TEST(ArgmaxFrequencies, TiesSplitEqually) {
  MatrixXd s(3, 2);
  s << 1.0, 0.0,
       1.0, 2.0,
       0.0, 2.0;
  const OptimalityDistribution p = argmax_frequencies(s);
  EXPECT_DOUBLE_EQ(p.probs(0), 0.25);
  EXPECT_DOUBLE_EQ(p.probs(1), 0.5);
  EXPECT_DOUBLE_EQ(p.probs(2), 0.25);
}

TEST(EstimatePOpt, NormalizedAndNonNegative) {
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    const gp::GPModel m = random_model(rng, 8, 3, 0.01);
    const OptimalityDistribution p = estimate_p_opt(m, VectorXd::Constant(1, 0.4), uniform_reps(rng, 12, 2), 300, rng);
    EXPECT_NEAR(p.probs.sum(), 1.0, 1e-9);
    EXPECT_GE(p.probs.minCoeff(), 0.0);
  }
}

TEST(EstimatePOpt, SymmetricPriorIsUniform) {
  const gp::GPModel prior = gp::GPModel::fit(MatrixXd(0, 1), VectorXd(0), gp::Hyperparams::isotropic(1, 0.3, 1.0, 0.0));
  MatrixXd reps(2, 1);
  reps << 0.2, 0.8;
  Rng rng(2);
  const OptimalityDistribution p = estimate_p_opt(prior, VectorXd(0), reps, 10000, rng);
  EXPECT_NEAR(p.probs(0), 0.5, 0.02);
  EXPECT_NEAR(p.probs(1), 0.5, 0.02);
}

TEST(EstimatePOpt, DominantTrainingPointWins) {
  MatrixXd x(1, 1);
  x << 0.5;
  // Value 10 is ten prior standard deviations above the mean of every far representer.
  const gp::GPModel m = gp::GPModel::fit(x, VectorXd::Constant(1, 10.0), gp::Hyperparams::isotropic(1, 0.05, 1.0, 0.0));
  MatrixXd reps(5, 1);
  reps << 0.5, 0.0, 0.1, 0.9, 1.0;
  Rng rng(3);
  const OptimalityDistribution p = estimate_p_opt(m, VectorXd(0), reps, 5000, rng);
  EXPECT_GE(p.probs(0), 0.99);
}

TEST(EstimatePOpt, IndependentSeedsAgree) {
  Rng data(4);
  const gp::GPModel m = random_model(data, 10, 2, 0.05);
  const MatrixXd reps = uniform_reps(data, 10, 1);
  Rng a(100), b(200);
  const OptimalityDistribution pa = estimate_p_opt(m, VectorXd::Constant(1, 0.5), reps, 100000, a);
  const OptimalityDistribution pb = estimate_p_opt(m, VectorXd::Constant(1, 0.5), reps, 100000, b);
  EXPECT_LT(total_variation(pa.probs, pb.probs), 0.02);
}

TEST(EstimatePOpt, SingleRepresenterIsCertain) {
  Rng rng(5);
  const gp::GPModel m = random_model(rng, 5, 2, 0.01);
  const OptimalityDistribution p = estimate_p_opt(m, VectorXd::Constant(1, 0.1), uniform_reps(rng, 1, 1), 10, rng);
  EXPECT_EQ(p.probs(0), 1.0);
  EXPECT_THROW(estimate_p_opt(m, VectorXd::Constant(1, 0.1), uniform_reps(rng, 3, 1), 0, rng), std::invalid_argument);
}

TEST(RelativeEntropyLoss, ClosedForms) {
  EXPECT_NEAR(relative_entropy_loss({VectorXd::Constant(5, 0.2)}), 0.0, 1e-15);
  EXPECT_NEAR(relative_entropy_loss({Eigen::Vector4d(0, 1, 0, 0)}), -1.3862944, 1e-7);
}

TEST(RelativeEntropyLoss, Bounded) {
  Rng rng(6);
  for (int t = 0; t < 200; ++t) {
    const Eigen::Index m = 2 + t % 20;
    VectorXd p = uniform_reps(rng, m, 1).col(0);
    for (Eigen::Index j = 0; j < m; ++j) {
      if (uniform(rng, 0, 1) < 0.3) p(j) = 0.0;
    }
    if (p.sum() == 0.0) p(0) = 1.0;
    p /= p.sum();
    const double l = relative_entropy_loss({p});
    EXPECT_LE(l, 0.0);
    EXPECT_GE(l, -std::log(static_cast<double>(m)) - 1e-12);
  }
}

TEST(SimulateQuery, RedundantObservationChangesNothing) {
  Rng rng(7);
  const gp::GPModel m = random_model(rng, 6, 2, 0.0);
  const VectorXd q = m.inputs().row(2).transpose();
  const gp::GPModel f = simulate_query(m, q, rng);
  EXPECT_EQ(f.size(), m.size() + 1);
  for (int t = 0; t < 20; ++t) {
    const VectorXd x = uniform_reps(rng, 1, 2).row(0).transpose();
    EXPECT_NEAR(f.predict(x).mean, m.predict(x).mean, 1e-6);
    EXPECT_NEAR(f.predict(x).stddev, m.predict(x).stddev, 1e-6);
  }
}

TEST(SimulateQuery, ReducesVarianceAtQueryAndLeavesInputIntact) {
  Rng rng(8);
  const gp::GPModel m = random_model(rng, 6, 2, 0.05);
  const Eigen::Vector2d q(0.31, 0.77);
  const gp::Prediction before = m.predict(q);
  const gp::GPModel f = simulate_query(m, q, rng);
  EXPECT_LT(f.predict(q).stddev, before.stddev);
  EXPECT_EQ(m.predict(q).mean, before.mean);
  EXPECT_EQ(m.predict(q).stddev, before.stddev);
  EXPECT_EQ(m.size(), 6);
}

TEST(SimulateQuery, DeterministicGivenSeed) {
  Rng data(9);
  const gp::GPModel m = random_model(data, 6, 2, 0.05);
  Rng a(5), b(5);
  EXPECT_EQ(simulate_query(m, Eigen::Vector2d(0.2, 0.2), a).targets(), simulate_query(m, Eigen::Vector2d(0.2, 0.2), b).targets());
}

TEST(LossChange, ConditioningMatchesRefitRoute) {
  Rng data(10);
  const gp::GPModel m = random_model(data, 9, 2, 0.02);
  const MatrixXd reps = uniform_reps(data, 15, 1);
  const VectorXd ctx = VectorXd::Constant(1, 0.6);
  const Eigen::Vector2d q(0.55, 0.4);
  const int mc = 2000;
  const std::uint64_t seed = 1234;
  const PreparedContext pc(m, ctx, reps, mc, seed);
  const OptimalityDistribution fast = pc.p_opt_after(prepare_query(m, q));

  // Reference: append the fantasy observation, refit, and sample with the same normals.
  Rng rng(seed);
  const gp::GPModel refit = simulate_query(m, q, rng);
  const OptimalityDistribution slow = estimate_p_opt(refit, ctx, reps, mc, rng);
  EXPECT_LT(total_variation(fast.probs, slow.probs), 1e-3);
}

TEST(LossChange, RedundantQueryIsZero) {
  Rng rng(11);
  const gp::GPModel m = random_model(rng, 6, 2, 0.0);
  const MatrixXd reps = uniform_reps(rng, 10, 1);
  const double d = loss_change(m, VectorXd::Constant(1, 0.3), reps, m.inputs().row(4).transpose(), 10000, 7);
  EXPECT_LT(std::abs(d), 0.05);
}

TEST(LossChange, InformativeQueryConcentratesPOpt) {
  const gp::GPModel prior = gp::GPModel::fit(MatrixXd(0, 1), VectorXd(0), gp::Hyperparams::isotropic(1, 0.2, 1.0, 0.01));
  MatrixXd reps(8, 1);
  for (int j = 0; j < 8; ++j) reps(j, 0) = j / 7.0;
  double sum = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    sum += loss_change(prior, VectorXd(0), reps, VectorXd::Constant(1, 3.0 / 7.0 + 0.01), 500, seed);
  }
  EXPECT_LE(sum / 20.0, 0.05);
}

TEST(LossChange, MoreSamplesStayClose) {
  Rng data(12);
  const gp::GPModel m = random_model(data, 8, 1, 0.02);
  const MatrixXd reps = uniform_reps(data, 10, 1);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const double a = loss_change(m, VectorXd(0), reps, VectorXd::Constant(1, 0.5), 2000, seed);
    const double b = loss_change(m, VectorXd(0), reps, VectorXd::Constant(1, 0.5), 4000, seed);
    EXPECT_LT(std::abs(a - b), 0.1);
  }
}

TEST(LossChange, SingleRepresenterIsExactlyZero) {
  Rng rng(13);
  const gp::GPModel m = random_model(rng, 5, 1, 0.02);
  EXPECT_EQ(loss_change(m, VectorXd(0), uniform_reps(rng, 1, 1), VectorXd::Constant(1, 0.5), 100, 1), 0.0);
}

TEST(Aces, SingleContextEqualsLossChange) {
  Rng rng(14);
  const auto shared = std::make_shared<const gp::GPModel>(random_model(rng, 7, 2, 0.02));
  const gp::GPModel& m = *shared;
  RepresenterSet set;
  set.mc_samples = 400;
  set.contexts.push_back({shared, VectorXd::Constant(1, 0.2), uniform_reps(rng, 10, 1), 99});
  const Eigen::Vector2d q(0.3, 0.6);
  EXPECT_EQ(aces(q, set), loss_change(m, set.contexts[0].context, set.contexts[0].theta_reps, q, 400, 99));
  set.contexts.push_back(set.contexts[0]);
  EXPECT_EQ(aces(q, set), 2.0 * loss_change(m, set.contexts[0].context, set.contexts[0].theta_reps, q, 400, 99));
}

namespace {

cps::ExperienceDataset cannon_data(int n, std::uint64_t seed) {
  const cannon::Environment env = cannon::generate_environment(seed);
  cps::ExperienceDataset d = cannon::empty_dataset();
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector2d target = cannon::target_bounds().sample(rng);
    const cannon::LaunchParams p = cannon::LaunchParams::from_vector(d.theta_bounds.sample(rng));
    const cannon::ImpactPoint hit = cannon::simulate_shot(env, p, cannon::kTrainingNoise, rng);
    cps::EpisodeRecord rec;
    rec.theta = p.to_vector();
    rec.outcome = cannon::to_outcome(hit);
    rec.original_target = target;
    rec.original_reward = cannon::reward(target, hit, p);
    d.append(rec);
  }
  return d;
}

ActiveSettings small_active() {
  ActiveSettings s;
  s.contexts = 4;
  s.theta_reps = 8;
  s.uniform_reps = 4;
  s.mc_samples = 200;
  s.candidate_budget = 12;
  return s;
}

}  // namespace

TEST(SelectActive, EmptyDatasetIsSeededRandom) {
  const cps::ExperienceDataset d = cannon::empty_dataset();
  cps::SurrogateCache c1, c2;
  const ActiveQuery a = select_query_active_fcps(d, cannon::reward_interface(), small_active(), {}, c1, 5);
  const ActiveQuery b = select_query_active_fcps(d, cannon::reward_interface(), small_active(), {}, c2, 5);
  EXPECT_EQ(a.theta, b.theta);
  EXPECT_TRUE(d.theta_bounds.contains(a.theta));
  EXPECT_EQ(a.environment.size(), 0);
}

TEST(SelectActive, SingleCandidateIsReturned) {
  const cps::ExperienceDataset d = cannon_data(12, 3);
  ActiveSettings s = small_active();
  s.candidate_budget = 1;
  cps::SurrogateCache cache;
  const ActiveQuery q = select_query_active_fcps(d, cannon::reward_interface(), s, {}, cache, 17);
  ASSERT_EQ(q.candidates.rows(), 1);
  EXPECT_EQ(q.theta, q.candidates.row(0).transpose());
}

TEST(SelectActive, ReturnsMinimumOfReevaluatedCandidates) {
  const cps::ExperienceDataset d = cannon_data(25, 4);
  cps::SurrogateCache cache;
  const ActiveSettings s = small_active();
  const ActiveQuery q = select_query_active_fcps(d, cannon::reward_interface(), s, {}, cache, 21);
  EXPECT_TRUE(d.theta_bounds.contains(q.theta));
  ASSERT_EQ(q.representers.contexts.size(), 4u);
  const Box box = d.environment_bounds.product(d.theta_bounds);
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < q.candidates.rows(); ++c) {
    const double v = aces(box.to_unit(q.candidates.row(c).transpose()), q.representers);
    EXPECT_EQ(v, q.candidate_values(c));
    best = std::min(best, v);
  }
  EXPECT_EQ(q.aces_value, best);
}

TEST(SelectActive, DeterministicGivenSeed) {
  const cps::ExperienceDataset d = cannon_data(15, 6);
  cps::SurrogateCache c1, c2;
  const ActiveQuery a = select_query_active_fcps(d, cannon::reward_interface(), small_active(), {}, c1, 8);
  const ActiveQuery b = select_query_active_fcps(d, cannon::reward_interface(), small_active(), {}, c2, 8);
  EXPECT_EQ(a.theta, b.theta);
  EXPECT_EQ(a.candidate_values, b.candidate_values);
}
