#pragma once

// Entropy-search query selection for the active setting. p_opt(theta | s) is
// estimated on a finite set of theta-representers by counting which one is
// the maximum of joint posterior samples; a query is scored by how much a
// single fantasy observation there is predicted to sharpen p_opt, summed
// over representer contexts.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "fcps/box.hpp"
#include "fcps/cps.hpp"
#include "fcps/gp.hpp"
#include "fcps/random.hpp"

namespace fcps::es {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct OptimalityDistribution {
  VectorXd probs;
};

/// Frequency with which each row of `samples` (M x S) is the column maximum; ties split equally.
inline OptimalityDistribution argmax_frequencies(const MatrixXd& samples) {
  const Eigen::Index m = samples.rows(), s = samples.cols();
  VectorXd counts = VectorXd::Zero(m);
  for (Eigen::Index c = 0; c < s; ++c) {
    const double best = samples.col(c).maxCoeff();
    int ties = 0;
    for (Eigen::Index j = 0; j < m; ++j) ties += samples(j, c) == best;
    for (Eigen::Index j = 0; j < m; ++j) {
      if (samples(j, c) == best) counts(j) += 1.0 / ties;
    }
  }
  return {counts / static_cast<double>(s)};
}

/// -KL(p || uniform) = -sum_j p_j log(p_j M), with 0 log 0 = 0. Lies in [-log M, 0].
inline double relative_entropy_loss(const OptimalityDistribution& p) {
  const double m = static_cast<double>(p.probs.size());
  double kl = 0.0;
  for (Eigen::Index j = 0; j < p.probs.size(); ++j) {
    if (p.probs(j) > 0.0) kl += p.probs(j) * std::log(p.probs(j) * m);
  }
  return -std::clamp(kl, 0.0, std::log(m));
}

/// Rows (context, theta_j).
inline MatrixXd representer_points(const VectorXd& context, const MatrixXd& theta_reps) {
  MatrixXd pts(theta_reps.rows(), context.size() + theta_reps.cols());
  for (Eigen::Index j = 0; j < theta_reps.rows(); ++j) pts.row(j) << context.transpose(), theta_reps.row(j);
  return pts;
}

inline OptimalityDistribution p_opt_from_posterior(const VectorXd& mean, const MatrixXd& cov, double scale,
                                                   const MatrixXd& normals) {
  if (mean.size() == 1) return {VectorXd::Ones(1)};
  const MatrixXd f = (gp::sampling_factor(cov, scale) * normals).colwise() + mean;
  return argmax_frequencies(f);
}

inline OptimalityDistribution estimate_p_opt(const gp::GPModel& model, const VectorXd& context,
                                             const MatrixXd& theta_reps, int mc_samples, Rng& rng) {
  if (mc_samples < 1) throw std::invalid_argument("estimate_p_opt: mc_samples must be positive");
  if (theta_reps.rows() < 1) throw std::invalid_argument("estimate_p_opt: no representers");
  const gp::JointPosterior post = gp::posterior_joint(model, representer_points(context, theta_reps));
  MatrixXd normals(theta_reps.rows(), mc_samples);
  for (Eigen::Index c = 0; c < mc_samples; ++c) normals.col(c) = standard_normal_vector(rng, theta_reps.rows());
  return p_opt_from_posterior(post.mean, post.cov, model.hyperparams().signal_variance, normals);
}

/// Model refit with one fantasy observation at `query_point`, drawn from the
/// posterior predictive (latent variance plus observation noise). The input
/// model is left untouched.
inline gp::GPModel simulate_query(const gp::GPModel& model, const VectorXd& query_point, Rng& rng) {
  const gp::Prediction p = model.predict(query_point);
  const double sd = std::sqrt(p.stddev * p.stddev + model.hyperparams().noise_variance);
  return model.append(query_point, p.mean + sd * standard_normal(rng));
}

/// Query-dependent quantities shared by every context that uses the same
/// factorization (inputs and hyperparameters).
struct QueryTerms {
  VectorXd x;
  VectorXd k;         // k(X_train, x)
  VectorXd whitened;  // L^-1 k
  double prior_var = 0.0;
};

inline QueryTerms prepare_query(const gp::GPModel& model, const VectorXd& x) {
  QueryTerms q;
  q.x = x;
  q.k = model.cross_cov(x);
  q.whitened = model.whiten(q.k);
  q.prior_var = model.hyperparams().signal_variance;
  return q;
}

/// One representer context with everything that does not depend on the query
/// precomputed: joint posterior over its theta-representers, the common
/// random numbers and the current p_opt.
class PreparedContext {
 public:
  PreparedContext(const gp::GPModel& model, VectorXd context, MatrixXd theta_reps, int mc_samples,
                  std::uint64_t seed)
      : model_(&model), points_(representer_points(context, theta_reps)) {
    if (mc_samples < 1) throw std::invalid_argument("PreparedContext: mc_samples must be positive");
    if (theta_reps.rows() < 1) throw std::invalid_argument("PreparedContext: no representers");
    const gp::JointPosterior post = gp::posterior_joint(model, points_);
    mean_ = post.mean;
    cov_ = post.cov;
    if (model.size() > 0) {
      kxp_ = gp::gram(model.inputs(), points_, model.hyperparams());
      vp_ = model.whiten(kxp_);
    }
    Rng rng(seed);
    fantasy_normal_ = standard_normal(rng);
    normals_.resize(points_.rows(), mc_samples);
    for (Eigen::Index c = 0; c < mc_samples; ++c) normals_.col(c) = standard_normal_vector(rng, points_.rows());
    before_ = p_opt_from_posterior(mean_, cov_, scale(), normals_);
    loss_before_ = relative_entropy_loss(before_);
  }

  const OptimalityDistribution& p_opt() const { return before_; }
  const gp::GPModel& model() const { return *model_; }

  /// p_opt after conditioning on the fantasy observation at the query.
  OptimalityDistribution p_opt_after(const QueryTerms& q) const {
    const gp::GPModel& m = *model_;
    const double mean_q = m.size() > 0 ? q.k.dot(m.alpha()) : 0.0;
    const double var_q = std::max(q.prior_var - q.whitened.squaredNorm(), 0.0);
    const double denom = var_q + m.hyperparams().noise_variance;
    if (!(denom > 1e-12 * scale())) return before_;
    VectorXd cross(points_.rows());
    for (Eigen::Index j = 0; j < points_.rows(); ++j) cross(j) = gp::kernel(points_.row(j).transpose(), q.x, m.hyperparams());
    if (m.size() > 0) cross.noalias() -= vp_.transpose() * q.whitened;
    const double y = mean_q + std::sqrt(denom) * fantasy_normal_;
    const VectorXd mean = mean_ + cross * ((y - mean_q) / denom);
    const MatrixXd cov = cov_ - cross * cross.transpose() / denom;
    return p_opt_from_posterior(mean, cov, scale(), normals_);
  }

  double loss_change(const QueryTerms& q) const { return relative_entropy_loss(p_opt_after(q)) - loss_before_; }

  double loss_change(const VectorXd& query_point) const { return loss_change(prepare_query(*model_, query_point)); }

 private:
  double scale() const { return model_->hyperparams().signal_variance; }

  const gp::GPModel* model_;
  MatrixXd points_;
  VectorXd mean_;
  MatrixXd cov_;
  MatrixXd kxp_, vp_;
  double fantasy_normal_ = 0.0;
  MatrixXd normals_;
  OptimalityDistribution before_;
  double loss_before_ = 0.0;
};

/// L(p_opt after a fantasy query) - L(p_opt now) for one context; both
/// estimates share the same normals so the difference reflects the query.
inline double loss_change(const gp::GPModel& model, const VectorXd& context, const MatrixXd& theta_reps,
                          const VectorXd& query_point, int mc_samples, std::uint64_t seed) {
  return PreparedContext(model, context, theta_reps, mc_samples, seed).loss_change(query_point);
}

struct RepresenterContext {
  std::shared_ptr<const gp::GPModel> model;
  VectorXd context;
  MatrixXd theta_reps;
  std::uint64_t seed = 0;
};

struct RepresenterSet {
  std::vector<RepresenterContext> contexts;
  int mc_samples = 500;
};

/// Sum of per-context loss changes; lower is more informative.
inline double aces(const VectorXd& query_point, const RepresenterSet& reps) {
  double total = 0.0;
  for (const RepresenterContext& rc : reps.contexts) {
    total += loss_change(*rc.model, rc.context, rc.theta_reps, query_point, reps.mc_samples, rc.seed);
  }
  return total;
}

struct ActiveSettings {
  int contexts = 20;
  int theta_reps = 20;
  int uniform_reps = 10;
  /// Jitter around the posterior-mean maximizer, as a fraction of each range.
  double perturbation = 0.1;
  int mc_samples = 500;
  int candidate_budget = 50;
};

struct ActiveQuery {
  VectorXd environment;  // s^e_q
  VectorXd theta;        // theta_q
  double aces_value = 0.0;
  MatrixXd candidates;   // raw (s^e, theta) rows that were scored
  VectorXd candidate_values;
  RepresenterSet representers;  // in model coordinates
  std::vector<cps::Context> contexts;
};

/// Factored active selection. Every representer context gets its own GP fitted
/// on outcomes re-scored for that context's target; candidates are ranked by
/// ACES with common random numbers and the minimizer is returned.
inline ActiveQuery select_query_active_fcps(const cps::ExperienceDataset& data, const cps::RewardFn& reward_fn,
                                            const ActiveSettings& cfg, const cps::SelectionSettings& selection,
                                            cps::SurrogateCache& cache, std::uint64_t iteration_seed) {
  const Eigen::Index e = data.environment_bounds.dim();
  const Eigen::Index p = data.theta_bounds.dim();
  const Box query_box = data.environment_bounds.product(data.theta_bounds);
  ActiveQuery out;
  Rng rng = make_rng(iteration_seed, {kSelectionStream});
  if (data.empty()) {
    const VectorXd x = query_box.sample(rng);
    out.environment = x.head(e);
    out.theta = x.tail(p);
    return out;
  }
  if (cfg.contexts < 1 || cfg.theta_reps < 1 || cfg.candidate_budget < 1)
    throw std::invalid_argument("select_query_active_fcps: counts must be positive");

  const Eigen::Index n = static_cast<Eigen::Index>(data.size());
  MatrixXd inputs(n, e + p);
  for (Eigen::Index i = 0; i < n; ++i) {
    const cps::EpisodeRecord& rec = data.records[static_cast<std::size_t>(i)];
    inputs.row(i) << rec.environment_context.transpose(), rec.theta.transpose();
  }

  // Representer contexts: uniformly drawn targets, environment part uniform as well.
  Rng ctx_rng = make_rng(iteration_seed, {kRepresenterStream});
  std::vector<cps::Context>& contexts = out.contexts;
  for (int i = 0; i < cfg.contexts; ++i) {
    contexts.push_back({data.target_bounds.sample(ctx_rng), data.environment_bounds.sample(ctx_rng)});
  }

  std::vector<std::shared_ptr<const gp::GPModel>> models;
  for (std::size_t i = 0; i < contexts.size(); ++i) {
    const auto dq = cps::build_query_dataset(data, contexts[i].target, reward_fn);
    VectorXd rewards(n);
    for (Eigen::Index r = 0; r < n; ++r) rewards(r) = dq[static_cast<std::size_t>(r)].reward;
    Rng fit_rng = make_rng(iteration_seed, {kHyperparamStream, i});
    // Only the first context may trigger re-estimation; the rest reuse its hyperparameters.
    models.push_back(std::make_shared<const gp::GPModel>(
        cps::fit_surrogate(inputs, rewards, query_box, selection.schedule, cache, fit_rng,
                           selection.allow_tuning && i == 0)
            .model));
  }

  // Theta-representers per context: uniform draws plus jitter around the mean maximizer.
  const Box unit_theta(VectorXd::Zero(p), VectorXd::Ones(p));
  out.representers.mc_samples = cfg.mc_samples;
  for (std::size_t i = 0; i < contexts.size(); ++i) {
    const gp::GPModel& model = *models[i];
    Rng rep_rng = make_rng(iteration_seed, {kRepresenterStream, i + 1});
    const VectorXd env_unit = data.environment_bounds.to_unit(contexts[i].environment);
    VectorXd full(e + p);
    full.head(e) = env_unit;
    auto mean_at = [&](const VectorXd& theta_unit) {
      full.tail(p) = theta_unit;
      return model.mean(full);
    };
    const VectorXd peak = cps::maximize_acquisition(mean_at, unit_theta, rep_rng, selection.acquisition).x;
    MatrixXd reps(cfg.theta_reps, p);
    for (int j = 0; j < cfg.theta_reps; ++j) {
      if (j < cfg.uniform_reps) {
        reps.row(j) = unit_theta.sample(rep_rng).transpose();
      } else {
        reps.row(j) = unit_theta.clamp(peak + cfg.perturbation * standard_normal_vector(rep_rng, p)).transpose();
      }
    }
    out.representers.contexts.push_back({models[i], env_unit, reps, derive_seed(iteration_seed, {kRepresenterStream, 1000 + i})});
  }

  std::vector<PreparedContext> prepared;
  prepared.reserve(contexts.size());
  for (const RepresenterContext& rc : out.representers.contexts) {
    prepared.emplace_back(*rc.model, rc.context, rc.theta_reps, cfg.mc_samples, rc.seed);
  }

  Rng cand_rng = make_rng(iteration_seed, {kSelectionStream, 1});
  out.candidates = latin_hypercube(query_box, cfg.candidate_budget, cand_rng);
  out.candidate_values.resize(cfg.candidate_budget);
  // All context models share inputs and hyperparameters, so the whitened
  // query vector is computed once per candidate.
  const gp::GPModel& shared = *models.front();
  Eigen::Index best = 0;
  for (Eigen::Index c = 0; c < cfg.candidate_budget; ++c) {
    const QueryTerms q = prepare_query(shared, query_box.to_unit(out.candidates.row(c).transpose()));
    double total = 0.0;
    for (const PreparedContext& pc : prepared) total += pc.loss_change(q);
    out.candidate_values(c) = total;
    if (total < out.candidate_values(best)) best = c;
  }
  out.aces_value = out.candidate_values(best);
  out.environment = out.candidates.row(best).head(e).transpose();
  out.theta = out.candidates.row(best).tail(p).transpose();
  return out;
}

}  // namespace fcps::es
