#pragma once

// Exact Gaussian-process regression with a squared-exponential ARD kernel.

#include <cassert>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "fcps/random.hpp"

namespace fcps::gp {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Raised when a covariance matrix cannot be factorized even after jitter.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Hyperparams {
  VectorXd lengthscales;
  double signal_variance = 1.0;
  double noise_variance = 0.0;

  static Hyperparams isotropic(Eigen::Index dim, double lengthscale, double signal_variance,
                               double noise_variance) {
    return {VectorXd::Constant(dim, lengthscale), signal_variance, noise_variance};
  }

  Eigen::Index dim() const { return lengthscales.size(); }

  bool valid() const {
    return (lengthscales.array() > 0.0).all() && lengthscales.allFinite() && signal_variance > 0.0 &&
           std::isfinite(signal_variance) && noise_variance >= 0.0 && std::isfinite(noise_variance);
  }

  /// Packs to (log l_1..l_d, log signal_variance, log noise_variance).
  VectorXd to_log() const {
    VectorXd v(dim() + 2);
    v.head(dim()) = lengthscales.array().log();
    v(dim()) = std::log(signal_variance);
    v(dim() + 1) = std::log(noise_variance);
    return v;
  }

  static Hyperparams from_log(const VectorXd& v) {
    const Eigen::Index d = v.size() - 2;
    return {v.head(d).array().exp(), std::exp(v(d)), std::exp(v(d + 1))};
  }

  bool operator==(const Hyperparams& o) const {
    return lengthscales == o.lengthscales && signal_variance == o.signal_variance &&
           noise_variance == o.noise_variance;
  }
};

inline void check_dims(Eigen::Index a, Eigen::Index b, const char* what) {
  if (a != b) {
    throw std::invalid_argument(std::string(what) + ": dimension mismatch (" + std::to_string(a) + " vs " +
                                std::to_string(b) + ")");
  }
}

/// signal_variance * exp(-0.5 * sum_k ((x_k - y_k) / l_k)^2)
inline double kernel(const Eigen::Ref<const VectorXd>& x, const Eigen::Ref<const VectorXd>& x2,
                     const Hyperparams& hp) {
  check_dims(x.size(), x2.size(), "kernel");
  check_dims(x.size(), hp.dim(), "kernel");
  return hp.signal_variance * std::exp(-0.5 * ((x - x2).array() / hp.lengthscales.array()).square().sum());
}

/// Cross-covariance between the rows of a and the rows of b.
inline MatrixXd gram(const MatrixXd& a, const MatrixXd& b, const Hyperparams& hp) {
  check_dims(a.cols(), hp.dim(), "gram");
  check_dims(b.cols(), hp.dim(), "gram");
  const MatrixXd sa = a.array().rowwise() / hp.lengthscales.transpose().array();
  const MatrixXd sb = b.array().rowwise() / hp.lengthscales.transpose().array();
  MatrixXd d2 = (-2.0 * sa * sb.transpose()).colwise() + sa.rowwise().squaredNorm();
  d2.rowwise() += sb.rowwise().squaredNorm().transpose();
  return hp.signal_variance * (-0.5 * d2.array().max(0.0)).exp().matrix();
}

/// Jitter escalation: 1e-10 * scale, x10 per retry, up to 1e-4 * scale.
struct JitterPolicy {
  double initial = 1e-10;
  double ceiling = 1e-4;
  double growth = 10.0;
  /// Pivots below min_pivot * scale count as a failed factorization.
  double min_pivot = 1e-13;
};

struct Factorization {
  MatrixXd lower;
  double jitter = 0.0;
};

inline bool factor_ok(const Eigen::LLT<MatrixXd>& llt, double scale, const JitterPolicy& policy) {
  if (llt.info() != Eigen::Success) return false;
  const auto diag = llt.matrixLLT().diagonal();
  return diag.allFinite() && (diag.array().square() > policy.min_pivot * scale).all();
}

/// Cholesky factor of a, adding diagonal jitter per policy when needed.
inline Factorization cholesky_with_jitter(const MatrixXd& a, double scale, const JitterPolicy& policy = {}) {
  Eigen::LLT<MatrixXd> llt(a);
  if (factor_ok(llt, scale, policy)) return {llt.matrixL(), 0.0};
  for (double j = policy.initial; j <= policy.ceiling * (1.0 + 1e-12); j *= policy.growth) {
    MatrixXd aj = a;
    aj.diagonal().array() += j * scale;
    llt.compute(aj);
    if (factor_ok(llt, scale, policy)) return {llt.matrixL(), j * scale};
  }
  throw NumericalError("covariance matrix of size " + std::to_string(a.rows()) +
                       " is not positive definite after jitter up to " + std::to_string(policy.ceiling * scale));
}

struct Prediction {
  double mean = 0.0;
  double stddev = 0.0;
};

/// GP posterior conditioned on (inputs, targets). Immutable once built.
class GPModel {
 public:
  GPModel() = default;

  static GPModel fit(MatrixXd inputs, VectorXd targets, Hyperparams hp) {
    if (!hp.valid()) throw std::invalid_argument("fit: invalid hyperparameters");
    check_dims(inputs.rows(), targets.size(), "fit");
    if (inputs.rows() > 0) check_dims(inputs.cols(), hp.dim(), "fit");
    GPModel m;
    m.inputs_ = std::move(inputs);
    m.inputs_.conservativeResize(m.inputs_.rows(), hp.dim());
    m.targets_ = std::move(targets);
    m.hp_ = std::move(hp);
    if (m.size() > 0) {
      MatrixXd k = gram(m.inputs_, m.inputs_, m.hp_);
      k.diagonal().array() += m.hp_.noise_variance;
      Factorization f = cholesky_with_jitter(k, m.hp_.signal_variance);
      m.chol_ = std::move(f.lower);
      m.jitter_ = f.jitter;
    }
    m.solve_alpha();
    return m;
  }

  /// Same inputs and hyperparameters, new targets; reuses the factorization.
  GPModel with_targets(VectorXd targets) const {
    check_dims(targets.size(), size(), "with_targets");
    GPModel m = *this;
    m.targets_ = std::move(targets);
    m.solve_alpha();
    return m;
  }

  /// This model with (x, y) appended; equivalent to refitting on the extended data.
  GPModel append(const Eigen::Ref<const VectorXd>& x, double y) const {
    check_dims(x.size(), dim(), "append");
    const Eigen::Index n = size();
    MatrixXd inputs(n + 1, dim());
    inputs.topRows(n) = inputs_;
    inputs.row(n) = x.transpose();
    VectorXd targets(n + 1);
    targets.head(n) = targets_;
    targets(n) = y;

    const VectorXd l = whiten(cross_cov(x));
    const double pivot = hp_.signal_variance + hp_.noise_variance + jitter_ - l.squaredNorm();
    if (!(pivot > JitterPolicy{}.min_pivot * hp_.signal_variance)) {
      return fit(std::move(inputs), std::move(targets), hp_);
    }
    GPModel m;
    m.inputs_ = std::move(inputs);
    m.targets_ = std::move(targets);
    m.hp_ = hp_;
    m.jitter_ = jitter_;
    m.chol_ = MatrixXd::Zero(n + 1, n + 1);
    m.chol_.topLeftCorner(n, n) = chol_;
    m.chol_.row(n).head(n) = l.transpose();
    m.chol_(n, n) = std::sqrt(pivot);
    m.solve_alpha();
    return m;
  }

  Eigen::Index size() const { return inputs_.rows(); }
  Eigen::Index dim() const { return hp_.dim(); }
  const MatrixXd& inputs() const { return inputs_; }
  const VectorXd& targets() const { return targets_; }
  const Hyperparams& hyperparams() const { return hp_; }
  const MatrixXd& chol() const { return chol_; }
  const VectorXd& alpha() const { return alpha_; }
  /// Diagonal jitter actually added during factorization (0 if none).
  double jitter() const { return jitter_; }

  /// k(X_train, x)
  VectorXd cross_cov(const Eigen::Ref<const VectorXd>& x) const {
    check_dims(x.size(), dim(), "cross_cov");
    Eigen::ArrayXd d2 = Eigen::ArrayXd::Zero(size());
    for (Eigen::Index c = 0; c < dim(); ++c) {
      d2 += ((inputs_.col(c).array() - x(c)) / hp_.lengthscales(c)).square();
    }
    return hp_.signal_variance * (-0.5 * d2).exp().matrix();
  }

  /// Solves L v = b.
  VectorXd whiten(const VectorXd& b) const {
    if (size() == 0) return VectorXd();
    return chol_.triangularView<Eigen::Lower>().solve(b);
  }

  MatrixXd whiten(const MatrixXd& b) const {
    if (size() == 0) return MatrixXd(0, b.cols());
    return chol_.triangularView<Eigen::Lower>().solve(b);
  }

  double mean(const Eigen::Ref<const VectorXd>& x) const {
    check_dims(x.size(), dim(), "predict");
    if (size() == 0) return 0.0;
    return cross_cov(x).dot(alpha_);
  }

  /// Posterior mean and latent-function standard deviation at x.
  Prediction predict(const Eigen::Ref<const VectorXd>& x) const {
    check_dims(x.size(), dim(), "predict");
    if (size() == 0) return {0.0, std::sqrt(hp_.signal_variance)};
    const VectorXd k = cross_cov(x);
    const VectorXd v = whiten(k);
    const double var = hp_.signal_variance - v.squaredNorm();
    assert(var >= -1e-12 * std::max(1.0, hp_.signal_variance));
    return {k.dot(alpha_), std::sqrt(std::max(var, 0.0))};
  }

 private:
  void solve_alpha() {
    if (size() == 0) {
      alpha_.resize(0);
      return;
    }
    alpha_ = chol_.triangularView<Eigen::Lower>().solve(targets_);
    chol_.triangularView<Eigen::Lower>().transpose().solveInPlace(alpha_);
  }

  MatrixXd inputs_ = MatrixXd(0, 0);
  VectorXd targets_ = VectorXd(0);
  Hyperparams hp_;
  MatrixXd chol_;
  VectorXd alpha_;
  double jitter_ = 0.0;
};

/// Joint posterior over the rows of `points`.
struct JointPosterior {
  VectorXd mean;
  MatrixXd cov;
};

inline JointPosterior posterior_joint(const GPModel& model, const MatrixXd& points) {
  check_dims(points.cols(), model.dim(), "posterior_joint");
  JointPosterior post;
  post.cov = gram(points, points, model.hyperparams());
  if (model.size() == 0) {
    post.mean = VectorXd::Zero(points.rows());
    return post;
  }
  const MatrixXd kxs = gram(model.inputs(), points, model.hyperparams());
  post.mean = kxs.transpose() * model.alpha();
  const MatrixXd v = model.whiten(kxs);
  post.cov.noalias() -= v.transpose() * v;
  return post;
}

/// Square-root factor S with S S^T ~= cov for drawing correlated samples.
/// Coordinates whose variance is below `degenerate * scale` are treated as
/// deterministic (zero row in S); the rest is Cholesky-factorized with jitter.
inline MatrixXd sampling_factor(const MatrixXd& cov, double scale, double degenerate = 1e-12) {
  const Eigen::Index m = cov.rows();
  std::vector<Eigen::Index> live;
  live.reserve(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) {
    if (cov(i, i) > degenerate * scale) live.push_back(i);
  }
  MatrixXd s = MatrixXd::Zero(m, m);
  if (live.empty()) return s;
  const auto k = static_cast<Eigen::Index>(live.size());
  MatrixXd sub(k, k);
  for (Eigen::Index a = 0; a < k; ++a) {
    for (Eigen::Index b = 0; b < k; ++b) {
      const auto i = live[static_cast<std::size_t>(a)], j = live[static_cast<std::size_t>(b)];
      sub(a, b) = 0.5 * (cov(i, j) + cov(j, i));
    }
  }
  const Factorization f = cholesky_with_jitter(sub, scale);
  for (Eigen::Index a = 0; a < k; ++a) {
    for (Eigen::Index b = 0; b <= a; ++b) {
      s(live[static_cast<std::size_t>(a)], live[static_cast<std::size_t>(b)]) = f.lower(a, b);
    }
  }
  return s;
}

/// One joint draw of the latent function at the rows of `points`.
inline VectorXd sample_posterior_joint(const GPModel& model, const MatrixXd& points, Rng& rng) {
  if (points.rows() < 1) throw std::invalid_argument("sample_posterior_joint: need at least one point");
  const JointPosterior post = posterior_joint(model, points);
  const MatrixXd s = sampling_factor(post.cov, model.hyperparams().signal_variance);
  return post.mean + s * standard_normal_vector(rng, points.rows());
}

/// Log evidence and its gradient w.r.t. Hyperparams::to_log() coordinates.
struct Evidence {
  double value = 0.0;
  VectorXd gradient;
};

inline Evidence log_marginal_likelihood(const GPModel& model) {
  const Eigen::Index n = model.size();
  if (n < 1) throw std::invalid_argument("log_marginal_likelihood: empty model");
  const Hyperparams& hp = model.hyperparams();
  const Eigen::Index d = hp.dim();
  const MatrixXd& l = model.chol();
  const VectorXd& alpha = model.alpha();

  Evidence ev;
  ev.value = -0.5 * model.targets().dot(alpha) - l.diagonal().array().log().sum() -
             0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);

  const MatrixXd linv = l.triangularView<Eigen::Lower>().solve(MatrixXd::Identity(n, n));
  MatrixXd w = alpha * alpha.transpose();
  w.selfadjointView<Eigen::Lower>().rankUpdate(linv.transpose(), -1.0);
  w.triangularView<Eigen::StrictlyUpper>() = w.transpose();

  const MatrixXd kf = gram(model.inputs(), model.inputs(), hp);
  const MatrixXd wk = w.cwiseProduct(kf);
  const VectorXd row_sums = wk.rowwise().sum();
  ev.gradient.resize(d + 2);
  const MatrixXd& x = model.inputs();
  for (Eigen::Index k = 0; k < d; ++k) {
    // sum_ij wk_ij (x_ik - x_jk)^2 for symmetric wk
    const auto xk = x.col(k);
    const double g = 2.0 * (xk.array().square() * row_sums.array()).sum() - 2.0 * xk.dot(wk * xk);
    ev.gradient(k) = 0.5 * g / (hp.lengthscales(k) * hp.lengthscales(k));
  }
  ev.gradient(d) = 0.5 * wk.sum();
  ev.gradient(d + 1) = 0.5 * hp.noise_variance * w.trace();
  return ev;
}

/// Box constraints on hyperparameters (natural, not log, units).
struct HyperparamBounds {
  VectorXd lengthscale_lower, lengthscale_upper;
  double signal_lower = 1e-4, signal_upper = 1e4;
  double noise_lower = 1e-6, noise_upper = 1.0;

  VectorXd log_lower() const {
    VectorXd v(lengthscale_lower.size() + 2);
    v << lengthscale_lower.array().log().matrix(), std::log(signal_lower), std::log(noise_lower);
    return v;
  }
  VectorXd log_upper() const {
    VectorXd v(lengthscale_upper.size() + 2);
    v << lengthscale_upper.array().log().matrix(), std::log(signal_upper), std::log(noise_upper);
    return v;
  }
};

struct OptimizerSettings {
  int iterations = 40;
  double initial_step = 0.1;
  double min_step = 1e-6;
  double max_step = 1.0;
};

namespace detail {

inline bool try_evidence(const MatrixXd& inputs, const VectorXd& targets, const VectorXd& log_hp, Evidence& out) {
  try {
    out = log_marginal_likelihood(GPModel::fit(inputs, targets, Hyperparams::from_log(log_hp)));
    return std::isfinite(out.value) && out.gradient.allFinite();
  } catch (const NumericalError&) {
    return false;
  }
}

/// Resilient backpropagation (iRprop-) ascent inside [lo, hi].
inline void rprop_ascent(const MatrixXd& inputs, const VectorXd& targets, VectorXd x, const VectorXd& lo,
                         const VectorXd& hi, const OptimizerSettings& cfg, VectorXd& best_x, double& best_value) {
  VectorXd step = VectorXd::Constant(x.size(), cfg.initial_step);
  VectorXd prev = VectorXd::Zero(x.size());
  for (int it = 0; it < cfg.iterations; ++it) {
    Evidence ev;
    if (!try_evidence(inputs, targets, x, ev)) return;
    if (ev.value > best_value) {
      best_value = ev.value;
      best_x = x;
    }
    for (Eigen::Index k = 0; k < x.size(); ++k) {
      double g = ev.gradient(k);
      if (g * prev(k) > 0.0) {
        step(k) = std::min(step(k) * 1.2, cfg.max_step);
      } else if (g * prev(k) < 0.0) {
        step(k) = std::max(step(k) * 0.5, cfg.min_step);
        g = 0.0;
      }
      prev(k) = g;
      if (g > 0.0) x(k) += step(k);
      if (g < 0.0) x(k) -= step(k);
      x(k) = std::clamp(x(k), lo(k), hi(k));
    }
    if ((step.array() <= cfg.min_step).all()) break;
  }
  Evidence ev;
  if (try_evidence(inputs, targets, x, ev) && ev.value > best_value) {
    best_value = ev.value;
    best_x = x;
  }
}

}  // namespace detail

/// Multi-start ascent on the log evidence in log-hyperparameter space.
/// The first start is `initial` (clamped into bounds); the remaining starts
/// are uniform in the log box. restarts == 0 returns `initial` unchanged.
inline Hyperparams optimize_hyperparams(const MatrixXd& inputs, const VectorXd& targets, const Hyperparams& initial,
                                        const HyperparamBounds& bounds, int restarts, Rng& rng,
                                        const OptimizerSettings& settings = {}) {
  if (restarts <= 0) return initial;
  if (inputs.rows() < 2) throw std::invalid_argument("optimize_hyperparams: need at least two points");
  check_dims(inputs.rows(), targets.size(), "optimize_hyperparams");
  check_dims(bounds.lengthscale_lower.size(), initial.dim(), "optimize_hyperparams");
  const VectorXd lo = bounds.log_lower();
  const VectorXd hi = bounds.log_upper();

  VectorXd start = initial.to_log();
  for (Eigen::Index k = 0; k < start.size(); ++k) {
    if (!std::isfinite(start(k))) start(k) = lo(k);
    start(k) = std::clamp(start(k), lo(k), hi(k));
  }

  double best_value = -std::numeric_limits<double>::infinity();
  VectorXd best_x = start;
  Evidence ev;
  if (detail::try_evidence(inputs, targets, start, ev)) best_value = ev.value;
  const double initial_value = best_value;

  for (int r = 0; r < restarts; ++r) {
    VectorXd x0 = start;
    if (r > 0) {
      for (Eigen::Index k = 0; k < x0.size(); ++k) x0(k) = uniform(rng, lo(k), hi(k));
    }
    detail::rprop_ascent(inputs, targets, x0, lo, hi, settings, best_x, best_value);
  }
  if (!(best_value > initial_value)) return initial;
  return Hyperparams::from_log(best_x);
}

}  // namespace fcps::gp
