#pragma once

// Passive contextual policy search with GP-UCB: the BO-CPS baseline, which
// regresses stored rewards over (target, environment, parameters), and the
// factored variant, which re-scores every stored outcome against the query
// target and regresses over (environment, parameters) only.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "fcps/box.hpp"
#include "fcps/gp.hpp"
#include "fcps/random.hpp"
#include "fcps/search.hpp"
#include "json.hpp"

namespace fcps::cps {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct Context {
  VectorXd target;       // target-type component
  VectorXd environment;  // environment-type component, possibly empty
};

/// Sufficient statistic of a trajectory: where the projectile came down.
struct Outcome {
  double impact_x = 0.0;
  double impact_y = 0.0;
  double impact_z = 0.0;
};

struct EpisodeRecord {
  std::size_t episode = 0;
  VectorXd environment_context = VectorXd(0);
  VectorXd theta;
  Outcome outcome;
  VectorXd original_target;
  double original_reward = 0.0;
  std::uint64_t seed = 0;
};

/// Append-only experience store.
struct ExperienceDataset {
  std::vector<EpisodeRecord> records;
  Box theta_bounds;
  Box target_bounds;
  Box environment_bounds = Box(VectorXd(0), VectorXd(0));

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }

  void append(EpisodeRecord rec) {
    if (!theta_bounds.contains(rec.theta)) throw std::invalid_argument("ExperienceDataset: theta outside bounds");
    if (rec.environment_context.size() != environment_bounds.dim())
      throw std::invalid_argument("ExperienceDataset: environment context has wrong dimension");
    records.push_back(std::move(rec));
  }
};

/// Reward of a stored trial re-scored against an arbitrary target.
using RewardFn = std::function<double(const VectorXd& target, const EpisodeRecord& record)>;

struct QueryEntry {
  VectorXd input;  // (s^e, theta)
  double reward = 0.0;
};

/// Re-evaluates every stored outcome for `query_target`.
inline std::vector<QueryEntry> build_query_dataset(const ExperienceDataset& data, const VectorXd& query_target,
                                                   const RewardFn& reward_fn) {
  std::vector<QueryEntry> out;
  out.reserve(data.size());
  for (const EpisodeRecord& rec : data.records) {
    VectorXd input(rec.environment_context.size() + rec.theta.size());
    input << rec.environment_context, rec.theta;
    out.push_back({std::move(input), reward_fn(query_target, rec)});
  }
  return out;
}

/// Largest |original_reward - reward_fn(original_target, record)| over the dataset.
inline double max_reevaluation_error(const ExperienceDataset& data, const RewardFn& reward_fn) {
  double worst = 0.0;
  for (const EpisodeRecord& rec : data.records) {
    worst = std::max(worst, std::abs(reward_fn(rec.original_target, rec) - rec.original_reward));
  }
  return worst;
}

inline double ucb(const gp::GPModel& model, const Eigen::Ref<const VectorXd>& x, double kappa) {
  if (kappa < 0.0) throw std::invalid_argument("ucb: kappa must be non-negative");
  if (kappa == 0.0) return model.mean(x);
  const gp::Prediction p = model.predict(x);
  return p.mean + kappa * p.stddev;
}

struct AcquisitionSettings {
  int probes = 200;
  int starts = 5;
  RefineSettings refine{3, 4, 0.5};
  /// Initial refinement step as a fraction of each bound's range.
  double initial_step = 0.1;
};

/// Random probing followed by coordinate refinement of the best probes.
template <typename F>
SearchResult maximize_acquisition(F&& objective, const Box& bounds, Rng& rng, const AcquisitionSettings& cfg = {}) {
  if (cfg.probes < 1) throw std::invalid_argument("maximize_acquisition: need at least one probe");
  MatrixXd probes(cfg.probes, bounds.dim());
  VectorXd values(cfg.probes);
  for (int i = 0; i < cfg.probes; ++i) {
    probes.row(i) = bounds.sample(rng).transpose();
    values(i) = objective(VectorXd(probes.row(i).transpose()));
  }
  SearchResult best{probes.row(0).transpose(), values(0)};
  for (Eigen::Index i : top_indices(values, cfg.starts)) {
    SearchResult r = coordinate_refine(objective, probes.row(i).transpose(), values(i), bounds,
                                       cfg.initial_step * bounds.range(), cfg.refine);
    if (r.value > best.value) best = std::move(r);
  }
  return best;
}

/// When and how the GP hyperparameters are re-estimated.
struct GpSchedule {
  std::size_t period = 10;
  std::vector<std::size_t> extra = {2, 5};
  int restarts = 5;
  /// Evidence maximization uses at most this many (randomly chosen) points.
  std::size_t max_points = 150;
  gp::OptimizerSettings optimizer;
  double initial_lengthscale = 0.3;
  double initial_noise = 1e-2;

  bool due(std::size_t n) const {
    if (n < 2) return false;
    if (period > 0 && n % period == 0) return true;
    return std::find(extra.begin(), extra.end(), n) != extra.end();
  }

  /// Bounds for unit-scaled inputs and standardized targets.
  gp::HyperparamBounds bounds(Eigen::Index dim) const {
    gp::HyperparamBounds b;
    b.lengthscale_lower = VectorXd::Constant(dim, 1e-2);
    b.lengthscale_upper = VectorXd::Constant(dim, 1e2);
    b.signal_lower = 1e-4;
    b.signal_upper = 1e4;
    b.noise_lower = 1e-6;
    b.noise_upper = 1.0;
    return b;
  }

  gp::Hyperparams initial(Eigen::Index dim) const {
    return gp::Hyperparams::isotropic(dim, initial_lengthscale, 1.0, initial_noise);
  }
};

/// Per-agent surrogate state: current hyperparameters and the last kernel
/// factorization, which is extended incrementally as the dataset grows.
struct SurrogateCache {
  std::optional<gp::Hyperparams> hp;
  std::size_t tuned_at = 0;
  std::optional<gp::GPModel> factor;
};

/// A GP over unit-scaled inputs with standardized targets.
struct Surrogate {
  gp::GPModel model;
  Box input_bounds;
  double offset = 0.0;
  double scale = 1.0;

  VectorXd to_model(const Eigen::Ref<const VectorXd>& x) const { return input_bounds.to_unit(x); }

  /// Prediction in reward units.
  gp::Prediction predict(const Eigen::Ref<const VectorXd>& x) const {
    const gp::Prediction p = model.predict(to_model(x));
    return {offset + scale * p.mean, scale * p.stddev};
  }

  double ucb(const Eigen::Ref<const VectorXd>& x, double kappa) const {
    return offset + scale * cps::ucb(model, to_model(x), kappa);
  }
};

struct Standardization {
  double offset = 0.0;
  double scale = 1.0;
};

/// Mean-centres when n >= 2 and scales by the standard deviation when it is positive.
inline Standardization standardize(const VectorXd& y) {
  Standardization s;
  if (y.size() >= 2) {
    s.offset = y.mean();
    const double var = (y.array() - s.offset).square().sum() / static_cast<double>(y.size());
    if (var > 0.0) s.scale = std::sqrt(var);
  }
  return s;
}

/// Fits a surrogate on raw (inputs, rewards), updating `cache` per `schedule`.
inline Surrogate fit_surrogate(const MatrixXd& raw_inputs, const VectorXd& rewards, const Box& input_bounds,
                               const GpSchedule& schedule, SurrogateCache& cache, Rng& rng, bool allow_tuning) {
  const Eigen::Index n = raw_inputs.rows();
  const Eigen::Index d = input_bounds.dim();
  MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i) x.row(i) = input_bounds.to_unit(raw_inputs.row(i).transpose()).transpose();
  const Standardization st = standardize(rewards);
  const VectorXd y = (rewards.array() - st.offset) / st.scale;

  const auto un = static_cast<std::size_t>(n);
  if (allow_tuning && schedule.due(un) && cache.tuned_at != un) {
    MatrixXd xs = x;
    VectorXd ys = y;
    if (un > schedule.max_points) {
      std::vector<Eigen::Index> idx(un);
      std::iota(idx.begin(), idx.end(), Eigen::Index{0});
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(schedule.max_points);
      std::sort(idx.begin(), idx.end());
      xs = x(idx, Eigen::all);
      ys = y(idx);
    }
    cache.hp = gp::optimize_hyperparams(xs, ys, cache.hp.value_or(schedule.initial(d)), schedule.bounds(d),
                                        schedule.restarts, rng, schedule.optimizer);
    cache.tuned_at = un;
  }
  const gp::Hyperparams hp = cache.hp.value_or(schedule.initial(d));

  std::optional<gp::GPModel> model;
  if (cache.factor && cache.factor->hyperparams() == hp && cache.factor->size() <= n &&
      cache.factor->size() >= n - 1 && x.topRows(cache.factor->size()) == cache.factor->inputs()) {
    model = cache.factor->size() == n ? cache.factor->with_targets(y)
                                      : cache.factor->append(x.row(n - 1).transpose(), 0.0).with_targets(y);
  } else {
    model = gp::GPModel::fit(x, y, hp);
  }
  cache.factor = *model;
  return {std::move(*model), input_bounds, st.offset, st.scale};
}

struct SelectionSettings {
  double kappa = 2.0;
  GpSchedule schedule;
  AcquisitionSettings acquisition;
  /// Hyperparameters are only re-estimated when true (training, not evaluation).
  bool allow_tuning = true;
};

/// Factored selection: re-score all outcomes for the query target, regress
/// over (s^e, theta) and maximize UCB over theta with s^e fixed.
inline VectorXd select_parameters_fcps(const ExperienceDataset& data, const Context& query, const RewardFn& reward_fn,
                                       const SelectionSettings& cfg, SurrogateCache& cache, Rng& rng) {
  if (data.empty()) return data.theta_bounds.sample(rng);
  const std::vector<QueryEntry> dq = build_query_dataset(data, query.target, reward_fn);
  const Eigen::Index n = static_cast<Eigen::Index>(dq.size());
  const Eigen::Index e = data.environment_bounds.dim();
  const Eigen::Index p = data.theta_bounds.dim();
  MatrixXd inputs(n, e + p);
  VectorXd rewards(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    inputs.row(i) = dq[static_cast<std::size_t>(i)].input.transpose();
    rewards(i) = dq[static_cast<std::size_t>(i)].reward;
  }
  const Box input_bounds = data.environment_bounds.product(data.theta_bounds);
  const Surrogate s = fit_surrogate(inputs, rewards, input_bounds, cfg.schedule, cache, rng, cfg.allow_tuning);

  VectorXd full(e + p);
  full.head(e) = query.environment;
  auto objective = [&](const VectorXd& theta) {
    full.tail(p) = theta;
    return s.ucb(full, cfg.kappa);
  };
  return maximize_acquisition(objective, data.theta_bounds, rng, cfg.acquisition).x;
}

/// Baseline selection: regress stored rewards over (s^t, s^e, theta).
inline VectorXd select_parameters_bocps(const ExperienceDataset& data, const Context& query,
                                        const SelectionSettings& cfg, SurrogateCache& cache, Rng& rng) {
  if (data.empty()) return data.theta_bounds.sample(rng);
  const Eigen::Index n = static_cast<Eigen::Index>(data.size());
  const Eigen::Index t = data.target_bounds.dim();
  const Eigen::Index e = data.environment_bounds.dim();
  const Eigen::Index p = data.theta_bounds.dim();
  MatrixXd inputs(n, t + e + p);
  VectorXd rewards(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const EpisodeRecord& rec = data.records[static_cast<std::size_t>(i)];
    inputs.row(i) << rec.original_target.transpose(), rec.environment_context.transpose(), rec.theta.transpose();
    rewards(i) = rec.original_reward;
  }
  const Box input_bounds = data.target_bounds.product(data.environment_bounds).product(data.theta_bounds);
  const Surrogate s = fit_surrogate(inputs, rewards, input_bounds, cfg.schedule, cache, rng, cfg.allow_tuning);

  VectorXd full(t + e + p);
  full.head(t) = query.target;
  full.segment(t, e) = query.environment;
  auto objective = [&](const VectorXd& theta) {
    full.tail(p) = theta;
    return s.ucb(full, cfg.kappa);
  };
  return maximize_acquisition(objective, data.theta_bounds, rng, cfg.acquisition).x;
}

// Persistence: one JSON object per line.

inline nlohmann::json to_json(const EpisodeRecord& rec) {
  auto vec = [](const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  return {{"episode", rec.episode},
          {"s_e", vec(rec.environment_context)},
          {"theta", vec(rec.theta)},
          {"outcome",
           {{"impact_x", rec.outcome.impact_x}, {"impact_y", rec.outcome.impact_y}, {"impact_z", rec.outcome.impact_z}}},
          {"original_target", vec(rec.original_target)},
          {"original_reward", rec.original_reward},
          {"seed", rec.seed}};
}

inline EpisodeRecord record_from_json(const nlohmann::json& j) {
  auto vec = [](const nlohmann::json& a) {
    const auto v = a.get<std::vector<double>>();
    return VectorXd(Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
  };
  EpisodeRecord rec;
  rec.episode = j.at("episode").get<std::size_t>();
  rec.environment_context = vec(j.at("s_e"));
  rec.theta = vec(j.at("theta"));
  const auto& o = j.at("outcome");
  rec.outcome = {o.at("impact_x").get<double>(), o.at("impact_y").get<double>(), o.at("impact_z").get<double>()};
  rec.original_target = vec(j.at("original_target"));
  rec.original_reward = j.at("original_reward").get<double>();
  rec.seed = j.at("seed").get<std::uint64_t>();
  return rec;
}

inline void write_records(std::ostream& os, const ExperienceDataset& data) {
  for (const EpisodeRecord& rec : data.records) os << to_json(rec).dump() << '\n';
}

inline void save_dataset(const std::string& path, const ExperienceDataset& data) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open dataset for writing: " + path);
  write_records(os, data);
  if (!os) throw std::runtime_error("failed writing dataset: " + path);
}

/// Reads records into a dataset with the given bounds.
inline ExperienceDataset load_dataset(const std::string& path, ExperienceDataset bounds_only) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open dataset: " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      bounds_only.append(record_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& ex) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return bounds_only;
}

}  // namespace fcps::cps
