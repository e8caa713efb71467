#pragma once

// Learning-loop harness for the cannon benchmark: trains one agent per
// environment, scores its greedy policy offline on a target grid at regular
// checkpoints and aggregates learning curves across environments.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Core>

#include "fcps/cannon.hpp"
#include "fcps/cps.hpp"
#include "fcps/entropy_search.hpp"
#include "fcps/random.hpp"
#include "json.hpp"

namespace fcps::experiment {

using Eigen::VectorXd;
namespace fs = std::filesystem;

enum class Algorithm { bocps, fcps, fcps_active };

inline std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::bocps: return "bocps";
    case Algorithm::fcps: return "fcps";
    case Algorithm::fcps_active: return "fcps-active";
  }
  return "unknown";
}

inline Algorithm parse_algorithm(const std::string& s) {
  if (s == "bocps") return Algorithm::bocps;
  if (s == "fcps") return Algorithm::fcps;
  if (s == "fcps-active") return Algorithm::fcps_active;
  throw std::invalid_argument("unknown algorithm '" + s + "' (expected bocps, fcps or fcps-active)");
}

struct ExperimentConfig {
  Algorithm algorithm = Algorithm::fcps;
  int n_environments = 50;
  int n_episodes = 350;
  int eval_every = 10;
  int eval_grid = 8;
  double kappa = 2.0;
  double noise_sigma = cannon::kTrainingNoise;
  std::uint64_t master_seed = 0;
  cps::GpSchedule schedule;
  cps::AcquisitionSettings acquisition;
  es::ActiveSettings active;
  bool flat_terrain = false;
  int workers = 1;
  std::string output_dir;
  /// Directory for cached oracle values; empty disables caching.
  std::string oracle_cache;

  void validate() const {
    if (n_environments < 1 || n_episodes < 1 || eval_every < 1) throw std::invalid_argument("config: counts must be >= 1");
    if (eval_grid < 2) throw std::invalid_argument("config: eval_grid must be >= 2");
    if (kappa < 0.0) throw std::invalid_argument("config: kappa must be non-negative");
    if (noise_sigma < 0.0) throw std::invalid_argument("config: noise_sigma must be non-negative");
    if (workers < 1) throw std::invalid_argument("config: workers must be >= 1");
  }

  cps::SelectionSettings selection() const { return {kappa, schedule, acquisition, true}; }
};

inline nlohmann::json to_json(const ExperimentConfig& c) {
  return {
      {"algorithm", to_string(c.algorithm)},
      {"n_environments", c.n_environments},
      {"n_episodes", c.n_episodes},
      {"eval_every", c.eval_every},
      {"eval_grid", c.eval_grid},
      {"kappa", c.kappa},
      {"noise_sigma", c.noise_sigma},
      {"master_seed", c.master_seed},
      {"gp",
       {{"period", c.schedule.period},
        {"extra", c.schedule.extra},
        {"restarts", c.schedule.restarts},
        {"max_points", c.schedule.max_points},
        {"iterations", c.schedule.optimizer.iterations},
        {"initial_lengthscale", c.schedule.initial_lengthscale},
        {"initial_noise", c.schedule.initial_noise}}},
      {"acquisition", {{"probes", c.acquisition.probes}, {"starts", c.acquisition.starts}}},
      {"active",
       {{"contexts", c.active.contexts},
        {"theta_reps", c.active.theta_reps},
        {"uniform_reps", c.active.uniform_reps},
        {"perturbation", c.active.perturbation},
        {"mc_samples", c.active.mc_samples},
        {"candidate_budget", c.active.candidate_budget}}},
      {"flat_terrain", c.flat_terrain},
      {"workers", c.workers},
      {"output_dir", c.output_dir},
      {"oracle_cache", c.oracle_cache},
  };
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known = {
      "algorithm", "n_environments", "n_episodes", "eval_every", "eval_grid", "kappa",        "noise_sigma",
      "master_seed", "gp",          "acquisition", "active",    "flat_terrain", "workers", "output_dir", "oracle_cache"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) throw std::invalid_argument("config: unknown key '" + key + "'");
  }
  ExperimentConfig c;
  auto get = [](const nlohmann::json& obj, const char* key, auto& dst) {
    if (obj.contains(key)) obj.at(key).get_to(dst);
  };
  if (j.contains("algorithm")) c.algorithm = parse_algorithm(j.at("algorithm").get<std::string>());
  get(j, "n_environments", c.n_environments);
  get(j, "n_episodes", c.n_episodes);
  get(j, "eval_every", c.eval_every);
  get(j, "eval_grid", c.eval_grid);
  get(j, "kappa", c.kappa);
  get(j, "noise_sigma", c.noise_sigma);
  get(j, "master_seed", c.master_seed);
  if (j.contains("gp")) {
    const auto& g = j.at("gp");
    get(g, "period", c.schedule.period);
    get(g, "extra", c.schedule.extra);
    get(g, "restarts", c.schedule.restarts);
    get(g, "max_points", c.schedule.max_points);
    get(g, "iterations", c.schedule.optimizer.iterations);
    get(g, "initial_lengthscale", c.schedule.initial_lengthscale);
    get(g, "initial_noise", c.schedule.initial_noise);
  }
  if (j.contains("acquisition")) {
    get(j.at("acquisition"), "probes", c.acquisition.probes);
    get(j.at("acquisition"), "starts", c.acquisition.starts);
  }
  if (j.contains("active")) {
    const auto& a = j.at("active");
    get(a, "contexts", c.active.contexts);
    get(a, "theta_reps", c.active.theta_reps);
    get(a, "uniform_reps", c.active.uniform_reps);
    get(a, "perturbation", c.active.perturbation);
    get(a, "mc_samples", c.active.mc_samples);
    get(a, "candidate_budget", c.active.candidate_budget);
  }
  get(j, "flat_terrain", c.flat_terrain);
  get(j, "workers", c.workers);
  get(j, "output_dir", c.output_dir);
  get(j, "oracle_cache", c.oracle_cache);
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error(path + ": cannot open config");
  try {
    return config_from_json(nlohmann::json::parse(is));
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

inline std::uint64_t environment_seed(const ExperimentConfig& c, int k) {
  return derive_seed(c.master_seed, {kEnvironmentStream, static_cast<std::uint64_t>(k)});
}

inline cannon::Environment make_environment(const ExperimentConfig& c, int k) {
  return cannon::generate_environment(environment_seed(c, k), c.flat_terrain);
}

/// Evenly spaced g x g targets over the arena, row-major in (x, y).
inline std::vector<Eigen::Vector2d> evaluation_grid(int g) {
  std::vector<Eigen::Vector2d> pts;
  const double lo = -cannon::kArenaHalfWidth, hi = cannon::kArenaHalfWidth;
  for (int i = 0; i < g; ++i) {
    for (int j = 0; j < g; ++j) {
      pts.emplace_back(lo + (hi - lo) * i / (g - 1), lo + (hi - lo) * j / (g - 1));
    }
  }
  return pts;
}

/// Checkpoint episodes 0, eval_every, 2 eval_every, ... and always the last episode.
inline std::vector<int> checkpoints(const ExperimentConfig& c) {
  std::vector<int> eps;
  for (int t = 0; t < c.n_episodes; t += c.eval_every) eps.push_back(t);
  eps.push_back(c.n_episodes);
  return eps;
}

struct AgentState {
  Algorithm algorithm = Algorithm::fcps;
  cps::ExperienceDataset data = cannon::empty_dataset();
  cps::SurrogateCache cache;
};

/// Ground target of the representer context closest to the impact point.
inline VectorXd nearest_target(const std::vector<cps::Context>& contexts, const cannon::ImpactPoint& hit,
                               const Box& bounds) {
  const Eigen::Vector2d p(hit.x, hit.y);
  if (contexts.empty()) return bounds.clamp(p);
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < contexts.size(); ++i) {
    const double d = (contexts[i].target.head<2>() - p).squaredNorm();
    if (d < best_d) best_d = d, best = i;
  }
  return contexts[best].target;
}

/// One passive episode for a given target: select, fire with training noise, record.
inline cps::EpisodeRecord execute_passive(AgentState& agent, const cannon::Environment& env, const ExperimentConfig& c,
                                          const Eigen::Vector2d& target, std::uint64_t env_seed, int episode) {
  const auto t = static_cast<std::uint64_t>(episode);
  Rng select_rng = make_rng(env_seed, {kSelectionStream, t});
  const cps::Context query{target, VectorXd(0)};
  const cps::SelectionSettings sel = c.selection();
  const VectorXd theta = agent.algorithm == Algorithm::bocps
                             ? cps::select_parameters_bocps(agent.data, query, sel, agent.cache, select_rng)
                             : cps::select_parameters_fcps(agent.data, query, cannon::reward_interface(), sel,
                                                           agent.cache, select_rng);
  const cannon::LaunchParams params = cannon::LaunchParams::from_vector(agent.data.theta_bounds.clamp(theta));
  Rng noise_rng = make_rng(env_seed, {kNoiseStream, t});
  const cannon::ImpactPoint hit = cannon::simulate_shot(env, params, c.noise_sigma, noise_rng);
  cps::EpisodeRecord rec;
  rec.episode = static_cast<std::size_t>(episode);
  rec.theta = params.to_vector();
  rec.outcome = cannon::to_outcome(hit);
  rec.original_target = target;
  rec.original_reward = cannon::reward(target, hit, params);
  rec.seed = derive_seed(env_seed, {kEpisodeStream, t});
  agent.data.append(rec);
  return rec;
}

inline cps::EpisodeRecord run_episode_passive(AgentState& agent, const cannon::Environment& env,
                                              const ExperimentConfig& c, std::uint64_t env_seed, int episode) {
  Rng rng = make_rng(env_seed, {kEpisodeStream, static_cast<std::uint64_t>(episode)});
  const Eigen::Vector2d target = cannon::target_bounds().sample(rng);
  return execute_passive(agent, env, c, target, env_seed, episode);
}

/// Active episode: the learner picks theta by entropy search. The stored
/// target is bookkeeping only and is never read by the active selector.
inline cps::EpisodeRecord run_episode_active(AgentState& agent, const cannon::Environment& env,
                                             const ExperimentConfig& c, std::uint64_t env_seed, int episode) {
  const auto t = static_cast<std::uint64_t>(episode);
  const es::ActiveQuery q = es::select_query_active_fcps(agent.data, cannon::reward_interface(), c.active,
                                                         c.selection(), agent.cache, derive_seed(env_seed, {kSelectionStream, t}));
  const cannon::LaunchParams params = cannon::LaunchParams::from_vector(agent.data.theta_bounds.clamp(q.theta));
  Rng noise_rng = make_rng(env_seed, {kNoiseStream, t});
  const cannon::ImpactPoint hit = cannon::simulate_shot(env, params, c.noise_sigma, noise_rng);
  cps::EpisodeRecord rec;
  rec.episode = static_cast<std::size_t>(episode);
  rec.environment_context = q.environment;
  rec.theta = params.to_vector();
  rec.outcome = cannon::to_outcome(hit);
  rec.original_target = nearest_target(q.contexts, hit, agent.data.target_bounds);
  rec.original_reward = cannon::reward(rec.original_target.head<2>(), hit, params);
  rec.seed = derive_seed(env_seed, {kEpisodeStream, t});
  agent.data.append(rec);
  return rec;
}

inline cps::EpisodeRecord run_episode(AgentState& agent, const cannon::Environment& env, const ExperimentConfig& c,
                                      std::uint64_t env_seed, int episode) {
  return agent.algorithm == Algorithm::fcps_active ? run_episode_active(agent, env, c, env_seed, episode)
                                                   : run_episode_passive(agent, env, c, env_seed, episode);
}

struct Evaluation {
  double mean_reward = 0.0;
  std::vector<double> rewards;  // per grid target
};

/// Greedy (kappa = 0) policy scored with noise-free shots on the target grid.
/// Works on a copy of the surrogate cache, so the agent is left untouched.
/// The active agent is evaluated like the passive factored one.
inline Evaluation evaluate_offline(const AgentState& agent, const cannon::Environment& env, const ExperimentConfig& c,
                                   std::uint64_t env_seed, int checkpoint) {
  cps::SurrogateCache cache = agent.cache;
  cps::SelectionSettings sel = c.selection();
  sel.kappa = 0.0;
  sel.allow_tuning = false;
  const std::vector<Eigen::Vector2d> grid = evaluation_grid(c.eval_grid);
  Evaluation ev;
  ev.rewards.reserve(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    Rng rng = make_rng(env_seed, {kEvaluationStream, static_cast<std::uint64_t>(checkpoint), i});
    const cps::Context query{grid[i], VectorXd(0)};
    const VectorXd theta = agent.algorithm == Algorithm::bocps
                               ? cps::select_parameters_bocps(agent.data, query, sel, cache, rng)
                               : cps::select_parameters_fcps(agent.data, query, cannon::reward_interface(), sel, cache, rng);
    const cannon::LaunchParams p = cannon::LaunchParams::from_vector(agent.data.theta_bounds.clamp(theta));
    ev.rewards.push_back(cannon::reward(grid[i], cannon::simulate_shot(env, p), p));
  }
  double sum = 0.0;
  for (double r : ev.rewards) sum += r;
  ev.mean_reward = sum / static_cast<double>(ev.rewards.size());
  return ev;
}

/// Agent for an existing dataset, with hyperparameters estimated once on it
/// (targets re-scored for the last stored target in the factored case).
inline AgentState agent_from_dataset(const cps::ExperienceDataset& data, Algorithm algorithm,
                                     const ExperimentConfig& c, std::uint64_t seed) {
  AgentState agent{algorithm, data, {}};
  if (data.size() < 2) return agent;
  cps::SelectionSettings sel = c.selection();
  sel.schedule.period = 1;
  Rng rng(seed);
  const cps::Context query{data.records.back().original_target, data.records.back().environment_context};
  if (algorithm == Algorithm::bocps) {
    cps::select_parameters_bocps(data, query, sel, agent.cache, rng);
  } else {
    cps::select_parameters_fcps(data, query, cannon::reward_interface(), sel, agent.cache, rng);
  }
  return agent;
}

struct EnvironmentResult {
  int index = 0;
  cannon::Environment environment;
  std::vector<int> episodes;
  std::vector<double> mean_rewards;
  cps::ExperienceDataset dataset;
};

/// Trains and evaluates one agent in environment k.
inline EnvironmentResult run_environment(const ExperimentConfig& c, int k) {
  const std::uint64_t seed = environment_seed(c, k);
  EnvironmentResult r;
  r.index = k;
  r.environment = cannon::generate_environment(seed, c.flat_terrain);
  AgentState agent;
  agent.algorithm = c.algorithm;
  const std::vector<int> cps_at = checkpoints(c);
  std::size_t next = 0;
  for (int t = 0; t <= c.n_episodes; ++t) {
    if (t > 0) run_episode(agent, r.environment, c, seed, t);
    if (next < cps_at.size() && cps_at[next] == t) {
      r.episodes.push_back(t);
      r.mean_rewards.push_back(evaluate_offline(agent, r.environment, c, seed, t).mean_reward);
      ++next;
    }
  }
  r.dataset = std::move(agent.data);
  return r;
}

struct Checkpoint {
  int episode = 0;
  double mean_reward = 0.0;
  double stddev = 0.0;  // across environments (sample standard deviation)
  int n_envs = 0;
};

struct LearningCurve {
  std::string algorithm;
  std::vector<Checkpoint> checkpoints;
};

struct ExperimentResult {
  LearningCurve curve;
  std::vector<EnvironmentResult> environments;
};

inline LearningCurve aggregate(const std::string& algorithm, const std::vector<EnvironmentResult>& envs) {
  LearningCurve curve{algorithm, {}};
  if (envs.empty()) return curve;
  for (std::size_t j = 0; j < envs.front().episodes.size(); ++j) {
    Checkpoint cp;
    cp.episode = envs.front().episodes[j];
    cp.n_envs = static_cast<int>(envs.size());
    double sum = 0.0;
    for (const EnvironmentResult& e : envs) sum += e.mean_rewards[j];
    cp.mean_reward = sum / cp.n_envs;
    double ss = 0.0;
    for (const EnvironmentResult& e : envs) ss += (e.mean_rewards[j] - cp.mean_reward) * (e.mean_rewards[j] - cp.mean_reward);
    cp.stddev = cp.n_envs > 1 ? std::sqrt(ss / (cp.n_envs - 1)) : 0.0;
    curve.checkpoints.push_back(cp);
  }
  return curve;
}

/// Runs fn(k) for k in [0, count) on `workers` threads. Results are
/// position-indexed, so the outcome does not depend on scheduling. A failure
/// is rethrown for the lowest failing index.
template <typename T, typename F>
std::vector<T> parallel_map(int count, int workers, F fn) {
  std::vector<std::optional<T>> slots(static_cast<std::size_t>(count));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(count));
  std::atomic<int> next{0};
  auto work = [&] {
    for (int k = next++; k < count; k = next++) {
      try {
        slots[static_cast<std::size_t>(k)].emplace(fn(k));
      } catch (...) {
        errors[static_cast<std::size_t>(k)] = std::current_exception();
      }
    }
  };
  const int n_threads = std::max(1, std::min(workers, count));
  if (n_threads == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(work);
    for (std::thread& th : pool) th.join();
  }
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::vector<T> out;
  out.reserve(slots.size());
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline void write_curve_csv(std::ostream& os, const LearningCurve& curve) {
  os << "episode,algorithm,mean_reward,stddev,n_envs\n";
  for (const Checkpoint& cp : curve.checkpoints) {
    os << cp.episode << ',' << curve.algorithm << ',' << format_double(cp.mean_reward) << ','
       << format_double(cp.stddev) << ',' << cp.n_envs << '\n';
  }
}

inline std::ofstream open_output(const fs::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error(path.string() + ": cannot open for writing");
  return os;
}

/// Writes curve.csv, config.json, and per-environment raw curves, datasets and environments.
inline void write_outputs(const fs::path& dir, const ExperimentConfig& c, const ExperimentResult& res) {
  std::error_code ec;
  for (const char* sub : {"raw", "datasets", "environments"}) {
    fs::create_directories(dir / sub, ec);
    if (ec) throw std::runtime_error((dir / sub).string() + ": " + ec.message());
  }
  {
    std::ofstream os = open_output(dir / "curve.csv");
    write_curve_csv(os, res.curve);
  }
  open_output(dir / "config.json") << to_json(c).dump(2) << '\n';
  for (const EnvironmentResult& e : res.environments) {
    const std::string name = "env_" + std::to_string(e.index);
    std::ofstream raw = open_output(dir / "raw" / (name + ".jsonl"));
    for (std::size_t j = 0; j < e.episodes.size(); ++j) {
      raw << nlohmann::json{{"episode", e.episodes[j]}, {"mean_reward", e.mean_rewards[j]}}.dump() << '\n';
    }
    cps::save_dataset((dir / "datasets" / (name + ".jsonl")).string(), e.dataset);
    open_output(dir / "environments" / (name + ".json")) << cannon::to_json(e.environment).dump(2) << '\n';
  }
}

inline ExperimentResult run_experiment(const ExperimentConfig& c) {
  c.validate();
  ExperimentResult res;
  res.environments = parallel_map<EnvironmentResult>(c.n_environments, c.workers, [&c](int k) {
    try {
      return run_environment(c, k);
    } catch (const std::exception& e) {
      throw std::runtime_error("environment " + std::to_string(k) + " (seed " + std::to_string(environment_seed(c, k)) +
                               "): " + e.what());
    }
  });
  res.curve = aggregate(to_string(c.algorithm), res.environments);
  if (!c.output_dir.empty()) write_outputs(c.output_dir, c, res);
  return res;
}

/// Mean oracle reward over the evaluation grid in one environment.
inline double oracle_mean(const cannon::Environment& env, int grid) {
  const cannon::OracleSolver solver(env);
  double sum = 0.0;
  const std::vector<Eigen::Vector2d> targets = evaluation_grid(grid);
  for (const Eigen::Vector2d& t : targets) sum += solver.optimal_reward(t);
  return sum / static_cast<double>(targets.size());
}

inline fs::path oracle_cache_path(const ExperimentConfig& c, int k) {
  return fs::path(c.oracle_cache) / ("oracle_" + std::to_string(environment_seed(c, k)) + "_g" +
                                     std::to_string(c.eval_grid) + (c.flat_terrain ? "_flat" : "") + ".json");
}

/// Per-environment oracle means, read from or written to the cache directory when one is set.
inline std::vector<double> compute_oracle_curve(const ExperimentConfig& c) {
  c.validate();
  if (!c.oracle_cache.empty()) {
    std::error_code ec;
    fs::create_directories(c.oracle_cache, ec);
    if (ec) throw std::runtime_error(c.oracle_cache + ": " + ec.message());
  }
  return parallel_map<double>(c.n_environments, c.workers, [&c](int k) {
    const cannon::Environment env = make_environment(c, k);
    if (c.oracle_cache.empty()) return oracle_mean(env, c.eval_grid);
    const fs::path path = oracle_cache_path(c, k);
    if (std::ifstream is(path); is) {
      try {
        const nlohmann::json j = nlohmann::json::parse(is);
        if (cannon::to_json(env) == j.at("environment")) return j.at("oracle_mean").get<double>();
      } catch (const std::exception&) {
        // Unreadable cache entries are recomputed and overwritten.
      }
    }
    const double v = oracle_mean(env, c.eval_grid);
    open_output(path) << nlohmann::json{{"environment", cannon::to_json(env)}, {"oracle_mean", v}}.dump() << '\n';
    return v;
  });
}

}  // namespace fcps::experiment
