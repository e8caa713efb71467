#include <chrono>
#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "fcps/experiment.hpp"

using namespace fcps;
using namespace fcps::experiment;

namespace {

struct Overrides {
  std::string config;
  std::string algo;
  int episodes = 0;
  int envs = 0;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool flat = false;
  int workers = 0;
};

ExperimentConfig resolve(const Overrides& o) {
  ExperimentConfig c = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  if (!o.algo.empty()) c.algorithm = parse_algorithm(o.algo);
  if (o.episodes > 0) c.n_episodes = o.episodes;
  if (o.envs > 0) c.n_environments = o.envs;
  if (o.seed) c.master_seed = *o.seed;
  if (!o.out.empty()) c.output_dir = o.out;
  if (o.flat) c.flat_terrain = true;
  if (o.workers > 0) c.workers = o.workers;
  c.validate();
  return c;
}

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "JSON experiment config")->check(CLI::ExistingFile);
  cmd->add_option("--envs", o.envs, "number of environments");
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_flag("--flat-terrain", o.flat, "use flat terrain in every environment");
  cmd->add_option("--workers", o.workers, "worker threads");
}

int run(const Overrides& o) {
  const ExperimentConfig c = resolve(o);
  const auto start = std::chrono::steady_clock::now();
  const ExperimentResult res = run_experiment(c);
  write_curve_csv(std::cout, res.curve);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::fprintf(stderr, "%s: %d environments x %d episodes in %.1f s\n", to_string(c.algorithm).c_str(),
               c.n_environments, c.n_episodes, secs);
  if (!c.output_dir.empty()) std::fprintf(stderr, "outputs written to %s\n", c.output_dir.c_str());
  return 0;
}

int oracle(const Overrides& o) {
  const ExperimentConfig c = resolve(o);
  const std::vector<double> means = compute_oracle_curve(c);
  std::cout << "environment,seed,oracle_mean\n";
  double sum = 0.0;
  for (int k = 0; k < c.n_environments; ++k) {
    std::cout << k << ',' << environment_seed(c, k) << ',' << format_double(means[static_cast<std::size_t>(k)]) << '\n';
    sum += means[static_cast<std::size_t>(k)];
  }
  std::fprintf(stderr, "mean over environments: %s\n", format_double(sum / c.n_environments).c_str());
  return 0;
}

int eval(const Overrides& o, const std::string& dataset_path, const std::string& env_path, std::uint64_t eval_seed) {
  const ExperimentConfig c = resolve(o);
  std::ifstream is(env_path);
  if (!is) throw std::runtime_error(env_path + ": cannot open environment");
  cannon::Environment env;
  try {
    env = cannon::environment_from_json(nlohmann::json::parse(is));
  } catch (const std::exception& e) {
    throw std::runtime_error(env_path + ": " + e.what());
  }
  const cps::ExperienceDataset data = cps::load_dataset(dataset_path, cannon::empty_dataset());
  const AgentState agent = agent_from_dataset(data, c.algorithm, c, eval_seed);
  const Evaluation ev = evaluate_offline(agent, env, c, eval_seed, static_cast<int>(data.size()));
  std::cout << "records," << data.size() << "\nmean_reward," << format_double(ev.mean_reward) << "\noracle_mean,"
            << format_double(oracle_mean(env, c.eval_grid)) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contextual policy search experiments on the cannon benchmark"};
  app.require_subcommand(1);

  Overrides run_opts;
  CLI::App* run_cmd = app.add_subcommand("run", "train agents and write learning curves");
  add_common(run_cmd, run_opts);
  run_cmd->add_option("--algo", run_opts.algo, "bocps, fcps or fcps-active");
  run_cmd->add_option("--episodes", run_opts.episodes, "episodes per environment");
  run_cmd->add_option("--out", run_opts.out, "output directory");

  Overrides oracle_opts;
  CLI::App* oracle_cmd = app.add_subcommand("oracle", "per-environment optimal mean reward on the evaluation grid");
  add_common(oracle_cmd, oracle_opts);

  Overrides eval_opts;
  std::string dataset_path, env_path;
  std::uint64_t eval_seed = 0;
  CLI::App* eval_cmd = app.add_subcommand("eval", "score a stored dataset offline");
  eval_cmd->add_option("--config", eval_opts.config, "JSON experiment config")->check(CLI::ExistingFile);
  eval_cmd->add_option("--dataset", dataset_path, "dataset (JSON lines)")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--env", env_path, "environment JSON")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--algo", eval_opts.algo, "selector used for evaluation (default fcps)");
  eval_cmd->add_option("--seed", eval_seed, "evaluation seed");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run_cmd) return run(run_opts);
    if (*oracle_cmd) return oracle(oracle_opts);
    if (*eval_cmd) return eval(eval_opts, dataset_path, env_path, eval_seed);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
