// codistill command-line front end.
//
//   codistill train   --config cfg.json --out run_dir [--seed S]
//   codistill eval    --checkpoint policy.json --config cfg.json
//                     [--samples N] [--seed S]
//   codistill verify  [--which all|lemma1|theorem1|fd] [--seed S]
//                     [--groups N] [--instances N]
//   codistill compare --metric NAME run_dir [run_dir ...]
//   codistill ablate  --config cfg.json --out dir [--seed S]
//
// Exit codes: 0 success / all checks pass, 1 runtime failure or failed
// verification, 2 invalid config or usage (message names the field),
// 3 non-finite value during training (message names the iteration).

#include <cstdio>
#include <iostream>

#include <CLI/CLI.hpp>

#include "codistill/experiment.hpp"
#include "codistill/verify_suites.hpp"

namespace {

using namespace codistill;

void print_final_metrics(const TrainResult& result) {
  if (result.metrics.empty()) {
    std::cout << "no iterations run (K = 0)\n";
    return;
  }
  const MetricsRecord& m = result.metrics.back();
  std::cout << "final iteration " << m.iteration
            << ": mean_reward_small=" << format_double(m.mean_reward_small)
            << " mean_reward_large_eval="
            << format_double(m.mean_reward_large_eval)
            << " exact_kl_small_to_large="
            << format_double(m.exact_kl_small_to_large)
            << " frac_zero_accuracy_groups="
            << format_double(m.frac_zero_accuracy_groups) << "\n";
}

int cmd_train(const std::string& config_path, const std::string& out_dir,
              const std::optional<std::uint64_t>& seed_override) {
  TrainConfig config = load_config_file(config_path);
  if (seed_override) config.seed = *seed_override;
  const TrainResult result = run_train(config, out_dir);
  std::cout << "run complete: " << out_dir << "\n";
  print_final_metrics(result);
  return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& config_path,
             std::optional<int> samples,
             const std::optional<std::uint64_t>& seed_override) {
  TrainConfig config = load_config_file(config_path);
  if (seed_override) config.seed = *seed_override;
  config.validate();
  const Task task = config.task.build(config.N);
  const TokenPolicy policy = load_policy_file(checkpoint_path);
  const int n = samples.value_or(config.eval_samples);
  auto rng = make_rng(config.seed, {kSeedEvalSmall, 0});
  const EvalResult result = evaluate(policy, task, n, rng);
  std::cout << "mean=" << format_double(result.mean)
            << " half_width=" << format_double(result.half_width)
            << " samples=" << result.samples << "\n";
  return 0;
}

int cmd_verify(const std::string& which, std::uint64_t seed,
               std::size_t groups, int instances) {
  bool all_pass = true;
  const bool run_all = which == "all";
  if (run_all || which == "theorem1") {
    const auto report = verify::theorem1_suite(seed, instances > 0 ? instances : 20);
    std::cout << report.to_text();
    all_pass = all_pass && report.pass();
  }
  if (run_all || which == "lemma1") {
    const auto report = verify::lemma1_suite(seed, groups);
    std::cout << report.to_text();
    all_pass = all_pass && report.pass();
  }
  if (run_all || which == "fd") {
    const auto report = verify::fd_suite(seed, instances > 0 ? instances : 50);
    std::cout << report.to_text();
    all_pass = all_pass && report.pass();
  }
  std::cout << (all_pass ? "verify: ALL CHECKS PASS\n"
                         : "verify: CHECKS FAILED\n");
  return all_pass ? 0 : 1;
}

int cmd_compare(const std::string& metric,
                const std::vector<std::string>& run_dirs) {
  std::vector<std::filesystem::path> dirs(run_dirs.begin(), run_dirs.end());
  const CompareReport report = compare_runs(dirs, metric);
  std::cout << report.to_csv();
  return 0;
}

// The standard ablation sweep off one base config: no distillation reward +
// no downsampling, hints kept on for the whole run, hint tokens dropped from
// the surrogate, and the k3 estimator inside the reward.
int cmd_ablate(const std::string& config_path, const std::string& out_dir,
               const std::optional<std::uint64_t>& seed_override) {
  TrainConfig base = load_config_file(config_path);
  if (seed_override) base.seed = *seed_override;

  struct Variant {
    const char* name;
    std::function<void(TrainConfig&)> tweak;
  };
  const Variant variants[] = {
      {"base", [](TrainConfig&) {}},
      {"alpha0_nodownsample",
       [](TrainConfig& c) {
         c.alpha = 0.0;
         c.downsample = false;
       }},
      {"hints_forever", [](TrainConfig& c) { c.H = c.K; }},
      {"skip_hint", [](TrainConfig& c) { c.hint_mode = HintMode::skip_hint; }},
      {"k3_reward", [](TrainConfig& c) { c.kl_estimator = KlEstimator::k3; }},
  };

  for (const auto& v : variants) {
    TrainConfig config = base;
    v.tweak(config);
    const std::filesystem::path dir = std::filesystem::path(out_dir) / v.name;
    std::cout << "== " << v.name << " -> " << dir.string() << "\n";
    const TrainResult result = run_train(config, dir);
    print_final_metrics(result);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"co-distillation RL trainer and verification harness"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint_path, metric;
  std::string which = "all";
  std::optional<std::uint64_t> seed_override;
  std::optional<int> samples;
  std::uint64_t verify_seed = 7;
  std::size_t groups = 100000;
  int instances = 0;
  std::vector<std::string> run_dirs;

  CLI::App* train = app.add_subcommand("train", "run one training experiment");
  train->add_option("--config", config_path, "config JSON file")->required();
  train->add_option("--out", out_dir, "output run directory")->required();
  train->add_option("--seed", seed_override, "override the config seed");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a policy checkpoint");
  eval->add_option("--checkpoint", checkpoint_path, "policy JSON checkpoint")
      ->required();
  eval->add_option("--config", config_path, "config JSON file (task + N)")
      ->required();
  eval->add_option("--samples", samples, "Monte Carlo sample count");
  eval->add_option("--seed", seed_override, "evaluation seed");

  CLI::App* verify = app.add_subcommand("verify", "run exactness checks");
  verify->add_option("--which", which, "all | lemma1 | theorem1 | fd")
      ->check(CLI::IsMember({"all", "lemma1", "theorem1", "fd"}));
  verify->add_option("--seed", verify_seed, "instance seed");
  verify->add_option("--groups", groups, "sampled groups for lemma1");
  verify->add_option("--instances", instances,
                     "instance count for theorem1/fd (0 = default)");

  CLI::App* compare = app.add_subcommand("compare", "summarize runs as CSV");
  compare->add_option("--metric", metric, "metrics CSV column")->required();
  compare->add_option("dirs", run_dirs, "run directories")->required();

  CLI::App* ablate =
      app.add_subcommand("ablate", "run the standard ablation sweep");
  ablate->add_option("--config", config_path, "base config JSON file")
      ->required();
  ablate->add_option("--out", out_dir, "parent output directory")->required();
  ablate->add_option("--seed", seed_override, "override the config seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // usage problems are exit 2, --help is 0
  }

  try {
    if (train->parsed()) return cmd_train(config_path, out_dir, seed_override);
    if (eval->parsed())
      return cmd_eval(checkpoint_path, config_path, samples, seed_override);
    if (verify->parsed())
      return cmd_verify(which, verify_seed, groups, instances);
    if (compare->parsed()) return cmd_compare(metric, run_dirs);
    if (ablate->parsed()) return cmd_ablate(config_path, out_dir, seed_override);
  } catch (const ConfigError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const NonFiniteError& e) {
    std::cerr << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
