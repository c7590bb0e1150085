#pragma once

// Training loop.
//
// One iteration: sample B prompts, generate M rollouts per prompt (hinted by
// the large policy while the hint schedule is active), score them, keep the
// top/bottom-G/2 by effective reward, then take one plain gradient-ascent
// step per inner epoch on the configured objective(s).  Modes:
//   codistill            joint update: small surrogate + off-policy large
//   kdrl_frozen_teacher  small surrogate only; the large policy is a frozen
//                        teacher supplying the distillation reward
//   grpo_small           single-policy baseline on the small policy (M == G,
//                        alpha forced to 0, no downsampling)
//   grpo_large           single-policy baseline on the large policy's own
//                        rollouts (M == G)
//   ct                   continued training: grpo_large from a checkpoint
// Every random draw derives from config.seed via tagged streams, so a run is
// a pure function of (config, task, initial policies).

#include <optional>

#include "codistill/objectives.hpp"

namespace codistill {

enum class TrainMode { codistill, grpo_small, grpo_large, kdrl_frozen_teacher, ct };

struct ConfigError : std::invalid_argument {
  std::string field;
  ConfigError(std::string field_name, const std::string& message)
      : std::invalid_argument("config error: field '" + field_name +
                              "': " + message),
        field(std::move(field_name)) {}
};

// Raised when a loss, gradient, or parameter goes non-finite mid-run.
struct NonFiniteError : std::runtime_error {
  int iteration;
  explicit NonFiniteError(int iter)
      : std::runtime_error("non-finite value at iteration " +
                           std::to_string(iter)),
        iteration(iter) {}
};

struct TaskSpec {
  std::string family = "modsum";
  int k = 3;
  int L = 3;
  bool format_rewards = true;

  Task build(int max_len) const;
};

struct TrainConfig {
  double alpha = 1.0;
  int T = 0;
  int H = -1;  // hint iterations; -1 = auto: one epoch, ceil(|prompts|/B)
  int M = 14;
  int G = 8;
  int N = 8;
  double epsilon = 0.2;
  double eta = 2.0;
  int K = 200;
  int B = 4;
  std::uint64_t seed = 1;
  TrainMode mode = TrainMode::codistill;
  AdvantageMode advantage_mode_small = AdvantageMode::mean_only;
  AdvantageMode advantage_mode_large = AdvantageMode::mean_only;
  HintMode hint_mode = HintMode::treat_as_small;
  KlEstimator kl_estimator = KlEstimator::log_ratio;
  int inner_epochs = 1;
  bool downsample = true;
  bool update_large = true;
  bool differentiate_reward = false;
  int eval_every = 1;
  int eval_samples = 256;
  int small_context_order = 1;
  int large_context_order = 2;
  double init_logit_noise = 0.0;
  std::optional<std::string> init_small_checkpoint;
  std::optional<std::string> init_large_checkpoint;
  TaskSpec task;

  // Throws ConfigError naming the offending field.
  void validate() const;
  bool is_baseline_mode() const {
    return mode == TrainMode::grpo_small || mode == TrainMode::grpo_large ||
           mode == TrainMode::ct;
  }
};

struct MetricsRecord {
  int iteration = 0;
  double mean_reward_small = 0.0;       // mean reward of generated rollouts
  double mean_reward_large_eval = 0.0;  // Monte Carlo eval of the large slot
  double frac_zero_accuracy_groups = 0.0;
  double mean_kd_reward = 0.0;
  double exact_kl_small_to_large = 0.0;  // enumeration, prompt-weighted
  double clip_fraction_small = 0.0;
  double clip_fraction_large = 0.0;
  std::int64_t wall_tokens_generated = 0;  // cumulative, training only
};

// Fixed CSV schema (header == field order above, iteration short-named).
extern const char* const kMetricsCsvHeader;
std::string metrics_to_csv(std::span<const MetricsRecord> metrics);
std::vector<MetricsRecord> metrics_from_csv(const std::string& csv);

struct TrainResult {
  TokenPolicy small;
  TokenPolicy large;
  std::vector<MetricsRecord> metrics;
};

// Optional per-iteration hook (step-for-step inspection in tests).
using IterationObserver =
    std::function<void(int iteration, const TokenPolicy& small,
                       const TokenPolicy& large)>;

// Runs K iterations.  In single-policy modes the unused slot is carried
// along untouched (it still serves as the KL/eval reference).  K == 0
// returns the inputs unchanged with empty metrics.
TrainResult train(const TrainConfig& config, const Task& task,
                  TokenPolicy init_small, TokenPolicy init_large,
                  const IterationObserver& observer = {});

// Frozen-teacher distillation: codistill small side with the large policy
// held constant.
TrainResult kdrl_mode(TrainConfig config, const Task& task,
                      TokenPolicy init_small, TokenPolicy frozen_large);

// Standard single-policy training of a large checkpoint on its own rollouts.
TrainResult continued_training(TrainConfig config, const Task& task,
                               TokenPolicy large_checkpoint);

struct EvalResult {
  double mean = 0.0;
  double half_width = 0.0;  // 1.96 * sd / sqrt(n); NaN when degenerate
  bool degenerate = false;  // num_samples < 2
  int samples = 0;
};

EvalResult evaluate(const TokenPolicy& policy, const Task& task,
                    int num_samples, std::mt19937_64& rng);

// Fresh uniform policy (plus optional seeded logit noise) shaped for a task.
TokenPolicy make_task_policy(const Task& task, int context_order,
                             double init_logit_noise = 0.0,
                             std::uint64_t seed = 0,
                             std::uint64_t noise_stream = 0);

}  // namespace codistill
