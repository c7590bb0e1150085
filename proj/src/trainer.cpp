#include "codistill/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>

#include "codistill/verify.hpp"

namespace codistill {

Task TaskSpec::build(int max_len) const {
  if (family == "modsum") return make_modsum_task(k, L, max_len, format_rewards);
  throw ConfigError("task.family", "unknown family '" + family + "'");
}

void TrainConfig::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha))
    throw ConfigError("alpha", "must be finite and >= 0");
  if (N < 1) throw ConfigError("N", "must be >= 1");
  if (T < 0) throw ConfigError("T", "must be >= 0");
  if (T >= N) throw ConfigError("T", "must be < N");
  if (K < 0) throw ConfigError("K", "must be >= 0");
  if (H < -1) throw ConfigError("H", "must be >= 0, or -1 for auto");
  if (H > K) throw ConfigError("H", "must be <= K");
  if (G < 2) throw ConfigError("G", "must be >= 2");
  if (G % 2 != 0) throw ConfigError("G", "must be even");
  if (M < G) throw ConfigError("M", "must be >= G");
  if (!(epsilon > 0.0 && epsilon < 1.0))
    throw ConfigError("epsilon", "must be in (0, 1)");
  if (!(eta > 0.0) || !std::isfinite(eta))
    throw ConfigError("eta", "must be finite and > 0");
  if (B < 1) throw ConfigError("B", "must be >= 1");
  if (inner_epochs < 1) throw ConfigError("inner_epochs", "must be >= 1");
  if (eval_every < 1) throw ConfigError("eval_every", "must be >= 1");
  if (eval_samples < 1) throw ConfigError("eval_samples", "must be >= 1");
  if (small_context_order < 0)
    throw ConfigError("small_context_order", "must be >= 0");
  if (large_context_order < 0)
    throw ConfigError("large_context_order", "must be >= 0");
  if (!(init_logit_noise >= 0.0))
    throw ConfigError("init_logit_noise", "must be >= 0");
  if (is_baseline_mode() && M != G)
    throw ConfigError("M", "single-policy baseline modes require M == G");
  if (task.family.empty()) throw ConfigError("task.family", "must be set");
  if (task.family == "modsum") {
    if (task.k < 2) throw ConfigError("task.k", "must be >= 2");
    if (task.L < 1) throw ConfigError("task.L", "must be >= 1");
  }
}

// ---------------------------------------------------------------------------
// Metrics CSV
// ---------------------------------------------------------------------------

const char* const kMetricsCsvHeader =
    "iter,mean_reward_small,mean_reward_large_eval,frac_zero_accuracy_groups,"
    "mean_kd_reward,exact_kl_small_to_large,clip_fraction_small,"
    "clip_fraction_large,wall_tokens_generated";

namespace {

template <typename T>
T parse_number(std::string_view s) {
  T v{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw std::runtime_error("bad numeric field '" + std::string(s) + "'");
  return v;
}

double parse_double(std::string_view s) { return parse_number<double>(s); }

}  // namespace

std::string metrics_to_csv(std::span<const MetricsRecord> metrics) {
  std::string out = kMetricsCsvHeader;
  out += '\n';
  for (const auto& m : metrics) {
    out += std::to_string(m.iteration);
    out += ',';
    out += format_double(m.mean_reward_small);
    out += ',';
    out += format_double(m.mean_reward_large_eval);
    out += ',';
    out += format_double(m.frac_zero_accuracy_groups);
    out += ',';
    out += format_double(m.mean_kd_reward);
    out += ',';
    out += format_double(m.exact_kl_small_to_large);
    out += ',';
    out += format_double(m.clip_fraction_small);
    out += ',';
    out += format_double(m.clip_fraction_large);
    out += ',';
    out += std::to_string(m.wall_tokens_generated);
    out += '\n';
  }
  return out;
}

std::vector<MetricsRecord> metrics_from_csv(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || line != kMetricsCsvHeader)
    throw std::runtime_error("unexpected metrics CSV header");
  std::vector<MetricsRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string_view> fields;
    std::string_view rest = line;
    while (true) {
      const auto pos = rest.find(',');
      if (pos == std::string_view::npos) {
        fields.push_back(rest);
        break;
      }
      fields.push_back(rest.substr(0, pos));
      rest = rest.substr(pos + 1);
    }
    if (fields.size() != 9)
      throw std::runtime_error("bad metrics CSV row: " + line);
    MetricsRecord m;
    m.iteration = parse_number<int>(fields[0]);
    m.mean_reward_small = parse_double(fields[1]);
    m.mean_reward_large_eval = parse_double(fields[2]);
    m.frac_zero_accuracy_groups = parse_double(fields[3]);
    m.mean_kd_reward = parse_double(fields[4]);
    m.exact_kl_small_to_large = parse_double(fields[5]);
    m.clip_fraction_small = parse_double(fields[6]);
    m.clip_fraction_large = parse_double(fields[7]);
    m.wall_tokens_generated = parse_number<std::int64_t>(fields[8]);
    out.push_back(m);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Policies and evaluation
// ---------------------------------------------------------------------------

TokenPolicy make_task_policy(const Task& task, int context_order,
                             double init_logit_noise, std::uint64_t seed,
                             std::uint64_t noise_stream) {
  TokenPolicy policy(task.vocab, context_order, task.prompts);
  if (init_logit_noise > 0.0) {
    auto rng = make_rng(seed, {kSeedInit, noise_stream});
    policy.add_logit_noise(init_logit_noise, rng);
  }
  return policy;
}

EvalResult evaluate(const TokenPolicy& policy, const Task& task,
                    int num_samples, std::mt19937_64& rng) {
  if (num_samples < 1) throw std::invalid_argument("num_samples must be >= 1");
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < num_samples; ++i) {
    const PromptId q = sample_prompt_batch(task, 1, rng)[0];
    const TokenSequence tokens = policy.sample(q, {}, task.max_len, rng);
    const double r = task.reward(q, tokens);
    sum += r;
    sumsq += r * r;
  }
  EvalResult res;
  res.samples = num_samples;
  const double n = static_cast<double>(num_samples);
  res.mean = sum / n;
  if (num_samples < 2) {
    res.degenerate = true;
    res.half_width = std::numeric_limits<double>::quiet_NaN();
  } else {
    const double var = std::max(0.0, (sumsq - n * res.mean * res.mean) / (n - 1.0));
    res.half_width = 1.96 * std::sqrt(var / n);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

namespace {

void check_policy_matches_task(const TokenPolicy& policy, const Task& task,
                               const char* which) {
  if (!(policy.vocab() == task.vocab))
    throw std::invalid_argument(std::string(which) +
                                " policy vocab does not match task");
  if (policy.prompts() != task.prompts)
    throw std::invalid_argument(std::string(which) +
                                " policy prompt set does not match task");
}

void ensure_finite(double x, int iteration) {
  if (!std::isfinite(x)) throw NonFiniteError(iteration);
}

void apply_ascent_step(TokenPolicy& policy, const ParamVector& grad, double eta,
                       int iteration) {
  ParamVector params = policy.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    ensure_finite(grad[i], iteration);
    params[i] += eta * grad[i];
    ensure_finite(params[i], iteration);
  }
  policy.set_parameters(std::move(params));
}

}  // namespace

TrainResult train(const TrainConfig& config, const Task& task,
                  TokenPolicy init_small, TokenPolicy init_large,
                  const IterationObserver& observer) {
  config.validate();
  task.validate();
  if (task.max_len != config.N)
    throw ConfigError("N", "task max_len differs from config N");
  check_policy_matches_task(init_small, task, "small");
  check_policy_matches_task(init_large, task, "large");

  const bool uses_kd = config.mode == TrainMode::codistill ||
                       config.mode == TrainMode::kdrl_frozen_teacher;
  const bool trains_large =
      (config.mode == TrainMode::codistill && config.update_large) ||
      config.mode == TrainMode::grpo_large || config.mode == TrainMode::ct;
  const bool large_generates = config.mode == TrainMode::grpo_large ||
                               config.mode == TrainMode::ct;
  const double alpha_eff = uses_kd ? config.alpha : 0.0;
  // Auto hint horizon: one pass over the prompt set ("first epoch").
  const int hint_horizon =
      config.H >= 0
          ? config.H
          : std::min(config.K,
                     static_cast<int>((task.prompts.size() + config.B - 1) /
                                      static_cast<std::size_t>(config.B)));

  TrainResult result{std::move(init_small), std::move(init_large), {}};
  result.metrics.reserve(static_cast<std::size_t>(config.K));

  SmallLossOptions small_options;
  small_options.epsilon = config.epsilon;
  small_options.N = config.N;
  small_options.hint_mode = config.hint_mode;
  small_options.differentiate_reward = config.differentiate_reward;
  small_options.alpha = alpha_eff;
  small_options.estimator = config.kl_estimator;

  GrpoOptions grpo_options;
  grpo_options.epsilon = config.epsilon;
  grpo_options.N = config.N;
  grpo_options.use_large_adv = large_generates;

  std::int64_t wall_tokens = 0;
  double last_large_eval = 0.0;
  double last_kl = 0.0;

  for (int k = 1; k <= config.K; ++k) {
    const bool hinting =
        uses_kd && config.T > 0 && hint_schedule(k, hint_horizon);

    auto batch_rng = make_rng(config.seed, {kSeedBatch, static_cast<std::uint64_t>(k)});
    const auto prompts = sample_prompt_batch(task, config.B, batch_rng);

    // Generation.  The group for prompt slot b owns a derived seed, so the
    // batch may be generated in any lane order with identical results.
    std::vector<std::vector<Rollout>> raw(prompts.size());
    parallel_for(prompts.size(), [&](std::size_t b) {
      auto rng = make_rng(config.seed, {kSeedGenerate,
                                        static_cast<std::uint64_t>(k),
                                        static_cast<std::uint64_t>(b)});
      const TokenPolicy& source = large_generates ? result.large : result.small;
      raw[b] = generate_group(task, prompts[b], source, result.large,
                              config.M, config.T, hinting, rng);
    });

    // Scoring with the current policies.
    const TokenPolicy& kd_small = large_generates ? result.large : result.small;
    const TokenPolicy& kd_large = result.large;
    std::vector<ScoredGroup> groups;
    groups.reserve(raw.size());
    double reward_sum = 0.0, kd_sum = 0.0;
    int zero_groups = 0;
    std::int64_t batch_tokens = 0;
    for (auto& rollouts : raw) {
      bool any_accuracy = false;
      for (const auto& ro : rollouts) {
        batch_tokens += static_cast<std::int64_t>(ro.tokens.size());
        if (task.accuracy_reward(ro.prompt, ro.tokens) > 0.0)
          any_accuracy = true;
      }
      if (!any_accuracy) ++zero_groups;
      ScoredGroup g = score_group(task, std::move(rollouts), kd_small, kd_large,
                                  alpha_eff, config.advantage_mode_small,
                                  config.advantage_mode_large,
                                  config.kl_estimator);
      for (double r : g.r) reward_sum += r;
      for (double kd : g.kd_terms) kd_sum += kd;
      groups.push_back(std::move(g));
    }
    wall_tokens += batch_tokens;

    if (!config.is_baseline_mode() && config.downsample)
      for (auto& g : groups) g = downsample(g, config.G);

    // Inner updates.
    double clip_small = 0.0, clip_large = 0.0;
    for (int e = 0; e < config.inner_epochs; ++e) {
      if (config.mode == TrainMode::codistill ||
          config.mode == TrainMode::kdrl_frozen_teacher) {
        small_options.large = &result.large;
        const LossGrad lg_small = small_loss(groups, result.small, small_options);
        ensure_finite(lg_small.loss, k);
        clip_small = lg_small.clip_fraction;
        if (trains_large) {
          const LossGrad lg_large =
              large_loss(groups, result.large, config.epsilon, config.N);
          ensure_finite(lg_large.loss, k);
          clip_large = lg_large.clip_fraction;
          const LossReport report = joint_gradient(lg_small, lg_large);
          apply_ascent_step(result.small, report.grad_small, config.eta, k);
          apply_ascent_step(result.large, report.grad_large, config.eta, k);
        } else {
          apply_ascent_step(result.small, lg_small.grad, config.eta, k);
        }
      } else {
        TokenPolicy& trained = large_generates ? result.large : result.small;
        const LossGrad lg = grpo_baseline_loss(groups, trained, grpo_options);
        ensure_finite(lg.loss, k);
        if (large_generates)
          clip_large = lg.clip_fraction;
        else
          clip_small = lg.clip_fraction;
        apply_ascent_step(trained, lg.grad, config.eta, k);
      }
    }

    // Metrics.
    const std::size_t rollout_count = static_cast<std::size_t>(config.M) *
                                      prompts.size();
    MetricsRecord m;
    m.iteration = k;
    m.mean_reward_small = reward_sum / static_cast<double>(rollout_count);
    m.frac_zero_accuracy_groups =
        static_cast<double>(zero_groups) / static_cast<double>(prompts.size());
    m.mean_kd_reward = kd_sum / static_cast<double>(rollout_count);
    m.clip_fraction_small = clip_small;
    m.clip_fraction_large = clip_large;
    m.wall_tokens_generated = wall_tokens;
    if (k == 1 || k % config.eval_every == 0 || k == config.K) {
      auto eval_rng = make_rng(config.seed, {kSeedEvalLarge,
                                             static_cast<std::uint64_t>(k)});
      last_large_eval =
          evaluate(result.large, task, config.eval_samples, eval_rng).mean;
      // Enumeration KL only where a distinct student/teacher pair exists.
      last_kl = large_generates
                    ? 0.0
                    : verify::exact_sequence_kl(result.small, result.large,
                                                task, config.N);
    }
    m.mean_reward_large_eval = last_large_eval;
    m.exact_kl_small_to_large = last_kl;
    result.metrics.push_back(m);

    if (observer) observer(k, result.small, result.large);
  }
  return result;
}

TrainResult kdrl_mode(TrainConfig config, const Task& task,
                      TokenPolicy init_small, TokenPolicy frozen_large) {
  config.mode = TrainMode::kdrl_frozen_teacher;
  return train(config, task, std::move(init_small), std::move(frozen_large));
}

TrainResult continued_training(TrainConfig config, const Task& task,
                               TokenPolicy large_checkpoint) {
  config.mode = TrainMode::ct;
  config.M = config.G;
  TokenPolicy placeholder_small =
      make_task_policy(task, config.small_context_order);
  return train(config, task, std::move(placeholder_small),
               std::move(large_checkpoint));
}

}  // namespace codistill
