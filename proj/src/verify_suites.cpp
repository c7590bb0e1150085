#include "codistill/verify_suites.hpp"

#include <cmath>
#include <cstdio>
#include <optional>

#include "codistill/rollout.hpp"

namespace codistill {
namespace verify {

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

Vocab small_vocab(int size) {
  Vocab v;
  v.size = size;
  v.eos_token = 0;
  return v;
}

// Hash-reward task over single-token outcomes whose rewards are not all
// equal, so the exact gradient is nonzero.
Task nonconstant_reward_task(const Vocab& vocab, std::vector<PromptId> prompts,
                             int N, std::uint64_t table_seed) {
  for (std::uint64_t ts = table_seed;; ++ts) {
    Task task = make_hash_reward_task(vocab, prompts, N, ts);
    bool seen_zero = false, seen_one = false;
    for (int t = 0; t < vocab.size; ++t) {
      const double r = task.accuracy_reward(prompts[0], {t});
      (r > 0.0 ? seen_one : seen_zero) = true;
    }
    if (seen_zero && seen_one) return task;
  }
}

}  // namespace

std::string SuiteReport::to_text() const {
  std::string out;
  for (const auto& c : checks) {
    out += "[" + suite + "] " + c.name;
    if (!c.detail.empty()) out += " " + c.detail;
    out += c.pass ? " PASS" : " FAIL";
    out += '\n';
  }
  out += "[" + suite + "] " + (pass() ? "suite PASS" : "suite FAIL") + "\n";
  return out;
}

SuiteReport theorem1_suite(std::uint64_t seed, int instances) {
  SuiteReport report;
  report.suite = "theorem1";
  constexpr double kAlphas[] = {0.5, 1.0, 2.0};
  for (int i = 0; i < instances; ++i) {
    const int V = 2 + (i % 2);
    const int N = 1 + (i % 3);
    const double alpha = kAlphas[(i / 2) % 3];
    const Vocab vocab = small_vocab(V);
    const std::vector<PromptId> prompts{0, 1};
    const PromptId q = i % 2;
    const Task task = make_hash_reward_task(
        vocab, prompts, N,
        derive_seed(seed, {kSeedVerify, static_cast<std::uint64_t>(i), 17}));

    auto rng = make_rng(seed, {kSeedVerify, static_cast<std::uint64_t>(i)});
    TokenPolicy phi(vocab, 1, prompts);
    phi.add_logit_noise(1.0, rng);
    TokenPolicy theta(vocab, 1 + (i % 2), prompts);
    theta.add_logit_noise(1.0, rng);

    const Theorem1Report rep = theorem1_check(phi, theta, task, q, alpha, N);
    SuiteCheck check;
    check.name = "instance " + std::to_string(i);
    check.detail = "vocab=" + std::to_string(V) + " N=" + std::to_string(N) +
                   " alpha=" + num(alpha) +
                   " residual=" + num(rep.residual_inf_norm) + " (tol 1e-8)";
    check.pass = rep.pass;
    report.checks.push_back(std::move(check));
  }
  return report;
}

SuiteReport lemma1_suite(std::uint64_t seed, std::size_t groups) {
  SuiteReport report;
  report.suite = "lemma1";

  const Vocab vocab = small_vocab(3);
  const std::vector<PromptId> prompts{0};
  const int N = 1;

  struct Instance {
    int id;
    int G;
    double alpha;
  };
  const Instance instances[] = {
      {0, 2, 0.0}, {1, 4, 1.0}, {2, 8, 0.0}, {3, 4, 0.5}, {4, 8, 2.0}};

  TokenPolicy control_phi(vocab, 1, prompts), control_theta(vocab, 1, prompts);
  Task control_task = make_hash_reward_task(vocab, prompts, N, 0);
  double control_alpha = 0.0;
  const int control_id = 1;
  int control_G = 4;

  for (const auto& inst : instances) {
    auto rng = make_rng(seed, {kSeedVerify, static_cast<std::uint64_t>(inst.id)});
    TokenPolicy phi(vocab, 1, prompts);
    phi.add_logit_noise(0.8, rng);
    TokenPolicy theta(vocab, 1, prompts);
    theta.add_logit_noise(0.8, rng);
    const Task task = nonconstant_reward_task(
        vocab, prompts, N,
        derive_seed(seed, {kSeedVerify, static_cast<std::uint64_t>(inst.id), 3}));

    const GradientReport rep =
        lemma1_check(phi, theta, task, inst.alpha, inst.G, groups,
                     derive_seed(seed, {static_cast<std::uint64_t>(inst.id)}),
                     /*apply_correction=*/true);
    SuiteCheck check;
    check.name = "instance " + std::to_string(inst.id) +
                 " G=" + std::to_string(inst.G);
    check.detail = "alpha=" + num(inst.alpha) + " groups=" +
                   std::to_string(groups) + " max|z|=" + num(rep.max_abs_z) +
                   " (bound 4)";
    check.pass = rep.max_abs_z <= 4.0;
    report.checks.push_back(std::move(check));

    if (inst.id == control_id) {
      control_phi = phi;
      control_theta = theta;
      control_task = task;
      control_alpha = inst.alpha;
      control_G = inst.G;
    }
  }

  // Positive control: without the G/(G-1) correction every component must
  // come out biased by exactly (G-1)/G, and the z test must fail.
  {
    const GradientReport rep = lemma1_check(
        control_phi, control_theta, control_task, control_alpha, control_G,
        groups, derive_seed(seed, {static_cast<std::uint64_t>(control_G)}),
        /*apply_correction=*/false);
    const double expected_ratio =
        static_cast<double>(control_G - 1) / static_cast<double>(control_G);
    double exact_scale = 0.0;
    for (double g : rep.exact) exact_scale = std::max(exact_scale, std::abs(g));
    bool ratio_ok = exact_scale > 0.0;
    double worst_ratio_err = 0.0;
    for (std::size_t j = 0; j < rep.exact.size(); ++j) {
      if (std::abs(rep.exact[j]) < 0.15 * exact_scale) continue;
      const double ratio = rep.estimated[j] / rep.exact[j];
      worst_ratio_err = std::max(worst_ratio_err,
                                 std::abs(ratio - expected_ratio));
    }
    ratio_ok = ratio_ok && worst_ratio_err <= 0.06;
    SuiteCheck check;
    check.name = "control without G/(G-1)";
    check.detail = "max|z|=" + num(rep.max_abs_z) +
                   " (must exceed 4), component ratio within " +
                   num(worst_ratio_err) + " of " + num(expected_ratio);
    check.pass = rep.max_abs_z > 4.0 && ratio_ok;
    report.checks.push_back(std::move(check));
  }
  return report;
}

SuiteReport fd_suite(std::uint64_t seed, int instances) {
  SuiteReport report;
  report.suite = "fd";
  constexpr double kAlphas[] = {0.0, 0.7, 1.5};
  constexpr HintMode kHintModes[] = {HintMode::treat_as_small,
                                     HintMode::split_ratio,
                                     HintMode::skip_hint};

  for (int i = 0; i < instances; ++i) {
    const int V = 2 + (i % 2);
    const int N = 2 + (i % 2);
    const Vocab vocab = small_vocab(V);
    const std::vector<PromptId> prompts{0, 1};
    const Task task = make_hash_reward_task(
        vocab, prompts, N,
        derive_seed(seed, {kSeedVerify, static_cast<std::uint64_t>(i), 29}));

    auto rng = make_rng(seed, {kSeedVerify, static_cast<std::uint64_t>(i), 1});
    TokenPolicy small(vocab, 1, prompts);
    small.add_logit_noise(1.0, rng);
    TokenPolicy large(vocab, 2, prompts);
    large.add_logit_noise(0.9, rng);

    const double alpha = kAlphas[i % 3];
    const KlEstimator estimator =
        (i % 7) < 4 ? KlEstimator::log_ratio : KlEstimator::k3;
    const bool hinted = (i % 5) == 3;
    const int T = hinted ? 1 : 0;
    const HintMode hint_mode = kHintModes[i % 3];
    const int loss_kind = i % 3;  // 0 small, 1 large, 2 grpo
    const bool diff_reward = loss_kind == 0 && (i % 2) == 0;
    const AdvantageMode adv_small_mode =
        (!diff_reward && (i % 11) == 5) ? AdvantageMode::std_normalized
                                        : AdvantageMode::mean_only;

    std::vector<ScoredGroup> groups;
    for (PromptId q : prompts) {
      auto gen_rng = make_rng(seed, {kSeedVerify, static_cast<std::uint64_t>(i),
                                     static_cast<std::uint64_t>(q + 2)});
      auto rollouts =
          generate_group(task, q, small, large, 4, T, hinted, gen_rng);
      groups.push_back(score_group(task, std::move(rollouts), small, large,
                                   alpha, adv_small_mode,
                                   AdvantageMode::mean_only, estimator));
    }

    // Evaluate gradients slightly off the sampling point so no token ratio
    // sits on a clip kink.
    auto perturb = [&](const TokenPolicy& base, std::uint64_t stream) {
      TokenPolicy p = base;
      auto prng = make_rng(seed, {kSeedVerify, static_cast<std::uint64_t>(i),
                                  stream, 99});
      p.add_logit_noise(0.05, prng);
      return p;
    };

    std::string name;
    ParamVector analytic;
    ParamVector at;
    std::optional<TokenPolicy> eval_policy;
    std::function<double(const ParamVector&)> loss_of;

    if (loss_kind == 0) {
      eval_policy.emplace(perturb(small, 11));
      SmallLossOptions options;
      options.epsilon = 0.2;
      options.N = N;
      options.hint_mode = hint_mode;
      options.differentiate_reward = diff_reward;
      options.alpha = alpha;
      options.estimator = estimator;
      options.large = &large;
      analytic = small_loss(groups, *eval_policy, options).grad;
      at = eval_policy->parameters();
      const TokenPolicy* base = &*eval_policy;
      loss_of = [&groups, base, options](const ParamVector& params) {
        TokenPolicy p = *base;
        p.set_parameters(params);
        return small_loss(groups, p, options).loss;
      };
      name = "small_loss";
      if (diff_reward) name += "+diff_reward";
    } else if (loss_kind == 1) {
      eval_policy.emplace(perturb(large, 13));
      analytic = large_loss(groups, *eval_policy, 0.2, N).grad;
      at = eval_policy->parameters();
      const TokenPolicy* base = &*eval_policy;
      loss_of = [&groups, base, N](const ParamVector& params) {
        TokenPolicy p = *base;
        p.set_parameters(params);
        return large_loss(groups, p, 0.2, N).loss;
      };
      name = "large_loss";
    } else {
      eval_policy.emplace(perturb(small, 17));
      GrpoOptions options;
      options.epsilon = 0.2;
      options.N = N;
      options.beta = (i % 6) == 2 ? 0.1 : 0.0;
      options.ref = &large;
      options.use_large_adv = (i % 4) == 1;
      analytic = grpo_baseline_loss(groups, *eval_policy, options).grad;
      at = eval_policy->parameters();
      const TokenPolicy* base = &*eval_policy;
      loss_of = [&groups, base, options](const ParamVector& params) {
        TokenPolicy p = *base;
        p.set_parameters(params);
        return grpo_baseline_loss(groups, p, options).loss;
      };
      name = "grpo_baseline_loss";
      if (options.beta > 0.0) name += "+beta";
    }

    const ParamVector fd = finite_difference_gradient(loss_of, at);
    const double rel = l2_rel_error(analytic, fd);
    SuiteCheck check;
    check.name = "instance " + std::to_string(i) + " " + name;
    check.detail = "rel_err=" + num(rel) + " (tol 1e-5)";
    check.pass = rel <= 1e-5;
    report.checks.push_back(std::move(check));
  }
  return report;
}

}  // namespace verify
}  // namespace codistill
