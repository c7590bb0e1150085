#include "codistill/objectives.hpp"

#include <algorithm>
#include <cmath>

namespace codistill {

namespace {

void check_old_logps(const Rollout& r) {
  if (r.logp_small_old.size() != r.tokens.size() ||
      r.logp_large_old.size() != r.tokens.size())
    throw std::invalid_argument("rollout missing old log-probs");
}

struct SurrogateSpec {
  double epsilon;
  int N;
  HintMode hint_mode;
  bool use_large_adv;
  // Reward differentiation (small loss only).
  bool differentiate_reward = false;
  double alpha = 0.0;
  KlEstimator estimator = KlEstimator::log_ratio;
  const TokenPolicy* large = nullptr;
};

LossGrad clipped_surrogate(std::span<const ScoredGroup> groups,
                           const TokenPolicy& policy,
                           const SurrogateSpec& spec) {
  if (groups.empty()) throw std::invalid_argument("no groups");
  if (!(spec.epsilon > 0.0 && spec.epsilon < 1.0))
    throw std::invalid_argument("epsilon must be in (0, 1)");
  if (spec.N < 1) throw std::invalid_argument("N must be >= 1");
  if (spec.differentiate_reward && spec.large == nullptr)
    throw std::invalid_argument("differentiate_reward needs the large policy");

  LossGrad out;
  out.grad.assign(policy.param_count(), 0.0);
  const double lo = 1.0 - spec.epsilon;
  const double hi = 1.0 + spec.epsilon;
  const double inv_groups = 1.0 / static_cast<double>(groups.size());
  std::size_t terms = 0, clipped = 0;

  for (const auto& group : groups) {
    const std::size_t G = group.rollouts.size();
    if (G < 2) throw std::invalid_argument("group too small");
    const double w_group =
        inv_groups / (static_cast<double>(G) * static_cast<double>(spec.N));

    // Advantages: stored column, or recomputed from r_tilde(phi).
    std::vector<double> adv;
    std::vector<double> kd_coeff;  // d kd_i / d (sum_t grad log pi) scalars
    if (spec.differentiate_reward) {
      // The reward-gradient pass below assumes the mean-only baseline.
      if (group.adv_small_mode != AdvantageMode::mean_only)
        throw std::invalid_argument(
            "differentiate_reward requires mean_only advantages");
      std::vector<double> r_tilde(G);
      kd_coeff.assign(G, 0.0);
      for (std::size_t i = 0; i < G; ++i) {
        const auto& ro = group.rollouts[i];
        const double kd = kd_term(ro, policy, *spec.large, spec.alpha, spec.N,
                                  spec.estimator);
        r_tilde[i] = group.r[i] + kd;
        if (spec.alpha != 0.0) {
          if (spec.estimator == KlEstimator::log_ratio) {
            kd_coeff[i] = -spec.alpha / static_cast<double>(spec.N);
          } else {
            const double delta =
                spec.large->log_prob(ro.prompt, ro.tokens) -
                policy.log_prob(ro.prompt, ro.tokens);
            kd_coeff[i] =
                spec.alpha / static_cast<double>(spec.N) * std::expm1(delta);
          }
        }
      }
      adv = advantages(r_tilde, group.adv_small_mode);
    } else {
      adv = spec.use_large_adv ? group.adv_large : group.adv_small;
      if (adv.size() != G)
        throw std::invalid_argument("advantage column size mismatch");
    }

    // branch_sum[i]: sum over tokens of the active-branch ratio values,
    // needed for the reward-differentiation pass below.
    std::vector<double> branch_sum(G, 0.0);

    for (std::size_t i = 0; i < G; ++i) {
      const auto& ro = group.rollouts[i];
      check_old_logps(ro);
      const auto rows = policy.context_rows(ro.prompt, ro.tokens);
      const auto lp_new = policy.per_token_log_probs(ro.prompt, ro.tokens);
      const double a = adv[i];
      for (std::size_t t = 0; t < ro.tokens.size(); ++t) {
        const bool is_hint = static_cast<int>(t) < ro.hint_len;
        if (is_hint && spec.hint_mode == HintMode::skip_hint) continue;
        const double denom = (is_hint && spec.hint_mode == HintMode::split_ratio)
                                 ? ro.logp_large_old[t]
                                 : ro.logp_small_old[t];
        const double ratio = std::exp(lp_new[t] - denom);
        const double clipped_ratio = std::clamp(ratio, lo, hi);
        const double u = ratio * a;
        const double v = clipped_ratio * a;
        ++terms;
        if (u <= v) {
          out.loss += w_group * u;
          policy.add_scaled_grad_row(rows[t], ro.tokens[t], w_group * ratio * a,
                                     out.grad);
          branch_sum[i] += ratio;
        } else {
          out.loss += w_group * v;
          ++clipped;
          branch_sum[i] += clipped_ratio;
        }
      }
    }

    if (spec.differentiate_reward && spec.alpha != 0.0) {
      // d adv_i = kd_coeff_i * S_i - (1/G) sum_j kd_coeff_j * S_j with
      // S_j = sum_t grad log pi(o_{j,t}); folding the token-branch weights
      // B_i = branch_sum[i] gives coefficient kd_coeff_j * (B_j - mean B)
      // on S_j.
      double mean_b = 0.0;
      for (double b : branch_sum) mean_b += b;
      mean_b /= static_cast<double>(G);
      for (std::size_t j = 0; j < G; ++j) {
        const double q = w_group * kd_coeff[j] * (branch_sum[j] - mean_b);
        if (q == 0.0) continue;
        const auto& ro = group.rollouts[j];
        const auto rows = policy.context_rows(ro.prompt, ro.tokens);
        for (std::size_t t = 0; t < ro.tokens.size(); ++t)
          policy.add_scaled_grad_row(rows[t], ro.tokens[t], q, out.grad);
      }
    }
  }

  out.clip_fraction =
      terms == 0 ? 0.0
                 : static_cast<double>(clipped) / static_cast<double>(terms);
  return out;
}

}  // namespace

LossGrad small_loss(std::span<const ScoredGroup> groups, const TokenPolicy& phi,
                    const SmallLossOptions& options) {
  SurrogateSpec spec;
  spec.epsilon = options.epsilon;
  spec.N = options.N;
  spec.hint_mode = options.hint_mode;
  spec.use_large_adv = false;
  spec.differentiate_reward = options.differentiate_reward;
  spec.alpha = options.alpha;
  spec.estimator = options.estimator;
  spec.large = options.large;
  return clipped_surrogate(groups, phi, spec);
}

LossGrad large_loss(std::span<const ScoredGroup> groups,
                    const TokenPolicy& theta, double epsilon, int N) {
  SurrogateSpec spec;
  spec.epsilon = epsilon;
  spec.N = N;
  // Hint tokens keep the recorded small-old denominator: the large update is
  // importance-sampled against the behaviour distribution attributed to the
  // small policy for every token.
  spec.hint_mode = HintMode::treat_as_small;
  spec.use_large_adv = true;
  return clipped_surrogate(groups, theta, spec);
}

LossGrad grpo_baseline_loss(std::span<const ScoredGroup> groups,
                            const TokenPolicy& policy,
                            const GrpoOptions& options) {
  if (options.beta > 0.0 && options.ref == nullptr)
    throw std::invalid_argument("beta > 0 requires a reference policy");
  if (options.beta < 0.0) throw std::invalid_argument("beta must be >= 0");
  SurrogateSpec spec;
  spec.epsilon = options.epsilon;
  spec.N = options.N;
  spec.hint_mode = HintMode::treat_as_small;
  spec.use_large_adv = options.use_large_adv;
  LossGrad out = clipped_surrogate(groups, policy, spec);
  if (options.beta > 0.0) {
    const double inv_groups = 1.0 / static_cast<double>(groups.size());
    for (const auto& group : groups) {
      const double w =
          options.beta * inv_groups / static_cast<double>(group.rollouts.size());
      for (const auto& ro : group.rollouts) {
        const double delta = options.ref->log_prob(ro.prompt, ro.tokens) -
                             policy.log_prob(ro.prompt, ro.tokens);
        out.loss -= w * (std::expm1(delta) - delta);
        // d/dphi [-(exp(delta) - delta - 1)] = expm1(delta) * S, with
        // S = sum_t grad log pi(o_t).
        const double coeff = w * std::expm1(delta);
        if (coeff != 0.0) {
          const auto rows = policy.context_rows(ro.prompt, ro.tokens);
          for (std::size_t t = 0; t < ro.tokens.size(); ++t)
            policy.add_scaled_grad_row(rows[t], ro.tokens[t], coeff, out.grad);
        }
      }
    }
  }
  return out;
}

LossReport joint_gradient(LossGrad small, LossGrad large) {
  LossReport report;
  report.loss_small = small.loss;
  report.loss_large = large.loss;
  report.grad_small = std::move(small.grad);
  report.grad_large = std::move(large.grad);
  report.clip_fraction_small = small.clip_fraction;
  report.clip_fraction_large = large.clip_fraction;
  return report;
}

}  // namespace codistill
