#pragma once

// Clipped surrogate objectives and their exact gradients.
//
// All three losses share one token-level core:
//   term(i, t) = min{ ratio * A_i, clip(ratio, 1 +- eps) * A_i },
//   loss = (1/num_groups) sum_groups (1/G) sum_i (1/N) sum_t term(i, t),
// differing only in the ratio's numerator/denominator and in which
// advantage column they read:
//   small loss : ratio = pi_phi(t) / denom, denom chosen by hint mode
//                (treat_as_small: recorded small-old everywhere;
//                 split_ratio: large-old on hint tokens;
//                 skip_hint: hint tokens excluded), advantages from r_tilde;
//   large loss : ratio = pi_theta(t) / recorded small-old (off-policy
//                importance sampling), advantages from the original r;
//   grpo loss  : ratio = pi(t) / its own recorded old values, minus
//                beta * mean k3 KL to a reference policy when beta > 0.
// With beta == 0 the grpo loss runs the identical code path as the small
// loss at alpha == 0 on hint-free rollouts, so the two agree bit-for-bit.
//
// Losses are values of an ASCENT objective: callers apply
// params += eta * grad.  Advantages are treated as constants unless
// differentiate_reward is set, in which case the small loss re-evaluates
// r_tilde(phi) at the current parameters and differentiates through it.

#include "codistill/scoring.hpp"

namespace codistill {

enum class HintMode { treat_as_small, split_ratio, skip_hint };

struct LossGrad {
  double loss = 0.0;
  ParamVector grad;
  double clip_fraction = 0.0;  // share of token terms on the clipped branch
};

struct SmallLossOptions {
  double epsilon = 0.2;
  int N = 8;
  HintMode hint_mode = HintMode::treat_as_small;
  // Differentiate the KD component of r_tilde w.r.t. phi (off by default:
  // advantages are stop-gradients, matching the training estimator).
  bool differentiate_reward = false;
  double alpha = 0.0;                  // used only when differentiating
  KlEstimator estimator = KlEstimator::log_ratio;
  const TokenPolicy* large = nullptr;  // required when differentiating
};

LossGrad small_loss(std::span<const ScoredGroup> groups, const TokenPolicy& phi,
                    const SmallLossOptions& options);

LossGrad large_loss(std::span<const ScoredGroup> groups,
                    const TokenPolicy& theta, double epsilon, int N);

struct GrpoOptions {
  double epsilon = 0.2;
  int N = 8;
  double beta = 0.0;
  const TokenPolicy* ref = nullptr;  // required when beta > 0
  bool use_large_adv = false;        // adv_large column instead of adv_small
};

LossGrad grpo_baseline_loss(std::span<const ScoredGroup> groups,
                            const TokenPolicy& policy,
                            const GrpoOptions& options);

// The co-training report: parameter spaces are disjoint, so the joint loss
// is the plain sum and each gradient block passes through unchanged.
struct LossReport {
  double loss_small = 0.0;
  double loss_large = 0.0;
  ParamVector grad_small;
  ParamVector grad_large;
  double clip_fraction_small = 0.0;
  double clip_fraction_large = 0.0;
  double joint_loss() const { return loss_small + loss_large; }
};

LossReport joint_gradient(LossGrad small, LossGrad large);

}  // namespace codistill
