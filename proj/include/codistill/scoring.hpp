#pragma once

// Group scoring: effective rewards, advantages, downsampling.
//
// For each rollout i of a group the effective reward is
//   r_tilde_i = r_i + kd_i,
// where the distillation term kd_i is, with the default log_ratio estimator,
//   kd_i = (alpha / N) * sum_t [log pi_large(o_t) - log pi_small(o_t)],
// i.e. alpha/N times minus the naive per-sequence estimate of
// KL(small || large).  The k3 estimator variant replaces that estimate with
// exp(D) - D - 1 (D = sequence log ratio large/small), which is nonnegative
// and also unbiased; it exists as a diagnostics/ablation path because using
// it inside the reward destabilizes training.
//
// Advantages: mean_only subtracts the group mean; std_normalized divides by
// the population std as well (zeroed when the std collapses below 1e-8).
//
// Downsampling keeps the G/2 highest and G/2 lowest rollouts by r_tilde
// (ties resolved toward lower index) and recomputes advantages on the
// survivors.  For two-valued score vectors this selection maximizes the
// retained population variance over all size-G subsets.

#include "codistill/rollout.hpp"

namespace codistill {

enum class AdvantageMode { mean_only, std_normalized };
enum class KlEstimator { log_ratio, k3 };

struct ScoredGroup {
  PromptId prompt = 0;
  std::vector<Rollout> rollouts;
  std::vector<double> r;         // original task rewards
  std::vector<double> kd_terms;  // distillation reward components
  std::vector<double> r_tilde;   // r + kd_terms
  std::vector<double> adv_small; // from r_tilde
  std::vector<double> adv_large; // from r
  AdvantageMode adv_small_mode = AdvantageMode::mean_only;
  AdvantageMode adv_large_mode = AdvantageMode::mean_only;
};

// Distillation reward (log_ratio form) for one rollout under the current
// policies.  Sums over the actually emitted tokens; divides by N (the cap),
// not the realized length.
double kd_reward(const Rollout& rollout, const TokenPolicy& small,
                 const TokenPolicy& large, double alpha, int N);

// Nonnegative KL sample: exp(D) - D - 1 with
// D = log pi_ref(o) - log pi_small(o) over the whole sequence.
double k3_kl_estimate(const Rollout& rollout, const TokenPolicy& small,
                      const TokenPolicy& ref);

// KD term under either estimator (k3 enters negatively: a KL penalty).
double kd_term(const Rollout& rollout, const TokenPolicy& small,
               const TokenPolicy& large, double alpha, int N,
               KlEstimator estimator);

// Group-relative advantages.  Throws "group too small" for fewer than two
// rewards.  Population (1/G) variance inside std_normalized.
std::vector<double> advantages(std::span<const double> rewards,
                               AdvantageMode mode);

// Scores a freshly generated group with the current policies.
ScoredGroup score_group(const Task& task, std::vector<Rollout> rollouts,
                        const TokenPolicy& small, const TokenPolicy& large,
                        double alpha, AdvantageMode adv_small_mode,
                        AdvantageMode adv_large_mode,
                        KlEstimator estimator = KlEstimator::log_ratio);

// Indices kept by the top/bottom-G/2 rule, in ascending order.
std::vector<std::size_t> downsample_indices(std::span<const double> scores,
                                            int G);

// M -> G selection by r_tilde; advantages recomputed on the survivors.
ScoredGroup downsample(const ScoredGroup& group, int G);

}  // namespace codistill
