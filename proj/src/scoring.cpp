#include "codistill/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace codistill {

double kd_reward(const Rollout& rollout, const TokenPolicy& small,
                 const TokenPolicy& large, double alpha, int N) {
  if (N < 1) throw std::invalid_argument("N must be >= 1");
  const double lp_small = small.log_prob(rollout.prompt, rollout.tokens);
  const double lp_large = large.log_prob(rollout.prompt, rollout.tokens);
  return alpha / static_cast<double>(N) * (lp_large - lp_small);
}

double k3_kl_estimate(const Rollout& rollout, const TokenPolicy& small,
                      const TokenPolicy& ref) {
  const double delta = ref.log_prob(rollout.prompt, rollout.tokens) -
                       small.log_prob(rollout.prompt, rollout.tokens);
  // expm1 keeps precision near delta == 0; the clamp absorbs the last-ulp
  // cancellation so the estimate is never negative.
  return std::max(0.0, std::expm1(delta) - delta);
}

double kd_term(const Rollout& rollout, const TokenPolicy& small,
               const TokenPolicy& large, double alpha, int N,
               KlEstimator estimator) {
  if (alpha == 0.0) return 0.0;
  if (estimator == KlEstimator::log_ratio)
    return kd_reward(rollout, small, large, alpha, N);
  return -alpha / static_cast<double>(N) * k3_kl_estimate(rollout, small, large);
}

std::vector<double> advantages(std::span<const double> rewards,
                               AdvantageMode mode) {
  if (rewards.size() < 2) throw std::invalid_argument("group too small");
  const double mean =
      std::accumulate(rewards.begin(), rewards.end(), 0.0) /
      static_cast<double>(rewards.size());
  std::vector<double> adv(rewards.size());
  for (std::size_t i = 0; i < rewards.size(); ++i) adv[i] = rewards[i] - mean;
  if (mode == AdvantageMode::std_normalized) {
    double var = 0.0;
    for (double a : adv) var += a * a;
    const double sd = std::sqrt(var / static_cast<double>(rewards.size()));
    if (sd < 1e-8) {
      std::fill(adv.begin(), adv.end(), 0.0);
    } else {
      for (double& a : adv) a /= sd;
    }
  }
  return adv;
}

ScoredGroup score_group(const Task& task, std::vector<Rollout> rollouts,
                        const TokenPolicy& small, const TokenPolicy& large,
                        double alpha, AdvantageMode adv_small_mode,
                        AdvantageMode adv_large_mode, KlEstimator estimator) {
  if (rollouts.empty()) throw std::invalid_argument("group too small");
  ScoredGroup g;
  g.prompt = rollouts.front().prompt;
  g.adv_small_mode = adv_small_mode;
  g.adv_large_mode = adv_large_mode;
  g.r.reserve(rollouts.size());
  g.kd_terms.reserve(rollouts.size());
  g.r_tilde.reserve(rollouts.size());
  for (const auto& r : rollouts) {
    if (r.prompt != g.prompt)
      throw std::invalid_argument("group mixes prompts");
    g.r.push_back(task.reward(r.prompt, r.tokens));
    g.kd_terms.push_back(
        kd_term(r, small, large, alpha, task.max_len, estimator));
    g.r_tilde.push_back(g.r.back() + g.kd_terms.back());
  }
  g.rollouts = std::move(rollouts);
  g.adv_small = advantages(g.r_tilde, adv_small_mode);
  g.adv_large = advantages(g.r, adv_large_mode);
  return g;
}

std::vector<std::size_t> downsample_indices(std::span<const double> scores,
                                            int G) {
  const int M = static_cast<int>(scores.size());
  if (G < 2) throw std::invalid_argument("G must be >= 2");
  if (G % 2 != 0) throw std::invalid_argument("G must be even");
  if (M < G) throw std::invalid_argument("M must be >= G");
  // One full descending order with ascending-index tie break; the top G/2
  // are its head, the bottom G/2 its tail.  Disjoint because M >= G.
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  std::vector<std::size_t> keep;
  keep.reserve(static_cast<std::size_t>(G));
  const std::size_t half = static_cast<std::size_t>(G) / 2;
  keep.insert(keep.end(), order.begin(), order.begin() + static_cast<long>(half));
  keep.insert(keep.end(), order.end() - static_cast<long>(half), order.end());
  std::sort(keep.begin(), keep.end());
  return keep;
}

ScoredGroup downsample(const ScoredGroup& group, int G) {
  const auto keep = downsample_indices(group.r_tilde, G);
  ScoredGroup out;
  out.prompt = group.prompt;
  out.adv_small_mode = group.adv_small_mode;
  out.adv_large_mode = group.adv_large_mode;
  out.rollouts.reserve(keep.size());
  for (std::size_t i : keep) {
    out.rollouts.push_back(group.rollouts[i]);
    out.r.push_back(group.r[i]);
    out.kd_terms.push_back(group.kd_terms[i]);
    out.r_tilde.push_back(group.r_tilde[i]);
  }
  out.adv_small = advantages(out.r_tilde, out.adv_small_mode);
  out.adv_large = advantages(out.r, out.adv_large_mode);
  return out;
}

}  // namespace codistill
