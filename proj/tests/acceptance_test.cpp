// Acceptance gate: one criterion per line, exit 0 only if all pass.
//
// Every numeric threshold is pinned here, next to the check that uses it.
// Randomized checks run on fixed seeds, so a pass/fail outcome is exactly
// reproducible.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "codistill/experiment.hpp"
#include "codistill/scoring.hpp"
#include "codistill/verify_suites.hpp"

using namespace codistill;
namespace fs = std::filesystem;

namespace {

using Outcome = std::pair<bool, std::string>;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string num(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.4g", x);
  return buf;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

double pop_variance(std::span<const double> v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double acc = 0.0;
  for (double x : v) acc += (x - mean) * (x - mean);
  return acc / static_cast<double>(v.size());
}

// ---------------------------------------------------------------------------
// criteria 1-3: verification suites at full scale
// ---------------------------------------------------------------------------

Outcome criterion_theorem1() {
  const auto t0 = Clock::now();
  const verify::SuiteReport report = verify::theorem1_suite(7, 20);
  const double secs = seconds_since(t0);
  const bool in_budget = secs < 10.0;
  return {report.pass() && in_budget,
          "20 instances, residual inf-norm <= 1e-8, " + num(secs) + " s" +
              (report.pass() ? "" : "; FAILED CHECKS:\n" + report.to_text())};
}

Outcome criterion_lemma1() {
  const auto t0 = Clock::now();
  const verify::SuiteReport report = verify::lemma1_suite(7, 100000);
  const double secs = seconds_since(t0);
  const bool in_budget = secs < 120.0;
  return {report.pass() && in_budget,
          "G in {2,4,8} at 100000 groups, |z| <= 4, uncorrected control "
          "rejected, " +
              num(secs) + " s" +
              (report.pass() ? "" : "; FAILED CHECKS:\n" + report.to_text())};
}

Outcome criterion_fd() {
  const verify::SuiteReport report = verify::fd_suite(7, 50);
  return {report.pass(),
          "50 random losses, rel l2 error <= 1e-5 vs central differences" +
              std::string(report.pass() ? ""
                                        : "; FAILED CHECKS:\n" + report.to_text())};
}

// ---------------------------------------------------------------------------
// criterion 4: downsampling = top/bottom G/2 order statistics, and retained
// variance is maximal over all size-G subsets when rewards are two-valued
// ---------------------------------------------------------------------------

Outcome criterion_downsample() {
  // Part 1: order-statistics oracle on random vectors (with and without ties).
  std::mt19937_64 rng = make_rng(20260815, {kSeedVerify, 4});
  for (int trial = 0; trial < 1000; ++trial) {
    const int M = 2 + static_cast<int>(rng() % 13);
    const int G = 2 * (1 + static_cast<int>(rng() % (M / 2)));
    const bool gridded = (rng() & 1) != 0;
    std::vector<double> scores(M);
    for (double& s : scores)
      s = gridded ? 0.25 * static_cast<double>(rng() % 6) : uniform01(rng);

    const std::vector<std::size_t> sel = downsample_indices(scores, G);
    if (static_cast<int>(sel.size()) != G)
      return {false, "trial " + std::to_string(trial) + ": wrong size"};
    for (std::size_t i = 0; i < sel.size(); ++i) {
      if (sel[i] >= scores.size() || (i > 0 && sel[i] <= sel[i - 1]))
        return {false, "trial " + std::to_string(trial) + ": bad index list"};
    }

    // Selected values must equal the multiset {G/2 smallest} + {G/2 largest}.
    std::vector<double> sorted = scores;
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> expected;
    expected.insert(expected.end(), sorted.begin(), sorted.begin() + G / 2);
    expected.insert(expected.end(), sorted.end() - G / 2, sorted.end());
    std::sort(expected.begin(), expected.end());
    std::vector<double> got;
    for (std::size_t i : sel) got.push_back(scores[i]);
    std::sort(got.begin(), got.end());
    if (got != expected)
      return {false, "trial " + std::to_string(trial) +
                         ": selected values are not the top/bottom halves"};

    // With distinct values the index set itself is forced.
    std::vector<double> dedup = sorted;
    dedup.erase(std::unique(dedup.begin(), dedup.end()), dedup.end());
    if (dedup.size() == scores.size()) {
      std::vector<std::size_t> order(scores.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores[a] < scores[b];
      });
      std::vector<std::size_t> forced(order.begin(), order.begin() + G / 2);
      forced.insert(forced.end(), order.end() - G / 2, order.end());
      std::sort(forced.begin(), forced.end());
      if (forced != sel)
        return {false, "trial " + std::to_string(trial) +
                           ": distinct-value index set mismatch"};
    }
  }

  // Part 2: exhaustive two-valued vectors; retained population variance must
  // be within 1e-12 of the best over all C(M, G) subsets.
  for (int M = 2; M <= 10; ++M) {
    for (int G = 2; G <= M; G += 2) {
      std::vector<unsigned> subsets;
      for (unsigned mask = 0; mask < (1u << M); ++mask)
        if (std::popcount(mask) == G) subsets.push_back(mask);
      for (unsigned bits = 0; bits < (1u << M); ++bits) {
        std::vector<double> scores(M);
        for (int i = 0; i < M; ++i) scores[i] = (bits >> i) & 1u ? 1.0 : 0.0;
        const std::vector<std::size_t> sel = downsample_indices(scores, G);
        std::vector<double> kept;
        for (std::size_t i : sel) kept.push_back(scores[i]);
        const double got = pop_variance(kept);
        double best = 0.0;
        std::vector<double> sub(G);
        for (unsigned mask : subsets) {
          int n = 0;
          for (int i = 0; i < M; ++i)
            if ((mask >> i) & 1u) sub[n++] = scores[i];
          best = std::max(best, pop_variance(sub));
        }
        if (got < best - 1e-12)
          return {false, "M=" + std::to_string(M) + " G=" + std::to_string(G) +
                             " bits=" + std::to_string(bits) + ": variance " +
                             num(got) + " < best " + num(best)};
      }
    }
  }
  return {true,
          "1000 random vectors match the order-statistics oracle; all "
          "two-valued vectors up to M=10 retain maximal variance"};
}

// ---------------------------------------------------------------------------
// criterion 5: the k3 KL sample is nonnegative and unbiased for the exact
// sequence KL computed by enumeration
// ---------------------------------------------------------------------------

Outcome criterion_k3() {
  Vocab vocab;
  vocab.size = 3;
  vocab.eos_token = 0;
  const std::vector<PromptId> prompts = {0};
  const int N = 4;
  TokenPolicy phi(vocab, 1, prompts);
  TokenPolicy theta(vocab, 2, prompts);
  {
    std::mt19937_64 noise = make_rng(33, {kSeedVerify, 50});
    phi.add_logit_noise(0.7, noise);
    theta.add_logit_noise(0.7, noise);
  }

  const double self_kl = verify::exact_sequence_kl(phi, phi, 0, N);
  if (!(std::abs(self_kl) <= 1e-12))
    return {false, "KL(p||p) = " + num(self_kl) + " exceeds 1e-12"};

  const double exact = verify::exact_sequence_kl(phi, theta, 0, N);
  const std::size_t n = 1000000;
  std::mt19937_64 rng = make_rng(33, {kSeedVerify, 51});
  double sum = 0.0, sum_sq = 0.0, min_sample = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    Rollout ro;
    ro.prompt = 0;
    ro.tokens = phi.sample(0, {}, N, rng);
    const double x = k3_kl_estimate(ro, phi, theta);
    min_sample = std::min(min_sample, x);
    sum += x;
    sum_sq += x * x;
  }
  const double mean = sum / static_cast<double>(n);
  const double var = sum_sq / static_cast<double>(n) - mean * mean;
  const double se = std::sqrt(std::max(var, 0.0) / static_cast<double>(n));
  const bool unbiased = std::abs(mean - exact) <= 3.0 * se;
  const bool nonneg = min_sample >= 0.0;
  return {unbiased && nonneg,
          "exact KL " + num(exact) + ", MC mean " + num(mean) + " +- " +
              num(se) + " over 1e6 on-policy samples; min sample " +
              num(min_sample) + "; KL(p||p) " + num(self_kl)};
}

// ---------------------------------------------------------------------------
// criteria 6-7: end-to-end training comparison on the modular-sum task
// ---------------------------------------------------------------------------

struct Campaign {
  Task task = make_modsum_task(3, 3, 8, true);
  std::vector<TrainResult> joint;  // codistill, seeds 1..5
  std::vector<TrainResult> solo;   // grpo_small, same seeds + inits
  double init_large_reward = 0.0;
  double seconds = 0.0;
};

TrainConfig campaign_config(TrainMode mode, std::uint64_t seed) {
  TrainConfig c;
  c.mode = mode;
  c.alpha = mode == TrainMode::codistill ? 1.0 : 0.0;
  c.T = 0;
  c.H = 0;
  c.M = mode == TrainMode::codistill ? 6 : 4;
  c.G = 4;
  c.N = 8;
  c.K = 200;
  c.B = 4;
  c.eta = 2.0;
  c.seed = seed;
  c.eval_every = 200;  // exact metrics below make MC eval irrelevant here
  c.eval_samples = 16;
  c.task.k = 3;
  c.task.L = 3;
  return c;
}

const Campaign& campaign() {
  static const Campaign c = [] {
    Campaign out;
    const auto t0 = Clock::now();
    const TokenPolicy small_init = make_task_policy(out.task, 1);
    const TokenPolicy large_init = make_task_policy(out.task, 2);
    out.init_large_reward =
        verify::exact_mean_reward(large_init, out.task, out.task.max_len);
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      out.joint.push_back(train(campaign_config(TrainMode::codistill, seed),
                                out.task, small_init, large_init));
      out.solo.push_back(train(campaign_config(TrainMode::grpo_small, seed),
                               out.task, small_init, large_init));
    }
    out.seconds = seconds_since(t0);
    return out;
  }();
  return c;
}

Outcome criterion_joint_vs_solo() {
  const Campaign& c = campaign();
  const int N = c.task.max_len;
  double reward_joint = 0.0, reward_solo = 0.0;
  double kl_joint = 0.0, kl_solo = 0.0;
  double zero_joint = 0.0, zero_solo = 0.0;
  for (std::size_t s = 0; s < c.joint.size(); ++s) {
    reward_joint += verify::exact_mean_reward(c.joint[s].small, c.task, N);
    reward_solo += verify::exact_mean_reward(c.solo[s].small, c.task, N);
    kl_joint +=
        verify::exact_sequence_kl(c.joint[s].small, c.joint[s].large, c.task, N);
    kl_solo +=
        verify::exact_sequence_kl(c.solo[s].small, c.solo[s].large, c.task, N);
    for (int k = 0; k < 50; ++k) {
      zero_joint += c.joint[s].metrics[k].frac_zero_accuracy_groups / 50.0;
      zero_solo += c.solo[s].metrics[k].frac_zero_accuracy_groups / 50.0;
    }
  }
  const double runs = static_cast<double>(c.joint.size());
  reward_joint /= runs;
  reward_solo /= runs;
  kl_joint /= runs;
  kl_solo /= runs;
  zero_joint /= runs;
  zero_solo /= runs;
  const bool pass = reward_joint > reward_solo && kl_joint < kl_solo &&
                    zero_joint < zero_solo && c.seconds < 300.0;
  return {pass, "5 seeds x 200 iters: final exact reward " + num(reward_joint) +
                    " vs " + num(reward_solo) + "; final exact KL " +
                    num(kl_joint) + " vs " + num(kl_solo) +
                    "; zero-accuracy group frac (first 50 iters) " +
                    num(zero_joint) + " vs " + num(zero_solo) + "; " +
                    num(c.seconds) + " s"};
}

Outcome criterion_large_improves() {
  const Campaign& c = campaign();
  const int N = c.task.max_len;
  double trained = 0.0, continued = 0.0;
  for (std::size_t s = 0; s < c.joint.size(); ++s) {
    trained += verify::exact_mean_reward(c.joint[s].large, c.task, N);
    TrainConfig ct = campaign_config(TrainMode::ct, s + 1);
    ct.M = ct.G;
    const TrainResult after = continued_training(ct, c.task, c.joint[s].large);
    continued += verify::exact_mean_reward(after.large, c.task, N);
  }
  const double runs = static_cast<double>(c.joint.size());
  trained /= runs;
  continued /= runs;
  const bool pass = trained > c.init_large_reward && continued > trained;
  return {pass, "mean exact reward of the large policy: init " +
                    num(c.init_large_reward) + " -> after joint training " +
                    num(trained) + " -> after continued training " +
                    num(continued)};
}

// ---------------------------------------------------------------------------
// criterion 8: baseline modes reduce bit-identically to the joint loop
// ---------------------------------------------------------------------------

Outcome criterion_reductions() {
  const Task task = make_modsum_task(2, 2, 4, true);
  const TokenPolicy small_init = make_task_policy(task, 1, 0.3, 5, 0);
  const TokenPolicy large_init = make_task_policy(task, 2, 0.3, 5, 1);

  TrainConfig base;
  base.T = 0;
  base.H = 0;
  base.M = 4;
  base.G = 4;
  base.N = 4;
  base.K = 12;
  base.B = 2;
  base.eta = 2.0;
  base.seed = 9;
  base.eval_every = 1;
  base.eval_samples = 16;
  base.task.k = 2;
  base.task.L = 2;

  TrainConfig joint = base;
  joint.mode = TrainMode::codistill;
  joint.alpha = 0.0;
  joint.update_large = false;
  TrainConfig solo = base;
  solo.mode = TrainMode::grpo_small;
  solo.alpha = 0.0;

  std::vector<ParamVector> trace_joint, trace_solo;
  const TrainResult a =
      train(joint, task, small_init, large_init,
            [&](int, const TokenPolicy& s, const TokenPolicy&) {
              trace_joint.push_back(s.parameters());
            });
  const TrainResult b =
      train(solo, task, small_init, large_init,
            [&](int, const TokenPolicy& s, const TokenPolicy&) {
              trace_solo.push_back(s.parameters());
            });
  if (trace_joint.size() != 12 || trace_solo.size() != 12)
    return {false, "observer trace has wrong length"};
  for (std::size_t k = 0; k < trace_joint.size(); ++k)
    if (trace_joint[k] != trace_solo[k])
      return {false, "alpha=0, M=G: small parameters diverge at iteration " +
                         std::to_string(k + 1)};
  if (!(a.small == b.small))
    return {false, "alpha=0, M=G: final small policies differ"};
  if (metrics_to_csv(a.metrics) != metrics_to_csv(b.metrics))
    return {false, "alpha=0, M=G: metrics CSVs differ"};

  // Frozen-teacher mode with alpha = 0 is the same reduction again.
  TrainConfig frozen = solo;
  frozen.mode = TrainMode::kdrl_frozen_teacher;
  const TrainResult f = kdrl_mode(frozen, task, small_init, large_init);
  if (!(f.small == b.small))
    return {false, "frozen-teacher alpha=0 final small differs from grpo_small"};
  if (metrics_to_csv(f.metrics) != metrics_to_csv(b.metrics))
    return {false, "frozen-teacher alpha=0 metrics CSV differs"};

  return {true,
          "12 iterations: per-iteration small parameters, final policies, and "
          "metrics CSVs are bit-identical across the three reductions"};
}

// ---------------------------------------------------------------------------
// criterion 9: byte-level reproducibility of whole runs and checkpoints
// ---------------------------------------------------------------------------

Outcome criterion_determinism() {
  TrainConfig c;
  c.T = 1;
  c.H = 2;
  c.M = 6;
  c.G = 4;
  c.N = 4;
  c.K = 3;
  c.B = 2;
  c.eta = 2.0;
  c.seed = 11;
  c.eval_every = 1;
  c.eval_samples = 16;
  c.init_logit_noise = 0.5;
  c.task.k = 2;
  c.task.L = 2;

  const fs::path base = fs::temp_directory_path() / "codistill_acceptance";
  fs::remove_all(base);
  run_train(c, base / "a");
  run_train(c, base / "b");
  for (const char* name :
       {"metrics.csv", "small_final.json", "large_final.json", "manifest.json"}) {
    const std::string lhs = slurp(base / "a" / name);
    if (lhs.empty() || lhs != slurp(base / "b" / name))
      return {false, std::string(name) + " differs between identical runs"};
  }

  const Task task = c.task.build(c.N);
  const TokenPolicy noisy = make_task_policy(task, 2, 0.9, 123, 7);
  save_policy_file(noisy, (base / "ckpt.json").string());
  if (!(load_policy_file((base / "ckpt.json").string()) == noisy))
    return {false, "checkpoint save/load round trip changed the policy"};
  return {true,
          "two runs of one config are byte-identical (metrics, checkpoints, "
          "manifest); checkpoint round trip is exact"};
}

struct Criterion {
  int id;
  const char* title;
  std::function<Outcome()> body;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "exact objective gradient splits into reward gradient minus scaled "
          "KL gradient",
       criterion_theorem1},
      {2, "corrected surrogate gradient is unbiased (uncorrected control "
          "rejected)",
       criterion_lemma1},
      {3, "analytic loss gradients match finite differences", criterion_fd},
      {4, "downsampling keeps top/bottom halves and maximizes retained "
          "variance on two-valued rewards",
       criterion_downsample},
      {5, "k3 KL samples are nonnegative and unbiased vs exact enumeration",
       criterion_k3},
      {6, "joint training beats small-only training on reward, KL, and early "
          "zero-accuracy groups",
       criterion_joint_vs_solo},
      {7, "large policy improves under joint training and further under "
          "continued training",
       criterion_large_improves},
      {8, "baseline modes are bit-identical reductions of the joint loop",
       criterion_reductions},
      {9, "runs and checkpoints are byte-reproducible", criterion_determinism},
  };

  int failures = 0;
  for (const Criterion& c : criteria) {
    bool pass = false;
    std::string detail;
    try {
      std::tie(pass, detail) = c.body();
    } catch (const std::exception& e) {
      pass = false;
      detail = std::string("exception: ") + e.what();
    }
    failures += pass ? 0 : 1;
    std::printf("[%s] criterion %d: %s — %s\n", pass ? "PASS" : "FAIL", c.id,
                c.title, detail.c_str());
    std::fflush(stdout);
  }
  if (failures == 0) {
    std::printf("acceptance: ALL %zu CRITERIA PASS\n", criteria.size());
    return 0;
  }
  std::printf("acceptance: %d of %zu criteria FAILED\n", failures,
              criteria.size());
  return 1;
}
