#include "codistill/verify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "codistill/objectives.hpp"

namespace codistill {
namespace verify {

namespace {

// Compensated (Kahan) accumulator: enumeration sums hundreds of thousands of
// leaf terms and the 1e-12 probability-sum assertion needs the headroom.
struct Kahan {
  double sum = 0.0;
  double c = 0.0;
  void add(double x) {
    const double y = x - c;
    const double t = sum + y;
    c = (t - sum) - y;
    sum = t;
  }
};

std::uint64_t saturating_mul(std::uint64_t a, std::uint64_t b) {
  if (a != 0 && b > std::numeric_limits<std::uint64_t>::max() / a)
    return std::numeric_limits<std::uint64_t>::max();
  return a * b;
}

std::uint64_t saturating_add(std::uint64_t a, std::uint64_t b) {
  if (b > std::numeric_limits<std::uint64_t>::max() - a)
    return std::numeric_limits<std::uint64_t>::max();
  return a + b;
}

std::vector<double> normalized_weights(const Task& task) {
  double total = 0.0;
  for (double w : task.weights) total += w;
  std::vector<double> out(task.weights.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = task.weights[i] / total;
  return out;
}

void check_prob_total(double total) {
  if (std::abs(total - 1.0) > 1e-12)
    throw std::runtime_error("outcome probabilities sum to " +
                             std::to_string(total) + ", expected 1");
}

double kd_value(double lp_phi, double lp_theta, double alpha, int N) {
  return alpha / static_cast<double>(N) * (lp_theta - lp_phi);
}

}  // namespace

std::uint64_t outcome_count(int vocab_size, int N) {
  if (vocab_size < 2 || N < 1)
    throw std::invalid_argument("outcome_count: bad arguments");
  const std::uint64_t non_eos = static_cast<std::uint64_t>(vocab_size - 1);
  std::uint64_t count = 0;
  std::uint64_t pw = 1;  // non_eos^(l-1)
  for (int l = 1; l <= N; ++l) {
    count = saturating_add(count, pw);  // sequences whose first eos is at l
    pw = saturating_mul(pw, non_eos);
  }
  return saturating_add(count, pw);  // eos-free sequences of full length N
}

void for_each_outcome(
    const TokenPolicy& phi, const TokenPolicy& theta, PromptId q, int N,
    const std::function<void(const TokenSequence&, double, double)>& visit,
    std::uint64_t max_outcomes) {
  if (!(phi.vocab() == theta.vocab()))
    throw std::invalid_argument("policy vocabularies differ");
  const int v = phi.vocab().size;
  const int eos = phi.vocab().eos_token;
  const std::uint64_t count = outcome_count(v, N);
  if (count > max_outcomes)
    throw std::invalid_argument("enumeration too large: " +
                                std::to_string(count) + " outcomes (max " +
                                std::to_string(max_outcomes) + ")");

  std::vector<std::vector<double>> cache_phi(phi.row_count());
  std::vector<std::vector<double>> cache_theta(theta.row_count());
  const auto row_lp = [](const TokenPolicy& p,
                         std::vector<std::vector<double>>& cache,
                         std::size_t row) -> const std::vector<double>& {
    auto& slot = cache[row];
    if (slot.empty()) slot = p.row_log_probs(row);
    return slot;
  };

  TokenSequence tokens;
  tokens.reserve(static_cast<std::size_t>(N));
  const std::function<void(double, double)> rec = [&](double lp_phi,
                                                      double lp_theta) {
    const auto& lpp = row_lp(phi, cache_phi, phi.context_row(q, tokens));
    const auto& lpt = row_lp(theta, cache_theta, theta.context_row(q, tokens));
    for (int tok = 0; tok < v; ++tok) {
      tokens.push_back(tok);
      const double np = lp_phi + lpp[static_cast<std::size_t>(tok)];
      const double nt = lp_theta + lpt[static_cast<std::size_t>(tok)];
      if (tok == eos || static_cast<int>(tokens.size()) == N)
        visit(tokens, np, nt);
      else
        rec(np, nt);
      tokens.pop_back();
    }
  };
  rec(0.0, 0.0);
}

double exact_objective(const TokenPolicy& phi, const TokenPolicy& theta,
                       const Task& task, double alpha, int N) {
  const auto weights = normalized_weights(task);
  Kahan value;
  for (std::size_t pi = 0; pi < task.prompts.size(); ++pi) {
    const PromptId q = task.prompts[pi];
    Kahan total;
    Kahan obj;
    for_each_outcome(phi, theta, q, N,
                     [&](const TokenSequence& o, double lp_phi, double lp_theta) {
                       const double p = std::exp(lp_phi);
                       total.add(p);
                       const double rt = task.reward(q, o) +
                                         kd_value(lp_phi, lp_theta, alpha, N);
                       obj.add(p * rt);
                     });
    check_prob_total(total.sum);
    value.add(weights[pi] * obj.sum);
  }
  return value.sum;
}

namespace {

// Shared enumeration-gradient walker: weight(o) * grad log pi_phi(o).
ParamVector weighted_score_sum(
    const TokenPolicy& phi, const TokenPolicy& theta, const Task& task, int N,
    const std::function<double(PromptId, const TokenSequence&, double, double)>&
        weight) {
  const auto prompt_weights = normalized_weights(task);
  ParamVector grad(phi.param_count(), 0.0);
  for (std::size_t pi = 0; pi < task.prompts.size(); ++pi) {
    const PromptId q = task.prompts[pi];
    const double pw = prompt_weights[pi];
    Kahan total;
    for_each_outcome(
        phi, theta, q, N,
        [&](const TokenSequence& o, double lp_phi, double lp_theta) {
          total.add(std::exp(lp_phi));
          const double w = pw * weight(q, o, lp_phi, lp_theta);
          if (w == 0.0) return;
          const auto rows = phi.context_rows(q, o);
          for (std::size_t t = 0; t < o.size(); ++t)
            phi.add_scaled_grad_row(rows[t], o[t], w, grad);
        });
    check_prob_total(total.sum);
  }
  return grad;
}

}  // namespace

ParamVector exact_gradient_product_rule(const TokenPolicy& phi,
                                        const TokenPolicy& theta,
                                        const Task& task, double alpha, int N) {
  // d[pi(o) r_tilde(o)] = pi(o) (r_tilde(o) - alpha/N) grad log pi(o):
  // the -alpha/N carries d r_tilde / d phi = -(alpha/N) grad log pi(o).
  return weighted_score_sum(
      phi, theta, task, N,
      [&](PromptId q, const TokenSequence& o, double lp_phi, double lp_theta) {
        const double rt =
            task.reward(q, o) + kd_value(lp_phi, lp_theta, alpha, N);
        return std::exp(lp_phi) * (rt - alpha / static_cast<double>(N));
      });
}

ParamVector exact_gradient_score_form(const TokenPolicy& phi,
                                      const TokenPolicy& theta,
                                      const Task& task, double alpha, int N) {
  // Score-function form: the reward-gradient term is dropped because
  // E[grad log pi] = 0 exactly.
  return weighted_score_sum(
      phi, theta, task, N,
      [&](PromptId q, const TokenSequence& o, double lp_phi, double lp_theta) {
        const double rt =
            task.reward(q, o) + kd_value(lp_phi, lp_theta, alpha, N);
        return std::exp(lp_phi) * rt;
      });
}

ParamVector exact_gradient(const TokenPolicy& phi, const TokenPolicy& theta,
                           const Task& task, double alpha, int N) {
  ParamVector a = exact_gradient_product_rule(phi, theta, task, alpha, N);
  ParamVector b = exact_gradient_score_form(phi, theta, task, alpha, N);
  const double diff = inf_norm_diff(a, b);
  if (diff > 1e-10)
    throw std::runtime_error(
        "exact gradient routes disagree: inf-norm " + std::to_string(diff));
  return a;
}

double exact_mean_reward(const TokenPolicy& policy, const Task& task, int N) {
  const auto weights = normalized_weights(task);
  Kahan value;
  for (std::size_t pi = 0; pi < task.prompts.size(); ++pi) {
    const PromptId q = task.prompts[pi];
    Kahan total;
    Kahan mean;
    for_each_outcome(policy, policy, q, N,
                     [&](const TokenSequence& o, double lp, double) {
                       const double p = std::exp(lp);
                       total.add(p);
                       mean.add(p * task.reward(q, o));
                     });
    check_prob_total(total.sum);
    value.add(weights[pi] * mean.sum);
  }
  return value.sum;
}

double exact_sequence_kl(const TokenPolicy& phi, const TokenPolicy& theta,
                         PromptId q, int N) {
  Kahan total;
  Kahan kl;
  for_each_outcome(phi, theta, q, N,
                   [&](const TokenSequence&, double lp_phi, double lp_theta) {
                     const double p = std::exp(lp_phi);
                     total.add(p);
                     kl.add(p * (lp_phi - lp_theta));
                   });
  check_prob_total(total.sum);
  return kl.sum;
}

double exact_sequence_kl(const TokenPolicy& phi, const TokenPolicy& theta,
                         const Task& task, int N) {
  const auto weights = normalized_weights(task);
  Kahan kl;
  for (std::size_t pi = 0; pi < task.prompts.size(); ++pi)
    kl.add(weights[pi] * exact_sequence_kl(phi, theta, task.prompts[pi], N));
  return kl.sum;
}

ParamVector exact_kl_gradient(const TokenPolicy& phi, const TokenPolicy& theta,
                              PromptId q, int N) {
  // grad KL = sum_o pi(o) (log pi(o) - log theta(o) + 1) grad log pi(o);
  // the +1 carries d/dphi of the log pi inside the integrand.
  ParamVector grad(phi.param_count(), 0.0);
  Kahan total;
  for_each_outcome(phi, theta, q, N,
                   [&](const TokenSequence& o, double lp_phi, double lp_theta) {
                     const double p = std::exp(lp_phi);
                     total.add(p);
                     const double w = p * (lp_phi - lp_theta + 1.0);
                     if (w == 0.0) return;
                     const auto rows = phi.context_rows(q, o);
                     for (std::size_t t = 0; t < o.size(); ++t)
                       phi.add_scaled_grad_row(rows[t], o[t], w, grad);
                   });
  check_prob_total(total.sum);
  return grad;
}

GradientReport lemma1_check(const TokenPolicy& phi, const TokenPolicy& theta,
                            const Task& task, double alpha, int G,
                            std::size_t num_groups, std::uint64_t seed,
                            bool apply_correction) {
  if (G < 2) throw std::invalid_argument("G must be >= 2");
  if (num_groups < 2) throw std::invalid_argument("num_groups must be >= 2");
  const int N = task.max_len;
  const std::size_t dim = phi.param_count();

  // The surrogate normalizes per-token terms by 1/N while J is a
  // per-sequence expectation, hence the extra N here; G/(G-1) undoes the
  // mean baseline's shrinkage.
  const double factor =
      static_cast<double>(N) *
      (apply_correction ? static_cast<double>(G) / static_cast<double>(G - 1)
                        : 1.0);

  SmallLossOptions loss_options;
  loss_options.epsilon = 0.2;  // ratios are exactly 1 here; never clips
  loss_options.N = N;
  loss_options.hint_mode = HintMode::treat_as_small;

  // Fixed-size blocks keep the reduction order independent of the lane
  // count; per-group seeds keep the samples independent of scheduling.
  constexpr std::size_t kBlock = 1024;
  const std::size_t num_blocks = (num_groups + kBlock - 1) / kBlock;
  std::vector<ParamVector> block_sum(num_blocks),
      block_sumsq(num_blocks);

  parallel_for(num_blocks, [&](std::size_t blk) {
    ParamVector sum(dim, 0.0), sumsq(dim, 0.0);
    const std::size_t begin = blk * kBlock;
    const std::size_t end = std::min(num_groups, begin + kBlock);
    for (std::size_t j = begin; j < end; ++j) {
      auto rng = make_rng(seed, {kSeedVerify, j});
      const PromptId q = sample_prompt_batch(task, 1, rng)[0];
      auto rollouts = generate_group(task, q, phi, theta, G, 0, false, rng);
      const ScoredGroup scored =
          score_group(task, std::move(rollouts), phi, theta, alpha,
                      AdvantageMode::mean_only, AdvantageMode::mean_only);
      const LossGrad lg = small_loss({&scored, 1}, phi, loss_options);
      for (std::size_t i = 0; i < dim; ++i) {
        const double g = factor * lg.grad[i];
        sum[i] += g;
        sumsq[i] += g * g;
      }
    }
    block_sum[blk] = std::move(sum);
    block_sumsq[blk] = std::move(sumsq);
  });

  ParamVector sum(dim, 0.0), sumsq(dim, 0.0);
  for (std::size_t blk = 0; blk < num_blocks; ++blk)
    for (std::size_t i = 0; i < dim; ++i) {
      sum[i] += block_sum[blk][i];
      sumsq[i] += block_sumsq[blk][i];
    }

  GradientReport report;
  report.samples_used = num_groups;
  report.exact = exact_gradient(phi, theta, task, alpha, N);
  report.estimated.resize(dim);
  report.z_scores.resize(dim);
  const double n = static_cast<double>(num_groups);
  for (std::size_t i = 0; i < dim; ++i) {
    const double mean = sum[i] / n;
    report.estimated[i] = mean;
    const double var = std::max(0.0, (sumsq[i] - n * mean * mean) / (n - 1.0));
    const double se = std::sqrt(var / n);
    const double diff = mean - report.exact[i];
    double z;
    if (se == 0.0) {
      z = std::abs(diff) <= 1e-12 ? 0.0
                                  : std::numeric_limits<double>::infinity();
    } else {
      z = diff / se;
    }
    report.z_scores[i] = z;
    report.max_abs_z = std::max(report.max_abs_z, std::abs(z));
  }
  report.l2_rel_error = l2_rel_error(report.estimated, report.exact);
  return report;
}

Theorem1Report theorem1_check(const TokenPolicy& phi, const TokenPolicy& theta,
                              const Task& task, PromptId q, double alpha,
                              int N) {
  Task sub = task;
  sub.prompts = {q};
  sub.weights = {1.0};
  Theorem1Report report;
  report.grad_objective = exact_gradient(phi, theta, sub, alpha, N);
  report.grad_reward = exact_gradient(phi, theta, sub, 0.0, N);
  report.grad_kl = exact_kl_gradient(phi, theta, q, N);
  double worst = 0.0;
  const double scale = alpha / static_cast<double>(N);
  for (std::size_t i = 0; i < report.grad_objective.size(); ++i) {
    const double residual = report.grad_objective[i] -
                            (report.grad_reward[i] - scale * report.grad_kl[i]);
    worst = std::max(worst, std::abs(residual));
  }
  report.residual_inf_norm = worst;
  report.pass = worst <= 1e-8;
  return report;
}

ParamVector finite_difference_gradient(
    const std::function<double(const ParamVector&)>& f, ParamVector at,
    double step) {
  ParamVector grad(at.size(), 0.0);
  for (std::size_t i = 0; i < at.size(); ++i) {
    const double keep = at[i];
    at[i] = keep + step;
    const double up = f(at);
    at[i] = keep - step;
    const double down = f(at);
    at[i] = keep;
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double l2_rel_error(std::span<const double> approx,
                    std::span<const double> exact) {
  if (approx.size() != exact.size())
    throw std::invalid_argument("size mismatch");
  double num = 0.0;
  for (std::size_t i = 0; i < approx.size(); ++i) {
    const double d = approx[i] - exact[i];
    num += d * d;
  }
  const double denom = std::max(l2_norm(exact), 1e-12);
  return std::sqrt(num) / denom;
}

double inf_norm_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("size mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace verify
}  // namespace codistill
