#pragma once

// Exact verification machinery.
//
// Sequence enumeration treats eos as absorbing: the outcome space for a cap
// of N tokens is every sequence that ends with its first eos at length <= N,
// plus every eos-free sequence of exactly length N.  Outcome probabilities
// under a TokenPolicy sum to 1 (asserted to 1e-12 in every exact routine).
//
// exact_objective / exact_gradient evaluate
//   J(phi) = sum_q P(q) sum_o pi_phi(o|q) * r_tilde(q, o),
//   r_tilde = r + (alpha/N) * log(pi_theta(o)/pi_phi(o)),
// the gradient along two independently derived routes that must agree to
// 1e-10: (a) the product rule on pi_phi(o) * r_tilde_phi(o), which carries
// the reward-gradient term -(alpha/N) grad log pi_phi(o), and (b) the
// score-function form sum_o pi(o) r_tilde(o) grad log pi(o), where that term
// has been dropped because its expectation is exactly zero.
//
// lemma1_check verifies that the Monte Carlo surrogate gradient is an
// unbiased estimate of grad J up to the known scale factor: with mean-only
// advantages, on-policy groups of size G and no downsampling,
//   N * (G/(G-1)) * E[grad of the small surrogate] = grad J.
// The G/(G-1) comes from the mean baseline's cross terms; the N undoes the
// surrogate's per-token 1/N normalization (J is a per-sequence objective).
// Dropping the G/(G-1) correction biases every component by exactly
// (G-1)/G, which the positive-control path must detect.
//
// theorem1_check verifies the decomposition
//   grad_phi J_q = grad_phi E[r] - (alpha/N) * grad_phi KL(pi_phi || pi_theta)
// with all three gradients computed exactly and independently.

#include "codistill/scoring.hpp"

namespace codistill {
namespace verify {

// Number of outcomes for a vocabulary of `vocab_size` tokens (one of them
// eos) under cap N.
std::uint64_t outcome_count(int vocab_size, int N);

// Calls visit(tokens, logp_phi, logp_theta) for every outcome of prompt q.
// Throws when the outcome space exceeds max_outcomes (default guard 1e6),
// with the offending count in the message.
void for_each_outcome(
    const TokenPolicy& phi, const TokenPolicy& theta, PromptId q, int N,
    const std::function<void(const TokenSequence&, double, double)>& visit,
    std::uint64_t max_outcomes = 1000000);

double exact_objective(const TokenPolicy& phi, const TokenPolicy& theta,
                       const Task& task, double alpha, int N);

// Route (a) and (b) separately, and the checked combination.
ParamVector exact_gradient_product_rule(const TokenPolicy& phi,
                                        const TokenPolicy& theta,
                                        const Task& task, double alpha, int N);
ParamVector exact_gradient_score_form(const TokenPolicy& phi,
                                      const TokenPolicy& theta,
                                      const Task& task, double alpha, int N);
// Asserts the two routes agree to 1e-10 (throws otherwise), returns (a).
ParamVector exact_gradient(const TokenPolicy& phi, const TokenPolicy& theta,
                           const Task& task, double alpha, int N);

// Exact expected accuracy+format reward of `policy` on the task (enumeration).
double exact_mean_reward(const TokenPolicy& policy, const Task& task, int N);

// Full-sequence KL(pi_phi(.|q) || pi_theta(.|q)).
double exact_sequence_kl(const TokenPolicy& phi, const TokenPolicy& theta,
                         PromptId q, int N);
// Prompt-weighted average over the task's prompt set.
double exact_sequence_kl(const TokenPolicy& phi, const TokenPolicy& theta,
                         const Task& task, int N);
// grad_phi KL(pi_phi(.|q) || pi_theta(.|q)), product-rule form.
ParamVector exact_kl_gradient(const TokenPolicy& phi, const TokenPolicy& theta,
                              PromptId q, int N);

struct GradientReport {
  ParamVector estimated;
  ParamVector exact;
  std::vector<double> z_scores;
  double max_abs_z = 0.0;
  double l2_rel_error = 0.0;
  std::size_t samples_used = 0;
};

// Monte Carlo check of the unbiasedness identity.  apply_correction == false
// is the positive control: the report then reflects the (G-1)/G bias and the
// z test must fail.  G >= 2 required.
GradientReport lemma1_check(const TokenPolicy& phi, const TokenPolicy& theta,
                            const Task& task, double alpha, int G,
                            std::size_t num_groups, std::uint64_t seed,
                            bool apply_correction = true);

struct Theorem1Report {
  ParamVector grad_objective;   // grad J_q
  ParamVector grad_reward;      // grad E[r]
  ParamVector grad_kl;          // grad KL(phi || theta)
  double residual_inf_norm = 0.0;
  bool pass = false;            // residual <= 1e-8
};

Theorem1Report theorem1_check(const TokenPolicy& phi, const TokenPolicy& theta,
                              const Task& task, PromptId q, double alpha,
                              int N);

// Central finite difference of a scalar function of a parameter vector.
ParamVector finite_difference_gradient(
    const std::function<double(const ParamVector&)>& f, ParamVector at,
    double step = 1e-5);

double l2_norm(std::span<const double> v);
double l2_rel_error(std::span<const double> approx, std::span<const double> exact);
double inf_norm_diff(std::span<const double> a, std::span<const double> b);

}  // namespace verify
}  // namespace codistill
