#pragma once

// Synthetic verifiable-reward tasks.
//
// A Task is a weighted prompt set plus a pure verifier mapping (prompt,
// token sequence) to a 0/1 accuracy reward, optionally topped up with a
// format bonus of 0.25 for each named format token present in the output.
// Total reward therefore lies in {0, 0.25, 0.5, 1.0, 1.25, 1.5}.
//
// Built-in family "modsum(k, L)": vocabulary {digits 0..k-1, eos,
// answer_open, answer_close}; one prompt per target value in [0, k);
// accuracy 1 iff the output contains at least L digit tokens and the sum of
// the first L of them is congruent to the prompt's target mod k.

#include <functional>
#include <string>

#include "codistill/common.hpp"
#include "codistill/vocab.hpp"

namespace codistill {

struct Task {
  std::string name;
  Vocab vocab;
  std::vector<PromptId> prompts;
  std::vector<double> weights;  // same length as prompts; normalized
  int max_len = 8;              // N: rollout length cap
  // Pure, deterministic; returns 0.0 or 1.0.
  std::function<double(PromptId, const TokenSequence&)> verifier;
  // Format tokens that earn +0.25 each when present anywhere in the output.
  std::vector<int> format_tokens;

  void validate() const;

  double accuracy_reward(PromptId prompt, const TokenSequence& tokens) const;
  double format_reward(const TokenSequence& tokens) const;
  // accuracy + format bonus.
  double reward(PromptId prompt, const TokenSequence& tokens) const;
};

// i.i.d. prompt draws by task weight.  batch_size must be >= 1.
std::vector<PromptId> sample_prompt_batch(const Task& task, int batch_size,
                                          std::mt19937_64& rng);

// The built-in modular-sum task.  format_rewards toggles the bonus tokens
// (on mirrors the instruction-following profile, off the plain one).
Task make_modsum_task(int k, int L, int max_len, bool format_rewards);

// Small deterministic reward-table task for verification instances: the
// accuracy bit of any (prompt, sequence) pair is a hash of the pair.  Not a
// learnable task; it exists to give enumeration and Monte Carlo checks an
// arbitrary but reproducible reward landscape.
Task make_hash_reward_task(const Vocab& vocab, std::vector<PromptId> prompts,
                           int max_len, std::uint64_t table_seed);

}  // namespace codistill
