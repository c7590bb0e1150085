#pragma once

// Rollout generation.
//
// A group is M independent completions of one prompt, normally sampled from
// the small policy.  When hinting is active, the large policy emits the
// first min(T, N) tokens of each rollout and the small policy completes the
// rest; an eos inside the hint ends the rollout early.  Both policies' log
// probabilities of every emitted token are recorded at generation time (the
// "old" values that later serve as importance-ratio denominators), using the
// exact same code path as TokenPolicy::log_prob so the records are
// bit-identical to a separate evaluation.

#include "codistill/common.hpp"
#include "codistill/policy.hpp"
#include "codistill/task.hpp"

namespace codistill {

struct Rollout {
  PromptId prompt = 0;
  TokenSequence tokens;
  int hint_len = 0;  // leading tokens emitted by the large policy
  std::vector<double> logp_small_old;  // per token, recorded at generation
  std::vector<double> logp_large_old;  // per token, recorded at generation
  bool terminated = false;  // true: emitted eos; false: hit the length cap
};

// Hints run during the first H iterations (1-based iteration index).
bool hint_schedule(int iteration, int H);

// M rollouts for one prompt.  T is capped at the task's max_len; T == 0 or
// hinting_active == false means all tokens come from `small`.  Each rollout
// draws its own hint (hints are resampled per rollout, not shared).
std::vector<Rollout> generate_group(const Task& task, PromptId prompt,
                                    const TokenPolicy& small,
                                    const TokenPolicy& large, int M, int T,
                                    bool hinting_active, std::mt19937_64& rng);

}  // namespace codistill
