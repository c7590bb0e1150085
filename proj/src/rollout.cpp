#include "codistill/rollout.hpp"

#include <algorithm>
#include <cmath>

namespace codistill {

bool hint_schedule(int iteration, int H) {
  if (iteration < 1) throw std::invalid_argument("iteration must be >= 1");
  return iteration <= H;
}

namespace {

// Emit one token from `source`, recording both policies' log probs.
void emit_token(Rollout& r, const TokenPolicy& source, const TokenPolicy& small,
                const TokenPolicy& large, std::mt19937_64& rng) {
  const std::size_t v = static_cast<std::size_t>(source.vocab().size);
  std::vector<double> lp(v), probs(v);
  source.row_log_probs(source.context_row(r.prompt, r.tokens), lp);
  for (std::size_t j = 0; j < v; ++j) probs[j] = std::exp(lp[j]);
  const int tok = sample_categorical(probs, rng);
  r.logp_small_old.push_back(small.token_log_prob(r.prompt, r.tokens, tok));
  r.logp_large_old.push_back(large.token_log_prob(r.prompt, r.tokens, tok));
  r.tokens.push_back(tok);
  if (tok == source.vocab().eos_token) r.terminated = true;
}

}  // namespace

std::vector<Rollout> generate_group(const Task& task, PromptId prompt,
                                    const TokenPolicy& small,
                                    const TokenPolicy& large, int M, int T,
                                    bool hinting_active, std::mt19937_64& rng) {
  if (M < 1) throw std::invalid_argument("M must be >= 1");
  if (T < 0) throw std::invalid_argument("T must be >= 0");
  if (!(small.vocab() == task.vocab) || !(large.vocab() == task.vocab))
    throw std::invalid_argument("policy vocab does not match task vocab");
  const int N = task.max_len;
  const int hint_cap = hinting_active ? std::min(T, N) : 0;
  std::vector<Rollout> group(static_cast<std::size_t>(M));
  for (auto& r : group) {
    r.prompt = prompt;
    while (!r.terminated && static_cast<int>(r.tokens.size()) < hint_cap)
      emit_token(r, large, small, large, rng);
    r.hint_len = static_cast<int>(r.tokens.size());
    while (!r.terminated && static_cast<int>(r.tokens.size()) < N)
      emit_token(r, small, small, large, rng);
  }
  return group;
}

}  // namespace codistill
