#include "codistill/task.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace codistill {

void Task::validate() const {
  vocab.validate();
  if (prompts.empty()) throw std::invalid_argument("task has no prompts");
  if (weights.size() != prompts.size())
    throw std::invalid_argument("task weights/prompts length mismatch");
  for (double w : weights)
    if (!(w > 0.0)) throw std::invalid_argument("prompt weights must be > 0");
  if (max_len < 1) throw std::invalid_argument("max_len must be >= 1");
  if (!verifier) throw std::invalid_argument("task has no verifier");
  for (int t : format_tokens)
    if (t < 0 || t >= vocab.size)
      throw std::invalid_argument("format token out of range");
}

double Task::accuracy_reward(PromptId prompt, const TokenSequence& tokens) const {
  return verifier(prompt, tokens);
}

double Task::format_reward(const TokenSequence& tokens) const {
  double bonus = 0.0;
  for (int ft : format_tokens)
    if (std::find(tokens.begin(), tokens.end(), ft) != tokens.end())
      bonus += 0.25;
  return bonus;
}

double Task::reward(PromptId prompt, const TokenSequence& tokens) const {
  return accuracy_reward(prompt, tokens) + format_reward(tokens);
}

std::vector<PromptId> sample_prompt_batch(const Task& task, int batch_size,
                                          std::mt19937_64& rng) {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (task.prompts.empty()) throw std::invalid_argument("task has no prompts");
  const double total =
      std::accumulate(task.weights.begin(), task.weights.end(), 0.0);
  std::vector<double> probs(task.weights.size());
  for (std::size_t i = 0; i < probs.size(); ++i)
    probs[i] = task.weights[i] / total;
  std::vector<PromptId> batch(static_cast<std::size_t>(batch_size));
  for (auto& p : batch)
    p = task.prompts[static_cast<std::size_t>(sample_categorical(probs, rng))];
  return batch;
}

Task make_modsum_task(int k, int L, int max_len, bool format_rewards) {
  if (k < 2) throw std::invalid_argument("modsum: k must be >= 2");
  if (L < 1) throw std::invalid_argument("modsum: L must be >= 1");
  Task task;
  task.name = "modsum(" + std::to_string(k) + "," + std::to_string(L) + ")";
  task.vocab.size = k + 3;
  task.vocab.eos_token = k;
  task.vocab.special_tokens = {{"answer_open", k + 1}, {"answer_close", k + 2}};
  task.max_len = max_len;
  task.prompts.resize(static_cast<std::size_t>(k));
  std::iota(task.prompts.begin(), task.prompts.end(), 0);
  task.weights.assign(static_cast<std::size_t>(k), 1.0);
  if (format_rewards) task.format_tokens = {k + 1, k + 2};
  task.verifier = [k, L](PromptId prompt, const TokenSequence& tokens) {
    const int target = prompt % k;
    int sum = 0;
    int digits = 0;
    for (int t : tokens) {
      if (t < k) {
        sum += t;
        if (++digits == L) break;
      }
    }
    return (digits == L && sum % k == target) ? 1.0 : 0.0;
  };
  task.validate();
  return task;
}

Task make_hash_reward_task(const Vocab& vocab, std::vector<PromptId> prompts,
                           int max_len, std::uint64_t table_seed) {
  Task task;
  task.name = "hash_table";
  task.vocab = vocab;
  task.max_len = max_len;
  task.weights.assign(prompts.size(), 1.0);
  task.prompts = std::move(prompts);
  task.verifier = [table_seed](PromptId prompt, const TokenSequence& tokens) {
    std::uint64_t h = mix64(table_seed ^ static_cast<std::uint64_t>(
                                             static_cast<std::int64_t>(prompt)));
    for (int t : tokens) h = mix64(h ^ static_cast<std::uint64_t>(t + 1));
    return (h & 1u) ? 1.0 : 0.0;
  };
  task.validate();
  return task;
}

}  // namespace codistill
