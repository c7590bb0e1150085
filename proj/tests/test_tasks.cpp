#include <doctest/doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "codistill/task.hpp"
#include "codistill/trainer.hpp"
#include "codistill/verify.hpp"

using namespace codistill;

namespace {

// Reference scorer written independently of the library implementation:
// scan for digit tokens, score the first L, then add marker presence bonuses.
double reference_modsum_reward(int k, int L, PromptId target,
                               const TokenSequence& tokens, bool format) {
  std::vector<int> digits;
  for (int t : tokens)
    if (t >= 0 && t < k) digits.push_back(t);
  double r = 0.0;
  if (static_cast<int>(digits.size()) >= L) {
    int sum = 0;
    for (int i = 0; i < L; ++i) sum += digits[i];
    if (sum % k == target) r = 1.0;
  }
  if (format) {
    const int open = k + 1, close = k + 2;
    if (std::find(tokens.begin(), tokens.end(), open) != tokens.end())
      r += 0.25;
    if (std::find(tokens.begin(), tokens.end(), close) != tokens.end())
      r += 0.25;
  }
  return r;
}

}  // namespace

TEST_CASE("modsum task shape") {
  const Task task = make_modsum_task(3, 3, 8, true);
  CHECK(task.vocab.size == 6);
  CHECK(task.vocab.eos_token == 3);
  CHECK(task.prompts == std::vector<PromptId>{0, 1, 2});
  CHECK(task.max_len == 8);
  CHECK(task.format_tokens.size() == 2);
  CHECK(task.vocab.special_tokens.size() == 2);
  CHECK(make_modsum_task(3, 3, 8, false).format_tokens.empty());
  CHECK_THROWS_WITH(make_modsum_task(1, 3, 8, true), doctest::Contains("k"));
  CHECK_THROWS_WITH(make_modsum_task(3, 0, 8, true), doctest::Contains("L"));
}

TEST_CASE("modsum verifier hand cases") {
  const Task task = make_modsum_task(3, 3, 8, true);
  // full credit: correct sum wrapped in both markers
  CHECK(task.reward(0, {4, 0, 0, 0, 5, 3}) == 1.5);
  // correct sum, no markers
  CHECK(task.reward(0, {0, 0, 0}) == 1.0);
  CHECK(task.reward(0, {}) == 0.0);
  CHECK(task.reward(0, {1, 0, 0}) == 0.0);
  CHECK(task.reward(1, {1, 0, 0}) == 1.0);
  // only the first L digits are scored
  CHECK(task.reward(0, {1, 1, 1, 2}) == 1.0);
  // too few digits
  CHECK(task.reward(0, {1, 1}) == 0.0);
  // markers alone earn only the format bonus
  CHECK(task.reward(0, {4, 5}) == 0.5);
  // bonus is per distinct marker present, not per occurrence
  CHECK(task.reward(0, {4, 4}) == 0.25);
  // non-digit tokens are skipped when collecting digits
  CHECK(task.reward(0, {0, 3, 0, 0}) == 1.0);
  // accuracy-only profile
  const Task plain = make_modsum_task(3, 3, 8, false);
  CHECK(plain.reward(0, {4, 0, 0, 0, 5, 3}) == 1.0);
}

TEST_CASE("modsum agrees with an independently written scorer") {
  for (int k : {2, 3, 5}) {
    for (int L : {1, 2, 4}) {
      const Task task = make_modsum_task(k, L, 6, true);
      auto rng = make_rng(77, {kSeedVerify, static_cast<std::uint64_t>(k),
                               static_cast<std::uint64_t>(L)});
      for (int trial = 0; trial < 500; ++trial) {
        TokenSequence seq;
        const int len = static_cast<int>(rng() % 7);
        for (int t = 0; t < len; ++t)
          seq.push_back(static_cast<int>(
              rng() % static_cast<std::uint64_t>(task.vocab.size)));
        const PromptId q = static_cast<PromptId>(rng() % static_cast<std::uint64_t>(k));
        CHECK(task.reward(q, seq) ==
              reference_modsum_reward(k, L, q, seq, true));
      }
    }
  }
}

TEST_CASE("rewards are deterministic and bounded") {
  const Task task = make_modsum_task(3, 3, 8, true);
  auto rng = make_rng(5, {kSeedVerify, 0});
  const std::set<double> allowed{0.0, 0.25, 0.5, 1.0, 1.25, 1.5};
  for (int trial = 0; trial < 1000; ++trial) {
    TokenSequence seq;
    const int len = static_cast<int>(rng() % 9);
    for (int t = 0; t < len; ++t)
      seq.push_back(static_cast<int>(rng() % 6));
    const PromptId q = static_cast<PromptId>(rng() % 3);
    const double r = task.reward(q, seq);
    CHECK(r == task.reward(q, seq));
    CHECK(allowed.count(r) == 1);
    CHECK(task.accuracy_reward(q, seq) + task.format_reward(seq) == r);
  }
}

TEST_CASE("exact uniform-policy reward matches the closed form") {
  // Enumerated independently with exact rational arithmetic.
  const Task task = make_modsum_task(3, 3, 8, true);
  const TokenPolicy uniform = make_task_policy(task, 1);
  CHECK(std::abs(verify::exact_mean_reward(uniform, task, 8) -
                 0.37810547172687092) < 1e-12);  // 9923/26244
  const Task plain = make_modsum_task(3, 3, 8, false);
  const TokenPolicy uniform_plain = make_task_policy(plain, 1);
  CHECK(std::abs(verify::exact_mean_reward(uniform_plain, plain, 8) -
                 0.13786008230452676) < 1e-12);  // 67/486
}

TEST_CASE("prompt batches follow the task weights") {
  const Task task = make_modsum_task(2, 2, 4, false);
  auto rng = make_rng(19, {kSeedBatch, 0});
  const auto batch = sample_prompt_batch(task, 100000, rng);
  const double f0 =
      static_cast<double>(std::count(batch.begin(), batch.end(), 0)) / 1e5;
  CHECK(std::abs(f0 - 0.5) < 0.01);

  Task skew = task;
  skew.weights = {0.9, 0.1};
  auto rng2 = make_rng(19, {kSeedBatch, 1});
  const auto batch2 = sample_prompt_batch(skew, 100000, rng2);
  const double g0 =
      static_cast<double>(std::count(batch2.begin(), batch2.end(), 0)) / 1e5;
  CHECK(std::abs(g0 - 0.9) < 0.003);  // ~3 sigma

  CHECK_THROWS_WITH(sample_prompt_batch(task, 0, rng),
                    doctest::Contains("batch_size"));
}

TEST_CASE("task validation rejects malformed tasks") {
  Task task = make_modsum_task(2, 2, 4, false);
  CHECK_NOTHROW(task.validate());

  Task no_prompts = task;
  no_prompts.prompts.clear();
  no_prompts.weights.clear();
  CHECK_THROWS_WITH(no_prompts.validate(), doctest::Contains("no prompts"));

  Task bad_weights = task;
  bad_weights.weights = {1.0};
  CHECK_THROWS_WITH(bad_weights.validate(), doctest::Contains("length mismatch"));

  Task neg_weight = task;
  neg_weight.weights = {1.0, -0.5};
  CHECK_THROWS_WITH(neg_weight.validate(), doctest::Contains("> 0"));

  Task bad_len = task;
  bad_len.max_len = 0;
  CHECK_THROWS_WITH(bad_len.validate(), doctest::Contains("max_len"));

  Task no_verifier = task;
  no_verifier.verifier = nullptr;
  CHECK_THROWS_WITH(no_verifier.validate(), doctest::Contains("verifier"));

  Task bad_format = task;
  bad_format.format_tokens = {99};
  CHECK_THROWS_WITH(bad_format.validate(), doctest::Contains("format token"));
}

TEST_CASE("hash-reward task is reproducible and binary") {
  Vocab v;
  v.size = 3;
  v.eos_token = 0;
  const Task a = make_hash_reward_task(v, {0, 1}, 4, 99);
  const Task b = make_hash_reward_task(v, {0, 1}, 4, 99);
  const Task c = make_hash_reward_task(v, {0, 1}, 4, 100);
  auto rng = make_rng(3, {kSeedVerify, 2});
  bool saw_one = false, saw_zero = false, differs = false;
  for (int trial = 0; trial < 200; ++trial) {
    TokenSequence seq;
    const int len = static_cast<int>(rng() % 5);
    for (int t = 0; t < len; ++t)
      seq.push_back(static_cast<int>(rng() % 3));
    const PromptId q = static_cast<PromptId>(rng() % 2);
    const double r = a.reward(q, seq);
    CHECK((r == 0.0 || r == 1.0));
    CHECK(b.reward(q, seq) == r);
    if (c.reward(q, seq) != r) differs = true;
    saw_one = saw_one || r == 1.0;
    saw_zero = saw_zero || r == 0.0;
  }
  CHECK(saw_one);
  CHECK(saw_zero);
  CHECK(differs);
}
