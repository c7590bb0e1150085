#pragma once

// Tabular softmax token policies.
//
// A TokenPolicy is an exactly evaluable autoregressive distribution over
// token sequences: for each (prompt, context window) it stores one logit row
// of length vocab.size and emits tokens via softmax(logits / temperature).
// The context window is the last `context_order` tokens of the prefix,
// left-padded with a reserved begin-of-sequence id (== vocab.size) that is
// never sampleable.  Every reachable window has a dense row, so the table is
// total: log_prob never misses, and the flat parameter vector doubles as the
// policy's exact parameterization for gradient work.
//
// Row layout (the stable index map): rows are grouped by prompt in the order
// of `prompts()`; within a prompt, windows are ordered by the number m of
// real (non-pad) tokens they contain, then lexicographically by those
// tokens.  flat index = (row * vocab.size) + token.

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>

#include "codistill/common.hpp"
#include "codistill/vocab.hpp"

namespace codistill {

class TokenPolicy {
 public:
  // Builds a policy with all logits zero (uniform next-token distribution).
  TokenPolicy(Vocab vocab, int context_order, std::vector<PromptId> prompts,
              double temperature = 1.0);

  const Vocab& vocab() const { return vocab_; }
  int context_order() const { return context_order_; }
  double temperature() const { return temperature_; }
  const std::vector<PromptId>& prompts() const { return prompts_; }

  // --- parameter access -----------------------------------------------
  std::size_t param_count() const { return logits_.size(); }
  const ParamVector& parameters() const { return logits_; }
  void set_parameters(ParamVector params);
  // In-place logit perturbation, e.g. for random test instances.
  void add_logit_noise(double scale, std::mt19937_64& rng);

  // --- row / index bookkeeping ----------------------------------------
  std::size_t rows_per_prompt() const { return rows_per_prompt_; }
  std::size_t row_count() const { return prompts_.size() * rows_per_prompt_; }
  // Throws std::invalid_argument("unknown prompt ...") for foreign ids.
  std::size_t prompt_slot(PromptId prompt) const;
  // Row holding the distribution of sequence position t (0-based) given the
  // already-emitted prefix.  The window is derived from the prefix tail.
  std::size_t context_row(PromptId prompt, std::span<const int> prefix) const;
  std::size_t flat_index(std::size_t row, int token) const;
  // Inverse of the row layout: the window tokens of a row (pad excluded).
  TokenSequence row_context(std::size_t row) const;
  PromptId row_prompt(std::size_t row) const;

  // --- measure ----------------------------------------------------------
  // log softmax(logits/temperature) for one row; out.size() == vocab.size.
  void row_log_probs(std::size_t row, std::span<double> out) const;
  std::vector<double> row_log_probs(std::size_t row) const;
  double token_log_prob(PromptId prompt, std::span<const int> prefix,
                        int token) const;
  // Sum of per-token log probs; 0 for the empty sequence.
  double log_prob(PromptId prompt, const TokenSequence& tokens) const;
  std::vector<double> per_token_log_probs(PromptId prompt,
                                          const TokenSequence& tokens) const;
  // Context rows visited when emitting `tokens` (one row per position).
  std::vector<std::size_t> context_rows(PromptId prompt,
                                        const TokenSequence& tokens) const;

  // --- sampling ---------------------------------------------------------
  // Appends up to max_new tokens to a copy of `prefix`, stopping after an
  // emitted eos.  Returns only the newly emitted tokens.
  TokenSequence sample(PromptId prompt, const TokenSequence& prefix,
                       int max_new, std::mt19937_64& rng) const;

  // --- exact gradients ----------------------------------------------------
  // acc[flat(row, j)] += coeff * d log pi(token | row) / d logits[row, j]
  //                    = coeff * (onehot(token) - softmax(row)) / temperature
  void add_scaled_grad_row(std::size_t row, int token, double coeff,
                           ParamVector& acc) const;
  // Gradient of log_prob(prompt, tokens) w.r.t. the flat parameters.
  ParamVector grad_log_prob(PromptId prompt, const TokenSequence& tokens) const;

  bool operator==(const TokenPolicy& other) const;

 private:
  void check_tokens(std::span<const int> tokens) const;

  Vocab vocab_;
  int context_order_ = 0;
  double temperature_ = 1.0;
  std::vector<PromptId> prompts_;
  std::vector<std::size_t> window_base_;  // window_base_[m]: first row with m
                                          // real tokens (per prompt block)
  std::size_t rows_per_prompt_ = 0;
  ParamVector logits_;  // prompts x rows_per_prompt x vocab.size
};

// Text checkpoint format (JSON document, canonical row order).  Round-trips
// bit-exactly: load_policy(save_policy(p)) == p.
void save_policy(const TokenPolicy& policy, std::ostream& out);
void save_policy_file(const TokenPolicy& policy, const std::string& path);
TokenPolicy load_policy(std::istream& in);
TokenPolicy load_policy_file(const std::string& path);

}  // namespace codistill
