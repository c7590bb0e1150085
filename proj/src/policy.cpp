#include "codistill/policy.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include <json.hpp>

namespace codistill {

void Vocab::validate() const {
  if (size < 2) throw std::invalid_argument("vocab size must be >= 2");
  if (eos_token < 0 || eos_token >= size)
    throw std::invalid_argument("eos_token out of range");
  for (const auto& [name, id] : special_tokens) {
    if (name.empty()) throw std::invalid_argument("special token name empty");
    if (id < 0 || id >= size)
      throw std::invalid_argument("special token '" + name + "' out of range");
  }
}

TokenPolicy::TokenPolicy(Vocab vocab, int context_order,
                         std::vector<PromptId> prompts, double temperature)
    : vocab_(std::move(vocab)),
      context_order_(context_order),
      temperature_(temperature),
      prompts_(std::move(prompts)) {
  vocab_.validate();
  if (context_order_ < 0)
    throw std::invalid_argument("context_order must be >= 0");
  if (!(temperature_ > 0.0))
    throw std::invalid_argument("temperature must be > 0");
  if (prompts_.empty()) throw std::invalid_argument("prompt set empty");
  for (std::size_t i = 1; i < prompts_.size(); ++i)
    if (prompts_[i - 1] >= prompts_[i])
      throw std::invalid_argument("prompts must be strictly increasing");

  const std::size_t v = static_cast<std::size_t>(vocab_.size);
  window_base_.resize(static_cast<std::size_t>(context_order_) + 2);
  window_base_[0] = 0;
  std::size_t pw = 1;  // v^m
  for (int m = 0; m <= context_order_; ++m) {
    window_base_[static_cast<std::size_t>(m) + 1] =
        window_base_[static_cast<std::size_t>(m)] + pw;
    pw *= v;
  }
  rows_per_prompt_ = window_base_.back();
  logits_.assign(prompts_.size() * rows_per_prompt_ * v, 0.0);
}

void TokenPolicy::set_parameters(ParamVector params) {
  if (params.size() != logits_.size())
    throw std::invalid_argument("parameter vector size mismatch");
  logits_ = std::move(params);
}

void TokenPolicy::add_logit_noise(double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (double& x : logits_) x += scale * gauss(rng);
}

std::size_t TokenPolicy::prompt_slot(PromptId prompt) const {
  auto it = std::lower_bound(prompts_.begin(), prompts_.end(), prompt);
  if (it == prompts_.end() || *it != prompt)
    throw std::invalid_argument("unknown prompt " + std::to_string(prompt));
  return static_cast<std::size_t>(it - prompts_.begin());
}

void TokenPolicy::check_tokens(std::span<const int> tokens) const {
  for (int t : tokens)
    if (t < 0 || t >= vocab_.size)
      throw std::invalid_argument("token id " + std::to_string(t) +
                                  " out of range");
}

std::size_t TokenPolicy::context_row(PromptId prompt,
                                     std::span<const int> prefix) const {
  check_tokens(prefix);
  const std::size_t slot = prompt_slot(prompt);
  const std::size_t m = std::min<std::size_t>(
      prefix.size(), static_cast<std::size_t>(context_order_));
  const std::size_t v = static_cast<std::size_t>(vocab_.size);
  std::size_t offset = 0;
  for (std::size_t i = prefix.size() - m; i < prefix.size(); ++i)
    offset = offset * v + static_cast<std::size_t>(prefix[i]);
  return slot * rows_per_prompt_ + window_base_[m] + offset;
}

std::size_t TokenPolicy::flat_index(std::size_t row, int token) const {
  return row * static_cast<std::size_t>(vocab_.size) +
         static_cast<std::size_t>(token);
}

TokenSequence TokenPolicy::row_context(std::size_t row) const {
  const std::size_t local = row % rows_per_prompt_;
  std::size_t m = 0;
  while (local >= window_base_[m + 1]) ++m;
  std::size_t offset = local - window_base_[m];
  TokenSequence ctx(m);
  const std::size_t v = static_cast<std::size_t>(vocab_.size);
  for (std::size_t i = m; i-- > 0;) {
    ctx[i] = static_cast<int>(offset % v);
    offset /= v;
  }
  return ctx;
}

PromptId TokenPolicy::row_prompt(std::size_t row) const {
  return prompts_.at(row / rows_per_prompt_);
}

void TokenPolicy::row_log_probs(std::size_t row, std::span<double> out) const {
  const std::size_t v = static_cast<std::size_t>(vocab_.size);
  if (out.size() != v) throw std::invalid_argument("row_log_probs: bad span");
  const double* logit = &logits_[row * v];
  const double inv_t = 1.0 / temperature_;
  double mx = logit[0] * inv_t;
  for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, logit[j] * inv_t);
  double sum = 0.0;
  for (std::size_t j = 0; j < v; ++j) {
    out[j] = logit[j] * inv_t - mx;
    sum += std::exp(out[j]);
  }
  const double lse = std::log(sum);
  for (std::size_t j = 0; j < v; ++j) out[j] -= lse;
}

std::vector<double> TokenPolicy::row_log_probs(std::size_t row) const {
  std::vector<double> out(static_cast<std::size_t>(vocab_.size));
  row_log_probs(row, out);
  return out;
}

double TokenPolicy::token_log_prob(PromptId prompt, std::span<const int> prefix,
                                   int token) const {
  check_tokens({&token, 1});
  std::vector<double> lp(static_cast<std::size_t>(vocab_.size));
  row_log_probs(context_row(prompt, prefix), lp);
  return lp[static_cast<std::size_t>(token)];
}

double TokenPolicy::log_prob(PromptId prompt, const TokenSequence& tokens) const {
  double total = 0.0;
  for (double lp : per_token_log_probs(prompt, tokens)) total += lp;
  // Empty sequence: still validate the prompt id.
  if (tokens.empty()) (void)prompt_slot(prompt);
  return total;
}

std::vector<double> TokenPolicy::per_token_log_probs(
    PromptId prompt, const TokenSequence& tokens) const {
  check_tokens(tokens);
  (void)prompt_slot(prompt);
  std::vector<double> out(tokens.size());
  std::vector<double> lp(static_cast<std::size_t>(vocab_.size));
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const std::size_t row =
        context_row(prompt, std::span<const int>(tokens.data(), t));
    row_log_probs(row, lp);
    out[t] = lp[static_cast<std::size_t>(tokens[t])];
  }
  return out;
}

std::vector<std::size_t> TokenPolicy::context_rows(
    PromptId prompt, const TokenSequence& tokens) const {
  check_tokens(tokens);
  std::vector<std::size_t> rows(tokens.size());
  for (std::size_t t = 0; t < tokens.size(); ++t)
    rows[t] = context_row(prompt, std::span<const int>(tokens.data(), t));
  return rows;
}

TokenSequence TokenPolicy::sample(PromptId prompt, const TokenSequence& prefix,
                                  int max_new, std::mt19937_64& rng) const {
  check_tokens(prefix);
  (void)prompt_slot(prompt);
  if (max_new < 0) throw std::invalid_argument("max_new must be >= 0");
  TokenSequence context = prefix;
  TokenSequence emitted;
  emitted.reserve(static_cast<std::size_t>(max_new));
  const std::size_t v = static_cast<std::size_t>(vocab_.size);
  std::vector<double> probs(v);
  for (int step = 0; step < max_new; ++step) {
    const std::size_t row = context_row(prompt, context);
    row_log_probs(row, probs);
    for (double& p : probs) p = std::exp(p);
    const int tok = sample_categorical(probs, rng);
    emitted.push_back(tok);
    context.push_back(tok);
    if (tok == vocab_.eos_token) break;
  }
  return emitted;
}

void TokenPolicy::add_scaled_grad_row(std::size_t row, int token, double coeff,
                                      ParamVector& acc) const {
  const std::size_t v = static_cast<std::size_t>(vocab_.size);
  if (acc.size() != logits_.size())
    throw std::invalid_argument("gradient accumulator size mismatch");
  std::vector<double> lp(v);
  row_log_probs(row, lp);
  const double scale = coeff / temperature_;
  double* slot = &acc[row * v];
  for (std::size_t j = 0; j < v; ++j) slot[j] -= scale * std::exp(lp[j]);
  slot[static_cast<std::size_t>(token)] += scale;
}

ParamVector TokenPolicy::grad_log_prob(PromptId prompt,
                                       const TokenSequence& tokens) const {
  ParamVector grad(logits_.size(), 0.0);
  const auto rows = context_rows(prompt, tokens);
  for (std::size_t t = 0; t < tokens.size(); ++t)
    add_scaled_grad_row(rows[t], tokens[t], 1.0, grad);
  if (tokens.empty()) (void)prompt_slot(prompt);
  return grad;
}

bool TokenPolicy::operator==(const TokenPolicy& other) const {
  if (!(vocab_ == other.vocab_) || context_order_ != other.context_order_ ||
      prompts_ != other.prompts_)
    return false;
  if (std::bit_cast<std::uint64_t>(temperature_) !=
      std::bit_cast<std::uint64_t>(other.temperature_))
    return false;
  if (logits_.size() != other.logits_.size()) return false;
  for (std::size_t i = 0; i < logits_.size(); ++i)
    if (std::bit_cast<std::uint64_t>(logits_[i]) !=
        std::bit_cast<std::uint64_t>(other.logits_[i]))
      return false;
  return true;
}

// ---------------------------------------------------------------------------
// Checkpoint IO
// ---------------------------------------------------------------------------

namespace {
constexpr const char* kPolicyFormat = "codistill-policy";
constexpr int kPolicyVersion = 1;
}  // namespace

void save_policy(const TokenPolicy& policy, std::ostream& out) {
  nlohmann::json doc;
  doc["format"] = kPolicyFormat;
  doc["version"] = kPolicyVersion;
  doc["vocab"] = {{"size", policy.vocab().size},
                  {"eos", policy.vocab().eos_token},
                  {"special", policy.vocab().special_tokens}};
  doc["context_order"] = policy.context_order();
  doc["temperature"] = policy.temperature();
  doc["prompts"] = policy.prompts();
  nlohmann::json rows = nlohmann::json::array();
  const std::size_t v = static_cast<std::size_t>(policy.vocab().size);
  for (std::size_t row = 0; row < policy.row_count(); ++row) {
    nlohmann::json entry;
    entry["prompt"] = policy.row_prompt(row);
    entry["context"] = policy.row_context(row);
    std::vector<double> logits(v);
    for (std::size_t j = 0; j < v; ++j)
      logits[j] = policy.parameters()[policy.flat_index(row, static_cast<int>(j))];
    entry["logits"] = logits;
    rows.push_back(std::move(entry));
  }
  doc["rows"] = std::move(rows);
  out << doc.dump(1) << '\n';
}

void save_policy_file(const TokenPolicy& policy, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open checkpoint for write: " + path);
  save_policy(policy, out);
  out.flush();
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

TokenPolicy load_policy(std::istream& in) {
  nlohmann::json doc = nlohmann::json::parse(in);
  if (doc.value("format", "") != kPolicyFormat)
    throw std::runtime_error("not a policy checkpoint");
  if (doc.value("version", 0) != kPolicyVersion)
    throw std::runtime_error("unsupported checkpoint version");
  Vocab vocab;
  vocab.size = doc.at("vocab").at("size").get<int>();
  vocab.eos_token = doc.at("vocab").at("eos").get<int>();
  vocab.special_tokens =
      doc.at("vocab").at("special").get<std::map<std::string, int>>();
  TokenPolicy policy(vocab, doc.at("context_order").get<int>(),
                     doc.at("prompts").get<std::vector<PromptId>>(),
                     doc.at("temperature").get<double>());
  const auto& rows = doc.at("rows");
  if (rows.size() != policy.row_count())
    throw std::runtime_error("checkpoint row count mismatch");
  ParamVector params(policy.param_count());
  for (std::size_t row = 0; row < rows.size(); ++row) {
    const auto& entry = rows[row];
    if (entry.at("prompt").get<PromptId>() != policy.row_prompt(row) ||
        entry.at("context").get<TokenSequence>() != policy.row_context(row))
      throw std::runtime_error("checkpoint row order mismatch");
    const auto logits = entry.at("logits").get<std::vector<double>>();
    if (logits.size() != static_cast<std::size_t>(vocab.size))
      throw std::runtime_error("checkpoint row width mismatch");
    for (std::size_t j = 0; j < logits.size(); ++j)
      params[policy.flat_index(row, static_cast<int>(j))] = logits[j];
  }
  policy.set_parameters(std::move(params));
  return policy;
}

TokenPolicy load_policy_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  return load_policy(in);
}

}  // namespace codistill
