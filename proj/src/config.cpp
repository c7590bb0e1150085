#include "codistill/config.hpp"

#include <fstream>
#include <set>

namespace codistill {

using nlohmann::json;

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::codistill: return "codistill";
    case TrainMode::grpo_small: return "grpo_small";
    case TrainMode::grpo_large: return "grpo_large";
    case TrainMode::kdrl_frozen_teacher: return "kdrl_frozen_teacher";
    case TrainMode::ct: return "ct";
  }
  throw std::logic_error("unreachable train mode");
}

std::string to_string(AdvantageMode mode) {
  switch (mode) {
    case AdvantageMode::mean_only: return "mean_only";
    case AdvantageMode::std_normalized: return "std_normalized";
  }
  throw std::logic_error("unreachable advantage mode");
}

std::string to_string(HintMode mode) {
  switch (mode) {
    case HintMode::treat_as_small: return "treat_as_small";
    case HintMode::split_ratio: return "split_ratio";
    case HintMode::skip_hint: return "skip_hint";
  }
  throw std::logic_error("unreachable hint mode");
}

std::string to_string(KlEstimator estimator) {
  switch (estimator) {
    case KlEstimator::log_ratio: return "log_ratio";
    case KlEstimator::k3: return "k3";
  }
  throw std::logic_error("unreachable kl estimator");
}

namespace {

[[noreturn]] void bad_enum(const char* field, const std::string& s,
                           const char* expected) {
  throw ConfigError(field, "unknown value '" + s + "' (expected " + expected +
                               ")");
}

}  // namespace

TrainMode train_mode_from_string(const std::string& s) {
  if (s == "codistill") return TrainMode::codistill;
  if (s == "grpo_small") return TrainMode::grpo_small;
  if (s == "grpo_large") return TrainMode::grpo_large;
  if (s == "kdrl_frozen_teacher") return TrainMode::kdrl_frozen_teacher;
  if (s == "ct") return TrainMode::ct;
  bad_enum("mode", s,
           "codistill | grpo_small | grpo_large | kdrl_frozen_teacher | ct");
}

AdvantageMode advantage_mode_from_string(const std::string& s) {
  if (s == "mean_only") return AdvantageMode::mean_only;
  if (s == "std_normalized") return AdvantageMode::std_normalized;
  bad_enum("advantage_mode", s, "mean_only | std_normalized");
}

HintMode hint_mode_from_string(const std::string& s) {
  if (s == "treat_as_small") return HintMode::treat_as_small;
  if (s == "split_ratio") return HintMode::split_ratio;
  if (s == "skip_hint") return HintMode::skip_hint;
  bad_enum("hint_mode", s, "treat_as_small | split_ratio | skip_hint");
}

KlEstimator kl_estimator_from_string(const std::string& s) {
  if (s == "log_ratio") return KlEstimator::log_ratio;
  if (s == "k3") return KlEstimator::k3;
  bad_enum("kl_estimator", s, "log_ratio | k3");
}

namespace {

// Tracks which keys of one JSON object have been consumed so leftovers can be
// reported by name.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string prefix)
      : obj_(j), prefix_(std::move(prefix)) {
    if (!obj_.is_object())
      throw ConfigError(prefix_.empty() ? "config" : prefix_,
                        "expected a JSON object");
  }

  std::string qualify(const char* key) const {
    return prefix_.empty() ? key : prefix_ + "." + key;
  }

  const json* find(const char* key) {
    const auto it = obj_.find(key);
    if (it == obj_.end()) return nullptr;
    seen_.insert(key);
    return &*it;
  }

  void read(const char* key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) throw ConfigError(qualify(key), "expected a number");
      out = v->get<double>();
    }
  }

  void read(const char* key, int& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer())
        throw ConfigError(qualify(key), "expected an integer");
      out = v->get<int>();
    }
  }

  void read(const char* key, std::uint64_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer() ||
          (!v->is_number_unsigned() && v->get<std::int64_t>() < 0))
        throw ConfigError(qualify(key), "expected a nonnegative integer");
      out = v->get<std::uint64_t>();
    }
  }

  void read(const char* key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(qualify(key), "expected a boolean");
      out = v->get<bool>();
    }
  }

  void read(const char* key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw ConfigError(qualify(key), "expected a string");
      out = v->get<std::string>();
    }
  }

  void read(const char* key, std::optional<std::string>& out) {
    if (const json* v = find(key)) {
      if (v->is_null()) {
        out.reset();
        return;
      }
      if (!v->is_string())
        throw ConfigError(qualify(key), "expected a string or null");
      out = v->get<std::string>();
    }
  }

  template <typename Enum, typename Parser>
  void read_enum(const char* key, Enum& out, Parser parser) {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw ConfigError(qualify(key), "expected a string");
      try {
        out = parser(v->get<std::string>());
      } catch (const ConfigError&) {
        throw ConfigError(qualify(key),
                          "unknown value '" + v->get<std::string>() + "'");
      }
    }
  }

  void reject_unknown() const {
    for (const auto& item : obj_.items())
      if (!seen_.contains(item.key()))
        throw ConfigError(qualify(item.key().c_str()), "unknown field");
  }

 private:
  const json& obj_;
  std::string prefix_;
  std::set<std::string> seen_;
};

}  // namespace

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  ObjectReader reader(j, "");
  reader.read("alpha", c.alpha);
  reader.read("T", c.T);
  reader.read("H", c.H);
  reader.read("M", c.M);
  reader.read("G", c.G);
  reader.read("N", c.N);
  reader.read("epsilon", c.epsilon);
  reader.read("eta", c.eta);
  reader.read("K", c.K);
  reader.read("B", c.B);
  reader.read("seed", c.seed);
  reader.read_enum("mode", c.mode, train_mode_from_string);
  reader.read_enum("advantage_mode_small", c.advantage_mode_small,
                   advantage_mode_from_string);
  reader.read_enum("advantage_mode_large", c.advantage_mode_large,
                   advantage_mode_from_string);
  reader.read_enum("hint_mode", c.hint_mode, hint_mode_from_string);
  reader.read_enum("kl_estimator", c.kl_estimator, kl_estimator_from_string);
  reader.read("inner_epochs", c.inner_epochs);
  reader.read("downsample", c.downsample);
  reader.read("update_large", c.update_large);
  reader.read("differentiate_reward", c.differentiate_reward);
  reader.read("eval_every", c.eval_every);
  reader.read("eval_samples", c.eval_samples);
  reader.read("small_context_order", c.small_context_order);
  reader.read("large_context_order", c.large_context_order);
  reader.read("init_logit_noise", c.init_logit_noise);
  reader.read("init_small_checkpoint", c.init_small_checkpoint);
  reader.read("init_large_checkpoint", c.init_large_checkpoint);
  if (const json* t = reader.find("task")) {
    ObjectReader task_reader(*t, "task");
    task_reader.read("family", c.task.family);
    task_reader.read("k", c.task.k);
    task_reader.read("L", c.task.L);
    task_reader.read("format_rewards", c.task.format_rewards);
    task_reader.reject_unknown();
  }
  reader.reject_unknown();
  return c;
}

json config_to_json(const TrainConfig& c) {
  json j;
  j["alpha"] = c.alpha;
  j["T"] = c.T;
  j["H"] = c.H;
  j["M"] = c.M;
  j["G"] = c.G;
  j["N"] = c.N;
  j["epsilon"] = c.epsilon;
  j["eta"] = c.eta;
  j["K"] = c.K;
  j["B"] = c.B;
  j["seed"] = c.seed;
  j["mode"] = to_string(c.mode);
  j["advantage_mode_small"] = to_string(c.advantage_mode_small);
  j["advantage_mode_large"] = to_string(c.advantage_mode_large);
  j["hint_mode"] = to_string(c.hint_mode);
  j["kl_estimator"] = to_string(c.kl_estimator);
  j["inner_epochs"] = c.inner_epochs;
  j["downsample"] = c.downsample;
  j["update_large"] = c.update_large;
  j["differentiate_reward"] = c.differentiate_reward;
  j["eval_every"] = c.eval_every;
  j["eval_samples"] = c.eval_samples;
  j["small_context_order"] = c.small_context_order;
  j["large_context_order"] = c.large_context_order;
  j["init_logit_noise"] = c.init_logit_noise;
  if (c.init_small_checkpoint) j["init_small_checkpoint"] = *c.init_small_checkpoint;
  if (c.init_large_checkpoint) j["init_large_checkpoint"] = *c.init_large_checkpoint;
  j["task"] = {{"family", c.task.family},
               {"k", c.task.k},
               {"L", c.task.L},
               {"format_rewards", c.task.format_rewards}};
  return j;
}

TrainConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("file", "cannot open '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("file", "invalid JSON in '" + path + "': " + e.what());
  }
  return config_from_json(j);
}

void save_config_file(const TrainConfig& config, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << config_to_json(config).dump(2) << '\n';
}

}  // namespace codistill
