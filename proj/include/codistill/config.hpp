#pragma once

// Strict JSON (de)serialization of TrainConfig.
//
// Every field is optional in the input and falls back to the TrainConfig
// default; unknown fields and wrongly typed values are rejected with a
// ConfigError naming the field.  Serialization emits every field (checkpoint
// paths only when set), so a round trip is lossless and a serialized config
// doubles as the run's reproducibility record.

#include <string>

#include <nlohmann/json.hpp>

#include "codistill/trainer.hpp"

namespace codistill {

std::string to_string(TrainMode mode);
std::string to_string(AdvantageMode mode);
std::string to_string(HintMode mode);
std::string to_string(KlEstimator estimator);

TrainMode train_mode_from_string(const std::string& s);
AdvantageMode advantage_mode_from_string(const std::string& s);
HintMode hint_mode_from_string(const std::string& s);
KlEstimator kl_estimator_from_string(const std::string& s);

TrainConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const TrainConfig& config);

// File helpers.  Loading throws ConfigError (field "file") when the file is
// missing or is not valid JSON; field-level errors propagate unchanged.
TrainConfig load_config_file(const std::string& path);
void save_config_file(const TrainConfig& config, const std::string& path);

}  // namespace codistill
