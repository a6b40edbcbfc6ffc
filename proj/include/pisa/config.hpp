#pragma once

#include <string>
#include <string_view>

#include <json.hpp>
#include "pisa/harness.hpp"

namespace pisa {

// Config file errors (unknown keys, wrong types, invalid values).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

nlohmann::json to_json(const ExperimentConfig& config);
// Missing keys keep their defaults; unknown keys raise ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);

// Sets a dotted key such as "isr.gamma_pos" inside a config object.
void apply_override(nlohmann::json& config, std::string_view dotted_key, const nlohmann::json& value);

// Stable digest of every field except train.seed.
std::string config_hash(const ExperimentConfig& config);

nlohmann::json to_json(const EvalSummary& s);
EvalSummary eval_summary_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunRecord& r);
RunRecord run_record_from_json(const nlohmann::json& j);

nlohmann::json to_json(const EvalReport& r);
nlohmann::json to_json(const std::vector<SyntheticScene>& scenes);
std::vector<SyntheticScene> scenes_from_json(const nlohmann::json& j);

// Serialized text used for files: two-space indent, trailing newline.
std::string dump(const nlohmann::json& j);

}  // namespace pisa
