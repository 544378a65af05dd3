#pragma once

// JSON (de)serialization of the configuration structs. Parsing is strict:
// unknown keys, wrong types and out-of-range values raise ConfigError.
// Missing keys keep their defaults.

#include <stdexcept>
#include <string>

#include "json.hpp"

#include "kano/degradation.hpp"
#include "kano/training.hpp"
#include "kano/unfolding.hpp"

namespace kano {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

nlohmann::json to_json(const SplineGrid& g);
nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const SpecDistribution& d);
nlohmann::json to_json(const AdamConfig& a);
nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const DegradationSpec& s);

// Each overlays `j` onto `base` and validates the result.
SplineGrid grid_from_json(const nlohmann::json& j, SplineGrid base = {});
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});
SpecDistribution distribution_from_json(const nlohmann::json& j, SpecDistribution base = {});
AdamConfig adam_from_json(const nlohmann::json& j, AdamConfig base = {});
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});
DegradationSpec degradation_from_json(const nlohmann::json& j, DegradationSpec base = {});

nlohmann::json load_json_file(const std::string& path);

}  // namespace kano
