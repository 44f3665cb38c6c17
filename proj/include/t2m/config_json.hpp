#pragma once

#include <nlohmann/json.hpp>

#include "t2m/engine.hpp"
#include "t2m/episodes.hpp"

namespace t2m {

// Validating loaders: required fields must be present, unknown keys are
// rejected, and every invariant is checked before the config is returned.
// Seeds are mandatory so runs are reproducible by construction.
TrainConfig parse_train_config(const nlohmann::json& j);
nlohmann::json train_config_to_json(const TrainConfig& cfg);

SyntheticConfig parse_synthetic_config(const nlohmann::json& j);
nlohmann::json synthetic_config_to_json(const SyntheticConfig& cfg);

nlohmann::json split_metrics_to_json(const SplitMetrics& m);
nlohmann::json report_to_json(const MetricsReport& r);
nlohmann::json symmetry_report_to_json(const SymmetryReport& r);

nlohmann::json load_json_file(const std::string& path);

}  // namespace t2m
