#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include <json.hpp>

#include "milc/data.hpp"
#include "milc/experiment.hpp"

namespace milc {

/// Dataset generation request: which generator, the per-split shapes, and
/// the generator-specific knobs.
struct GenerateConfig {
    std::string kind;  // mnist | features
    uint64_t seed = 7;
    std::map<std::string, BagGenConfig> splits;  // train / validation / test

    // kind == mnist
    std::optional<std::string> idx_images;
    std::optional<std::string> idx_labels;
    size_t pool_size = 20000;  // synthetic pool when no IDX files given
    int positive_digit = 9;

    // kind == features
    size_t dim = 2048;
    double separation = 5.0;
    uint64_t direction_seed = 99;

    void validate() const;
};

struct TrainConfig {
    ExperimentConfig exp;
    std::string data_train;
    std::string data_validation;
    std::string data_test;
    std::string out;
};

/// Named generator presets: mnist-easy, mnist-1pct, features.
GenerateConfig generate_preset(const std::string& name);

/// Matching training presets (data paths left empty for the caller).
TrainConfig train_preset(const std::string& name);

/// Strict parsers: unknown keys anywhere are a config error; relative paths
/// are resolved against base_dir.
GenerateConfig parse_generate_config(const nlohmann::json& j, const std::string& base_dir);
TrainConfig parse_train_config(const nlohmann::json& j, const std::string& base_dir);

nlohmann::json generate_config_to_json(const GenerateConfig& g);
nlohmann::json train_config_to_json(const TrainConfig& t);

/// Reads and parses a JSON file, mapping failures to IoError/ConfigError.
nlohmann::json load_json_file(const std::string& path);

/// FNV-1a over the canonical (sorted-key) dump; hex string "fnv1a:...".
std::string config_hash(const nlohmann::json& j);

}  // namespace milc
