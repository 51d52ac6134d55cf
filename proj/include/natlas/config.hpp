#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "natlas/clahe.hpp"
#include "natlas/evaluate.hpp"
#include "natlas/fields.hpp"
#include "natlas/phantom.hpp"
#include "natlas/trainer.hpp"

namespace natlas {

inline constexpr int kRunConfigVersion = 1;

struct AtlasOptions {
    /// Atlas grid = input spatial dims times this factor.
    int supersample = 1;
};

/// Everything a CLI run can configure.
struct RunConfig {
    int version = kRunConfigVersion;
    PhantomConfig phantom;
    ClaheConfig clahe;
    ModelConfig model;
    TrainConfig train;
    EvalConfig eval;
    AtlasOptions atlas;

    /// Throws ConfigError listing every violation, one per line.
    void validate() const;
};

nlohmann::json to_json(const PhantomConfig& c);
nlohmann::json to_json(const ClaheConfig& c);
nlohmann::json to_json(const HashGridConfig& c);
nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const EvalConfig& c);
nlohmann::json to_json(const RunConfig& c);

// Strict readers: missing keys keep their defaults, unknown keys and values of
// the wrong type are errors. All violations are collected and thrown together
// as one ConfigError.
ModelConfig model_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);
EvalConfig eval_config_from_json(const nlohmann::json& j);
RunConfig run_config_from_json(const nlohmann::json& j);

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const RunConfig& c, const std::filesystem::path& path);

}  // namespace natlas
