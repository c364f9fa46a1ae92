#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bagau/model.hpp"
#include "bagau/phantom.hpp"
#include "bagau/slices.hpp"
#include "bagau/train.hpp"
#include "json.hpp"

namespace bagau {

// JSON forms. Readers start from the defaults, reject unknown keys and
// throw ConfigError on type errors.
void to_json(nlohmann::json& j, const ModelSpec& s);
void from_json(const nlohmann::json& j, ModelSpec& s);
void to_json(nlohmann::json& j, const AugmentConfig& a);
void from_json(const nlohmann::json& j, AugmentConfig& a);
void to_json(nlohmann::json& j, const TrainConfig& t);
void from_json(const nlohmann::json& j, TrainConfig& t);
void to_json(nlohmann::json& j, const PhantomConfig& p);
void from_json(const nlohmann::json& j, PhantomConfig& p);
void to_json(nlohmann::json& j, const DatasetSplit& s);
void from_json(const nlohmann::json& j, DatasetSplit& s);

struct DataConfig {
    /// Dataset root or manifest file.
    std::string dataset;
    std::array<double, 3> split_ratio{0.8, 0.1, 0.1};
    /// Defaults to the manifest's split seed.
    std::optional<std::uint64_t> split_seed;
};

/// Everything one invocation needs, from one JSON file plus overrides.
struct RunConfig {
    ModelSpec model;
    TrainConfig train;
    DataConfig data;
    PhantomConfig phantom;
    int connectivity = 26;

    void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& r);
void from_json(const nlohmann::json& j, RunConfig& r);

/// Applies `a.b.c=value` to a JSON object. The value is parsed as JSON and
/// taken as a string when that fails. The path must name an existing key.
void apply_override(nlohmann::json& j, const std::string& assignment);

/// Defaults, then the file (if any), then the overrides in order; validated.
[[nodiscard]] RunConfig load_run_config(const std::optional<std::filesystem::path>& file,
                                        const std::vector<std::string>& overrides);

}  // namespace bagau
