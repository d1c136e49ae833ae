#pragma once

#include "mframe/rde_solver.hpp"
#include "mframe/vector_fields.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace mframe {

/// Parsed experiment configuration. `settings` holds the experiment defaults
/// with the user's file merged on top; see README for the schema.
struct ExperimentConfig {
    std::string experiment;
    std::uint64_t seed = 0;
    std::optional<std::filesystem::path> output_dir;
    nlohmann::json settings;
};

/// Merge defaults and resolve every catalog name; throws InputContract on
/// unknown names or malformed sections before any computation.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Experiment defaults as JSON.
nlohmann::json experiment_defaults(const std::string& experiment);

struct RunOutcome {
    bool has_targets = false;
    bool passed = true;
    nlohmann::json acceptance;
};

/// Writes manifest.json (before any data), results.csv, acceptance.json and
/// experiment-specific CSVs into `out`.
RunOutcome run(const ExperimentConfig& config, const std::filesystem::path& out);

/// Sorted listing of frames, fields, drivers and experiments.
std::string list_catalog();

/// Catalog field by name; `spec` holds optional parameters.
FieldFamily catalog_field(const std::string& name, const nlohmann::json& spec = nlohmann::json::object());
std::vector<std::string> catalog_field_names();

/// {"error": {"kind": ..., "message": ...}}
nlohmann::json error_json(const std::exception& e);

} // namespace mframe
