#pragma once

// JSON run configuration: schema, strict parsing and dotted overrides.
//
// Files are merged over the built-in defaults. Keys that do not exist in the
// defaults are rejected, as are values whose JSON type differs from the default.

#include "multilift/env.hpp"
#include "multilift/eval.hpp"
#include "multilift/marl.hpp"

#include <json.hpp>

#include <cstdint>
#include <span>
#include <string>

namespace multilift::config {

using Json = nlohmann::json;

struct RunConfig {
  std::uint64_t seed = 1;
  env::EnvConfig env;
  marl::TrainerConfig marl;
  eval::HoverCheck hover;
  eval::Scenario scenario;

  void validate() const;
};

/// Desk-scale defaults (10 s episodes, 256 environments, reduced network).
RunConfig default_run_config();

Json to_json(const RunConfig& cfg);
/// Strictly merged over default_run_config().
RunConfig from_json(const Json& j);

Json scenario_to_json(const eval::Scenario& s);
/// Merged over the defaults of the scenario kind named in j (setpoint_step if absent).
eval::Scenario scenario_from_json(const Json& j);

/// Recursively copies src into dst; unknown keys or mismatched types throw ConfigError.
void merge_strict(Json& dst, const Json& src, const std::string& path = "");

/// Applies "a.b.c=value". The value is parsed as JSON, falling back to a string.
void apply_override(Json& j, const std::string& assignment);

/// Reads a JSON file (IoError if unreadable, ConfigError if malformed or invalid).
Json read_json_file(const std::string& path);

RunConfig load_run_config(const std::string& path, std::span<const std::string> overrides);

/// Canonical serialization (sorted keys) and its FNV-1a hash.
std::string dump(const RunConfig& cfg);
std::uint64_t hash(const RunConfig& cfg);

}  // namespace multilift::config
