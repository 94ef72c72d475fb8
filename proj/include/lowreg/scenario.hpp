#pragma once

#include "lowreg/core.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace lowreg {

using Json = nlohmann::json;

struct ExperimentConfig {
  std::string id;
  std::string op;
  Json params = Json::object();
  Json tolerances = Json::object();
  std::optional<std::uint64_t> seed;
  /// Table file name inside the output directory (default: <id>.csv).
  std::string output;
};

struct ScenarioConfig {
  std::string name;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string output_dir;
  Json metric = Json::object();
  Json regularization = Json::object();
  std::vector<ExperimentConfig> experiments;
  std::filesystem::path source_dir;  // relative paths (curve CSVs) resolve here
};

/// Parses a scenario file without semantic checks. Throws ConfigError on
/// unreadable files or malformed structure.
ScenarioConfig load_scenario(const std::filesystem::path& path);

/// Schema and invariant diagnostics; empty means valid.
std::vector<std::string> validate_scenario(const ScenarioConfig& config);

const std::vector<std::string>& known_ops();

struct CheckRow {
  std::string name;
  double value = 0.0;
  std::string relation;  // one of < <= > >= ==
  double tolerance = 0.0;
  bool pass = false;
};

enum class ExperimentStatus { Passed, Failed, ConfigError, NumericalError };
std::string_view to_string(ExperimentStatus s);

struct VerificationReport {
  std::string id;
  std::string op;
  std::string digest;  // FNV-1a 64 of the canonical inputs
  ExperimentStatus status = ExperimentStatus::Passed;
  std::string message;
  std::vector<CheckRow> checks;
  std::vector<std::string> artifacts;
  double runtime_seconds = 0.0;  // written to the metadata file only
};

struct RunOptions {
  std::filesystem::path out;  // overrides the scenario output directory
  std::optional<std::uint64_t> seed;
};

struct RunSummary {
  std::vector<VerificationReport> reports;
  std::filesystem::path output_dir;
  /// 0 all checks pass, 1 a check failed, 2 configuration error, 3 numerical failure.
  int exit_code = 0;
};

RunSummary run_scenario(const ScenarioConfig& config, const RunOptions& options = {});

/// Runs only the experiments whose op is listed (single-op CLI subcommands).
/// Exit code 2 if none match.
RunSummary run_filtered(const ScenarioConfig& config, const std::vector<std::string>& ops,
                        const RunOptions& options = {});

std::uint64_t fnv1a64(std::string_view bytes);
std::string library_version();

}  // namespace lowreg
