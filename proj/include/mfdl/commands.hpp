#pragma once

// Experiment drivers behind the command-line tool. Each command takes a JSON
// config (defaults merged with a config file and key=value overrides) and
// writes its outputs under one directory.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mfdl/data_io.hpp"

namespace mfdl {

struct RunContext {
  std::filesystem::path out = "out";
  int jobs = 1;
};

struct CommandResult {
  std::vector<std::string> lines;     ///< human-readable report, one line each
  std::vector<std::string> failures;  ///< empty iff every requested cell succeeded
  std::vector<std::filesystem::path> files;
};

std::vector<std::string> command_names();

/// Full default config for a command, including "seed".
nlohmann::json default_config(const std::string& command);

/// Merges `file` and then each "a.b.c=value" override onto the defaults.
/// Values parse as JSON when they can, as strings otherwise. Keys absent from
/// the defaults are rejected with ConfigError.
nlohmann::json resolve_config(const std::string& command, const nlohmann::json& file,
                              const std::vector<std::string>& overrides);

/// Runs a command on a resolved config. Writes `<command>.config.json` next
/// to the outputs.
CommandResult run_command(const std::string& command, const nlohmann::json& config, const RunContext& context);

/// Dataset selection shared by the training commands.
struct DatasetConfig {
  std::string kind = "blobs";  ///< two_moons | blobs | toy_sine | csv | idx
  Index n = 2000;
  double noise = 0.1;
  int dim = 16;
  int classes = 10;
  double separation = 3.0;
  std::string path;         ///< csv file, or idx images
  std::string labels_path;  ///< idx labels
  double test_fraction = 0.1;
  bool standardize = true;
};

void to_json(nlohmann::json& j, const DatasetConfig& c);
void from_json(const nlohmann::json& j, DatasetConfig& c);

/// Loads or generates the dataset, splits it and standardizes inputs on the
/// training part.
Split load_dataset(const DatasetConfig& config, std::uint64_t seed);

}  // namespace mfdl
