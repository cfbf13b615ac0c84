#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcnet/model.hpp"
#include "mcnet/trainer.hpp"

namespace mcnet::cli {

enum ExitCode : int {
  exit_ok = 0,
  exit_check_failure = 1,
  exit_config_error = 2,
  exit_divergence = 3,
  exit_incompatible = 4,
  exit_io_error = 5,
};

/// Bad config file, unknown key, bad value or bad flag combination.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inputs that do not fit together (checkpoint vs config, clip vs model).
class IncompatibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ConfigEntry {
  std::string key;
  std::string value;
  /// "file:line" or "--set", for error messages.
  std::string origin;
};

/// Flat `key = value` lines; `#` starts a comment, blank lines are skipped.
std::vector<ConfigEntry> parse_config_text(const std::string& text, const std::string& origin);
std::vector<ConfigEntry> read_config_file(const std::filesystem::path& path);
/// One `key=value` override.
ConfigEntry parse_override(const std::string& text);

/// Everything a run needs besides its command flags. `seed` drives both
/// model initialization and batch sampling.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;

  /// Every accepted key, in the order they are echoed.
  static const std::vector<std::string>& keys();

  /// Throws ConfigError for an unknown key or a malformed value.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;

  /// All keys as `key = value` lines; reading it back reproduces this config.
  std::string to_text() const;
};

/// Defaults, then the preset bundle named by the last `preset` entry, then
/// every other entry in order. Validates the result.
RunConfig resolve_config(std::span<const ConfigEntry> entries);

/// Runs `mcnet <command> ...`, printing to `out` / `err`; returns an ExitCode.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mcnet::cli
