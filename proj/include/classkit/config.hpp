#pragma once

#include <string>
#include <vector>

#include "classkit/trainer.hpp"

namespace classkit {

// One experiment's worth of knobs: architecture plus training schedule,
// with the loss and region-window settings flattened in. Output locations
// are deliberately not keys; they belong to the command line.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

struct ConfigKeyInfo {
  std::string name;
  std::string kind;  // int | uint | float | bool | choice | float list
  std::string doc;
};

// Stable listing of every recognized key, in documentation order.
const std::vector<ConfigKeyInfo>& run_config_keys();

// Formatted value of one key; doubles print in shortest round-trip form.
std::string get_key(const RunConfig& cfg, const std::string& key);

// Parses and assigns one key. Unknown key or an unparsable value throws
// ConfigError naming both.
void set_key(RunConfig& cfg, const std::string& key, const std::string& value);

// key=value lines. Blank lines and #-comments are allowed; a key may appear
// at most once. Errors name the file and line.
void load_config_file(RunConfig& cfg, const std::string& path);

// Every key as a key=value line, loadable by load_config_file.
std::string dump_config(const RunConfig& cfg);

}  // namespace classkit
