#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fbsde/dynamics.hpp"
#include "fbsde/sde_core.hpp"
#include "fbsde/training.hpp"
#include "fbsde/value_net.hpp"

// INI-style experiment configuration. Sections: [dynamics], [cost], [grid],
// [network], [training], [eval]. Keys are whitelisted per section (and per
// model for [dynamics]); anything unknown is rejected with its line number.
// The config digest hashes the canonical form of every section except [eval],
// so evaluation settings can change without invalidating a checkpoint.

namespace fbsde {

struct ConfigEntry {
  std::string key;
  std::string value;
  int line = 0;  // 1-based source line, 0 for programmatic overrides
};

struct ConfigSection {
  std::string name;
  std::vector<ConfigEntry> entries;
};

struct ParsedConfig {
  std::vector<ConfigSection> sections;

  const ConfigEntry* find(const std::string& section, const std::string& key) const;
  // Replaces or inserts; creates the section if missing.
  void set(const std::string& section, const std::string& key, const std::string& value);
};

ParsedConfig parse_config_text(const std::string& text);
ParsedConfig parse_config_file(const std::string& path);

// assignment has the form "section.key=value".
void apply_override(ParsedConfig& cfg, const std::string& assignment);

struct EvalConfig {
  int n_trials = 128;
  std::uint64_t seed = 1;
  ControlMode mode = ControlMode::kSecondOrder;
};

struct ExperimentConfig {
  DynamicsModel model;
  CostSpec cost;
  TimeGrid grid;
  NetworkSpec network;
  TrainingConfig training;
  int checkpoint_every = 0;  // 0 = final checkpoint only
  EvalConfig eval;

  std::string canonical;  // normalized config text, all sections
  std::string digest;     // 16 hex chars over `canonical` minus [eval]
};

// Validates sections, keys and values; builds the model, cost, grid, network
// spec and training config; computes the canonical text and digest.
ExperimentConfig resolve_config(const ParsedConfig& raw);

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {});

}  // namespace fbsde
