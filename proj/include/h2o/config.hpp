#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "h2o/data.hpp"
#include "h2o/model.hpp"
#include "h2o/training.hpp"

namespace h2o {

// Full run description: topology path plus model/train sections, after
// dotted-key overrides. `raw` is the snapshot that reproduces the run.
struct RunConfig {
  nlohmann::json raw;
  std::string topology_path;  // resolved against the config file location
  ModelConfig model;
  TrainConfig train;
  double train_fraction = 0.75;
};

nlohmann::json load_json_file(const std::string& path, const char* what);

// "a.b.c=value" applied after parse; value is parsed as JSON when possible,
// kept as a string otherwise.
void apply_override(nlohmann::json& j, const std::string& spec);

RunConfig parse_run_config(const nlohmann::json& j, const std::string& base_dir);
RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides);

ModelConfig parse_model_config(const nlohmann::json& j);
TrainConfig parse_train_config(const nlohmann::json& j);

// Synthetic data spec file; carries its own topology reference.
struct SynthFile {
  SynthSpec spec;
  std::string topology_path;
};
SynthFile load_synth_spec(const std::string& path, const std::vector<std::string>& overrides);

std::string resolve_relative(const std::string& base_dir, const std::string& path);

}  // namespace h2o
