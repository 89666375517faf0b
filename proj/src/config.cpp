#include "h2o/config.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace h2o {

namespace fs = std::filesystem;

nlohmann::json load_json_file(const std::string& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw ValidationError(std::string(what) + ": cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  nlohmann::json j = nlohmann::json::parse(ss.str(), nullptr, false);
  if (j.is_discarded())
    throw ValidationError(std::string(what) + ": '" + path + "' is not valid JSON");
  return j;
}

void apply_override(nlohmann::json& j, const std::string& spec) {
  const std::size_t eq = spec.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ValidationError("override '" + spec + "' must look like key.path=value");
  const std::string path = spec.substr(0, eq);
  const std::string text = spec.substr(eq + 1);

  nlohmann::json* cursor = &j;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (key.empty()) throw ValidationError("override '" + spec + "' has an empty key segment");
    if (dot == std::string::npos) {
      nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
      (*cursor)[key] = value.is_discarded() ? nlohmann::json(text) : value;
      return;
    }
    cursor = &(*cursor)[key];
    start = dot + 1;
  }
}

namespace {

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError(std::string("config: field '") + key + "' has the wrong type");
  }
}

}  // namespace

ModelConfig parse_model_config(const nlohmann::json& j) {
  ModelConfig c;
  read_field(j, "num_joints", c.num_joints);
  read_field(j, "in_channels", c.in_channels);
  read_field(j, "d_model", c.d_model);
  read_field(j, "temporal_len", c.temporal_len);
  read_field(j, "encoder_blocks", c.encoder_blocks);
  read_field(j, "decoder_blocks", c.decoder_blocks);
  read_field(j, "num_heads", c.num_heads);
  read_field(j, "kernel_sizes", c.kernel_sizes);
  read_field(j, "use_hypergraph", c.use_hypergraph);
  read_field(j, "use_enhanced_hyperedge", c.use_enhanced_hyperedge);
  read_field(j, "use_decoder", c.use_decoder);
  read_field(j, "masking_rate", c.masking_rate);
  read_field(j, "share_relpos_heads", c.share_relpos_heads);
  read_field(j, "recompute_hyperedges", c.recompute_hyperedges);
  read_field(j, "norm_attention", c.norm_attention);
  read_field(j, "norm_temporal", c.norm_temporal);
  if (j.contains("dtype")) c.dtype = dtype_from_name(j.at("dtype").get<std::string>());
  c.validate();
  return c;
}

TrainConfig parse_train_config(const nlohmann::json& j) {
  TrainConfig c;
  read_field(j, "epochs", c.epochs);
  read_field(j, "batch_size", c.batch_size);
  read_field(j, "lr", c.lr);
  read_field(j, "lr_decay", c.lr_decay);
  read_field(j, "lr_milestones", c.lr_milestones);
  read_field(j, "lambda1", c.lambda1);
  read_field(j, "lambda2", c.lambda2);
  read_field(j, "seed", c.seed);
  read_field(j, "stage1_epochs", c.stage1_epochs);
  if (j.contains("stage_mode")) {
    const std::string mode = j.at("stage_mode").get<std::string>();
    if (mode == "one_stage")
      c.stage_mode = StageMode::one_stage;
    else if (mode == "two_stage")
      c.stage_mode = StageMode::two_stage;
    else
      throw ValidationError("config: stage_mode must be one_stage or two_stage, got '" + mode +
                            "'");
  }
  return c;
}

std::string resolve_relative(const std::string& base_dir, const std::string& path) {
  fs::path p(path);
  if (p.is_absolute() || base_dir.empty()) return path;
  return (fs::path(base_dir) / p).string();
}

RunConfig parse_run_config(const nlohmann::json& j, const std::string& base_dir) {
  RunConfig c;
  c.raw = j;
  if (!j.contains("topology") || !j.at("topology").is_string())
    throw ValidationError("config: missing 'topology' path");
  c.topology_path = resolve_relative(base_dir, j.at("topology").get<std::string>());
  if (!j.contains("model")) throw ValidationError("config: missing 'model' section");
  c.model = parse_model_config(j.at("model"));
  if (j.contains("train")) c.train = parse_train_config(j.at("train"));
  if (j.contains("train") && j.at("train").contains("train_fraction"))
    c.train_fraction = j.at("train").at("train_fraction").get<double>();
  return c;
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
  nlohmann::json j = load_json_file(path, "config");
  for (const std::string& o : overrides) apply_override(j, o);
  return parse_run_config(j, fs::path(path).parent_path().string());
}

SynthFile load_synth_spec(const std::string& path, const std::vector<std::string>& overrides) {
  nlohmann::json j = load_json_file(path, "synth spec");
  for (const std::string& o : overrides) apply_override(j, o);
  SynthFile out;
  if (!j.contains("topology") || !j.at("topology").is_string())
    throw ValidationError("synth spec: missing 'topology' path");
  out.topology_path =
      resolve_relative(fs::path(path).parent_path().string(), j.at("topology").get<std::string>());
  SynthSpec& s = out.spec;
  read_field(j, "num_subjects", s.num_subjects);
  read_field(j, "sequences_per_subject", s.sequences_per_subject);
  read_field(j, "class_balance", s.class_balance);
  read_field(j, "noise_std", s.noise_std);
  read_field(j, "positive_group", s.positive_group);
  read_field(j, "negative_group", s.negative_group);
  read_field(j, "seed", s.seed);
  if (j.contains("amplitude")) {
    auto r = j.at("amplitude").get<std::vector<double>>();
    if (r.size() != 2) throw ValidationError("synth spec: 'amplitude' must be [min,max]");
    s.amplitude_min = r[0];
    s.amplitude_max = r[1];
  }
  if (j.contains("frequency")) {
    auto r = j.at("frequency").get<std::vector<double>>();
    if (r.size() != 2) throw ValidationError("synth spec: 'frequency' must be [min,max]");
    s.frequency_min = r[0];
    s.frequency_max = r[1];
  }
  if (j.contains("raw_len")) {
    auto r = j.at("raw_len").get<std::vector<std::size_t>>();
    if (r.size() != 2) throw ValidationError("synth spec: 'raw_len' must be [min,max]");
    s.raw_len_min = r[0];
    s.raw_len_max = r[1];
  }
  return out;
}

}  // namespace h2o
