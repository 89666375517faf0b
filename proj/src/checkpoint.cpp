#include "h2o/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace h2o {

namespace {

nlohmann::json read_json_file(const std::string& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw ValidationError(std::string(what) + ": cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  nlohmann::json j = nlohmann::json::parse(ss.str(), nullptr, false);
  if (j.is_discarded())
    throw ValidationError(std::string(what) + ": '" + path + "' is not valid JSON");
  return j;
}

CheckpointHeader parse_header(const nlohmann::json& j, const std::string& path) {
  if (!j.contains("header"))
    throw ValidationError("checkpoint: '" + path + "' has no header");
  const auto& h = j["header"];
  CheckpointHeader header;
  header.dtype = dtype_from_name(h.at("dtype").get<std::string>());
  header.seed = h.at("seed").get<std::uint64_t>();
  header.param_count = h.at("param_count").get<std::size_t>();
  return header;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<Parameter>& params,
                     const CheckpointHeader& header) {
  nlohmann::json j;
  j["header"] = {{"dtype", dtype_name(header.dtype)},
                 {"seed", header.seed},
                 {"param_count", header.param_count}};
  nlohmann::json p = nlohmann::json::object();
  for (const auto& param : params) {
    nlohmann::json entry;
    entry["shape"] = param.tensor.shape();
    entry["values"] = param.tensor.value().raw();
    p[param.name] = std::move(entry);
  }
  j["params"] = std::move(p);
  std::ofstream out(path);
  if (!out) throw ValidationError("checkpoint: cannot write '" + path + "'");
  out << j.dump();
}

CheckpointHeader load_checkpoint(const std::string& path, std::vector<Parameter>& params) {
  nlohmann::json j = read_json_file(path, "checkpoint");
  CheckpointHeader header = parse_header(j, path);
  const auto& stored = j.at("params");
  for (auto& param : params) {
    if (!stored.contains(param.name))
      throw ValidationError("checkpoint: '" + path + "' is missing parameter '" + param.name +
                            "'");
    const auto& entry = stored.at(param.name);
    const Shape shape = entry.at("shape").get<Shape>();
    if (shape != param.tensor.shape())
      throw ValidationError("checkpoint: parameter '" + param.name + "' has shape " +
                            shape_str(shape) + ", expected " +
                            param.tensor.value().shape_str());
    std::vector<double> values = entry.at("values").get<std::vector<double>>();
    param.tensor.value().raw() = std::move(values);
  }
  return header;
}

CheckpointHeader read_checkpoint_header(const std::string& path) {
  nlohmann::json j = read_json_file(path, "checkpoint");
  return parse_header(j, path);
}

}  // namespace h2o
