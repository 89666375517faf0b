#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "h2o/autodiff.hpp"

namespace h2o {

struct CheckpointHeader {
  Dtype dtype = Dtype::f64;
  std::uint64_t seed = 0;
  std::size_t param_count = 0;
};

// JSON map name -> {shape, values} with a header; doubles round-trip
// bit-exactly through the serialized text.
void save_checkpoint(const std::string& path, const std::vector<Parameter>& params,
                     const CheckpointHeader& header);
CheckpointHeader load_checkpoint(const std::string& path, std::vector<Parameter>& params);
CheckpointHeader read_checkpoint_header(const std::string& path);

}  // namespace h2o
