#include "h2o/inspect.hpp"

#include <filesystem>
#include <fstream>
#include <set>

namespace h2o {

namespace fs = std::filesystem;

std::vector<std::size_t> inspect_block_picks(std::size_t num_blocks) {
  if (num_blocks == 0) return {};
  std::set<std::size_t> picks{0, num_blocks / 2, num_blocks - 1};
  return {picks.begin(), picks.end()};
}

void dump_diagnostics(const std::string& out_dir, const std::vector<BlockDiagnostics>& diags,
                      const std::vector<std::size_t>& picks, const std::string& stage_tag) {
  fs::create_directories(out_dir);
  std::ofstream parts_csv(fs::path(out_dir) / (stage_tag + "_attention_parts.csv"),
                          std::ios::out);
  parts_csv << "block,frame,head,part,i,j,value\n";
  parts_csv.precision(17);
  std::ofstream e_csv(fs::path(out_dir) / (stage_tag + "_hyperedge_features.csv"), std::ios::out);
  e_csv << "block,frame,row,channel,value\n";
  e_csv.precision(17);

  for (std::size_t b : picks) {
    if (b >= diags.size()) continue;
    const BlockDiagnostics& d = diags[b];
    for (const auto& [part, heads] : d.parts) {
      for (std::size_t h = 0; h < heads.size(); ++h) {
        const NdArray& scores = heads[h];  // (T,V,V)
        for (std::size_t t = 0; t < scores.dim(0); ++t)
          for (std::size_t i = 0; i < scores.dim(1); ++i)
            for (std::size_t j = 0; j < scores.dim(2); ++j)
              parts_csv << b << "," << t << "," << h << "," << part << "," << i << "," << j << ","
                        << scores.at(t, i, j) << "\n";
      }
    }
    if (d.hyperedge_features.defined()) {
      const NdArray& e = d.hyperedge_features;  // (T,V,D)
      for (std::size_t t = 0; t < e.dim(0); ++t)
        for (std::size_t r = 0; r < e.dim(1); ++r)
          for (std::size_t c = 0; c < e.dim(2); ++c)
            e_csv << b << "," << t << "," << r << "," << c << "," << e.at(t, r, c) << "\n";
    }
  }
}

}  // namespace h2o
