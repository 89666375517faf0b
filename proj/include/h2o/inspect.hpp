#pragma once

#include <string>
#include <vector>

#include "h2o/model.hpp"

namespace h2o {

// Which encoder blocks to snapshot: first, middle, last (dedup for short
// stacks).
std::vector<std::size_t> inspect_block_picks(std::size_t num_blocks);

// Writes attention_parts.csv with rows
//   block,frame,head,part,i,j,value        (part in {a,b,c,d,combined})
// and hyperedge_features.csv with rows
//   block,frame,row,channel,value
// for the picked blocks of one forward pass.
void dump_diagnostics(const std::string& out_dir, const std::vector<BlockDiagnostics>& diags,
                      const std::vector<std::size_t>& picks, const std::string& stage_tag);

}  // namespace h2o
