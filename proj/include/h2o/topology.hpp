#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "h2o/ndarray.hpp"

namespace h2o {

// Skeleton joint graph: symmetric 0/1 adjacency with zero diagonal.
struct JointGraph {
  std::size_t num_vertices = 0;
  NdArray adjacency;  // (V,V)
  std::vector<std::string> joint_names;
};

JointGraph make_joint_graph(std::size_t num_vertices,
                            const std::vector<std::pair<std::size_t, std::size_t>>& bones,
                            std::vector<std::string> joint_names = {});

// Initial vertex->hyperedge membership: each row of the incidence matrix
// sums to exactly 1, each column to at least 1.
struct HyperedgePartition {
  std::size_t num_hyperedges = 0;
  std::vector<std::size_t> assignment;  // vertex -> hyperedge id
  NdArray incidence;                    // (V,E), entries in {0,1}
};

struct DegreeMatrices {
  NdArray vertex_degrees;     // diag (V,V)
  NdArray hyperedge_degrees;  // diag (E,E)
};

// BFS shortest-path distances on the joint graph.
struct HopTable {
  std::size_t num_vertices = 0;
  std::vector<std::uint32_t> hops;  // (V,V) row-major
  std::size_t max_hops_plus_one = 0;

  std::uint32_t at(std::size_t i, std::size_t j) const { return hops[i * num_vertices + j]; }
  std::vector<std::size_t> flat_indices() const {
    return std::vector<std::size_t>(hops.begin(), hops.end());
  }
};

HyperedgePartition build_incidence(std::size_t num_vertices,
                                   const std::map<std::size_t, std::size_t>& assignment,
                                   std::size_t num_hyperedges);
HyperedgePartition partition_from_groups(std::size_t num_vertices,
                                         const std::vector<std::vector<std::size_t>>& groups);

DegreeMatrices compute_degrees(const HyperedgePartition& partition);

HopTable hop_distances(const JointGraph& graph);

// Subset representation: D_e^{-1} H^T X W_e  ->  (E, D').
NdArray hyperedge_pool(const NdArray& x, const HyperedgePartition& partition,
                       const DegreeMatrices& degrees, const NdArray& w_e);

// Pure gather: out[i][j] = r_table[hops(i,j)]  ->  (V, V, d).
NdArray gather_relpos(const HopTable& hops, const NdArray& r_table);

// Everything the attention blocks need, immutable after construction.
struct Topology {
  JointGraph graph;
  HyperedgePartition partition;
  DegreeMatrices degrees;
  HopTable hops;
  NdArray member_mean;  // H D_e^{-1} H^T, (V,V): per-hyperedge mean broadcast
  std::size_t root_joint = 0;

  std::size_t num_vertices() const { return graph.num_vertices; }
  std::size_t num_hyperedges() const { return partition.num_hyperedges; }

  static Topology build(JointGraph graph, HyperedgePartition partition, std::size_t root_joint = 0);
  static Topology from_json_file(const std::string& path);
  static Topology from_json_text(const std::string& text);
};

}  // namespace h2o
