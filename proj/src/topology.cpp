#include "h2o/topology.hpp"

#include <deque>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace h2o {

JointGraph make_joint_graph(std::size_t num_vertices,
                            const std::vector<std::pair<std::size_t, std::size_t>>& bones,
                            std::vector<std::string> joint_names) {
  if (num_vertices == 0) throw ValidationError("joint graph: num_vertices must be >= 1");
  if (!joint_names.empty() && joint_names.size() != num_vertices)
    throw ValidationError("joint graph: " + std::to_string(joint_names.size()) +
                          " joint names for " + std::to_string(num_vertices) + " vertices");
  JointGraph g;
  g.num_vertices = num_vertices;
  g.adjacency = NdArray({num_vertices, num_vertices});
  g.joint_names = std::move(joint_names);
  for (std::size_t b = 0; b < bones.size(); ++b) {
    const auto [i, j] = bones[b];
    if (i >= num_vertices || j >= num_vertices)
      throw ValidationError("bones[" + std::to_string(b) + "] references vertex " +
                            std::to_string(std::max(i, j)) + " but num_vertices is " +
                            std::to_string(num_vertices));
    if (i == j)
      throw ValidationError("bones[" + std::to_string(b) + "] is a self loop at vertex " +
                            std::to_string(i));
    g.adjacency.at(i, j) = 1.0;
    g.adjacency.at(j, i) = 1.0;
  }
  return g;
}

HyperedgePartition build_incidence(std::size_t num_vertices,
                                   const std::map<std::size_t, std::size_t>& assignment,
                                   std::size_t num_hyperedges) {
  if (num_hyperedges == 0) throw ValidationError("build_incidence: num_hyperedges must be >= 1");
  HyperedgePartition p;
  p.num_hyperedges = num_hyperedges;
  p.assignment.resize(num_vertices);
  p.incidence = NdArray({num_vertices, num_hyperedges});
  std::vector<std::size_t> column_sums(num_hyperedges, 0);
  for (std::size_t v = 0; v < num_vertices; ++v) {
    auto it = assignment.find(v);
    if (it == assignment.end())
      throw ValidationError("build_incidence: vertex " + std::to_string(v) +
                            " has no hyperedge assignment");
    if (it->second >= num_hyperedges)
      throw ValidationError("build_incidence: vertex " + std::to_string(v) +
                            " assigned to hyperedge " + std::to_string(it->second) +
                            " but num_hyperedges is " + std::to_string(num_hyperedges));
    p.assignment[v] = it->second;
    p.incidence.at(v, it->second) = 1.0;
    ++column_sums[it->second];
  }
  for (std::size_t e = 0; e < num_hyperedges; ++e)
    if (column_sums[e] == 0)
      throw ValidationError("build_incidence: hyperedge " + std::to_string(e) + " is empty");
  return p;
}

HyperedgePartition partition_from_groups(std::size_t num_vertices,
                                         const std::vector<std::vector<std::size_t>>& groups) {
  std::map<std::size_t, std::size_t> assignment;
  for (std::size_t e = 0; e < groups.size(); ++e) {
    for (std::size_t v : groups[e]) {
      if (v >= num_vertices)
        throw ValidationError("hyperedges[" + std::to_string(e) + "] references vertex " +
                              std::to_string(v) + " but num_vertices is " +
                              std::to_string(num_vertices));
      if (assignment.count(v))
        throw ValidationError("hyperedges[" + std::to_string(e) + "]: vertex " +
                              std::to_string(v) + " already belongs to hyperedge " +
                              std::to_string(assignment[v]));
      assignment[v] = e;
    }
  }
  return build_incidence(num_vertices, assignment, groups.size());
}

DegreeMatrices compute_degrees(const HyperedgePartition& partition) {
  const std::size_t v_len = partition.incidence.dim(0);
  const std::size_t e_len = partition.incidence.dim(1);
  DegreeMatrices d;
  d.vertex_degrees = NdArray({v_len, v_len});
  d.hyperedge_degrees = NdArray({e_len, e_len});
  for (std::size_t v = 0; v < v_len; ++v)
    for (std::size_t e = 0; e < e_len; ++e) {
      d.vertex_degrees.at(v, v) += partition.incidence.at(v, e);
      d.hyperedge_degrees.at(e, e) += partition.incidence.at(v, e);
    }
  return d;
}

HopTable hop_distances(const JointGraph& graph) {
  const std::size_t n = graph.num_vertices;
  constexpr std::uint32_t unreached = std::numeric_limits<std::uint32_t>::max();
  HopTable table;
  table.num_vertices = n;
  table.hops.assign(n * n, unreached);
  std::uint32_t max_hop = 0;
  for (std::size_t src = 0; src < n; ++src) {
    std::uint32_t* row = table.hops.data() + src * n;
    row[src] = 0;
    std::deque<std::size_t> queue{src};
    while (!queue.empty()) {
      const std::size_t u = queue.front();
      queue.pop_front();
      for (std::size_t v = 0; v < n; ++v) {
        if (graph.adjacency.at(u, v) != 0.0 && row[v] == unreached) {
          row[v] = row[u] + 1;
          max_hop = std::max(max_hop, row[v]);
          queue.push_back(v);
        }
      }
    }
    for (std::size_t v = 0; v < n; ++v)
      if (row[v] == unreached)
        throw ValidationError("hop_distances: graph is disconnected, no path between vertices " +
                              std::to_string(src) + " and " + std::to_string(v));
  }
  table.max_hops_plus_one = static_cast<std::size_t>(max_hop) + 1;
  return table;
}

NdArray hyperedge_pool(const NdArray& x, const HyperedgePartition& partition,
                       const DegreeMatrices& degrees, const NdArray& w_e) {
  const std::size_t v_len = partition.incidence.dim(0);
  const std::size_t e_len = partition.incidence.dim(1);
  if (x.ndim() != 2 || x.dim(0) != v_len)
    throw ValidationError("hyperedge_pool: features must be (" + std::to_string(v_len) +
                          ",D), got " + x.shape_str());
  if (w_e.ndim() != 2 || w_e.dim(0) != x.dim(1))
    throw ValidationError("hyperedge_pool: weight must be (" + std::to_string(x.dim(1)) +
                          ",D'), got " + w_e.shape_str());
  const std::size_t d_in = x.dim(1), d_out = w_e.dim(1);

  // D_e^{-1} H^T X: mean of member-vertex features per hyperedge.
  NdArray pooled({e_len, d_in});
  for (std::size_t v = 0; v < v_len; ++v) {
    const std::size_t e = partition.assignment[v];
    const double inv = 1.0 / degrees.hyperedge_degrees.at(e, e);
    for (std::size_t c = 0; c < d_in; ++c) pooled.at(e, c) += inv * x.at(v, c);
  }
  NdArray out({e_len, d_out});
  for (std::size_t e = 0; e < e_len; ++e)
    for (std::size_t k = 0; k < d_in; ++k) {
      const double p = pooled.at(e, k);
      for (std::size_t c = 0; c < d_out; ++c) out.at(e, c) += p * w_e.at(k, c);
    }
  return out;
}

NdArray gather_relpos(const HopTable& hops, const NdArray& r_table) {
  if (r_table.ndim() != 2)
    throw ValidationError("gather_relpos: table must be (m,d), got " + r_table.shape_str());
  const std::size_t m = r_table.dim(0), d = r_table.dim(1);
  const std::size_t n = hops.num_vertices;
  NdArray out({n, n, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const std::uint32_t h = hops.at(i, j);
      if (h >= m)
        throw ValidationError("gather_relpos: hop " + std::to_string(h) + " at (" +
                              std::to_string(i) + "," + std::to_string(j) +
                              ") exceeds table with " + std::to_string(m) + " rows");
      for (std::size_t c = 0; c < d; ++c) out.at(i, j, c) = r_table.at(h, c);
    }
  return out;
}

Topology Topology::build(JointGraph graph, HyperedgePartition partition, std::size_t root_joint) {
  if (partition.incidence.dim(0) != graph.num_vertices)
    throw ValidationError("topology: partition covers " +
                          std::to_string(partition.incidence.dim(0)) + " vertices, graph has " +
                          std::to_string(graph.num_vertices));
  if (root_joint >= graph.num_vertices)
    throw ValidationError("topology: root_joint " + std::to_string(root_joint) +
                          " out of range for " + std::to_string(graph.num_vertices) + " vertices");
  Topology t;
  t.graph = std::move(graph);
  t.degrees = compute_degrees(partition);
  t.hops = hop_distances(t.graph);
  t.root_joint = root_joint;

  const std::size_t v_len = t.graph.num_vertices;
  t.member_mean = NdArray({v_len, v_len});
  for (std::size_t i = 0; i < v_len; ++i) {
    const std::size_t e = partition.assignment[i];
    const double inv = 1.0 / t.degrees.hyperedge_degrees.at(e, e);
    for (std::size_t j = 0; j < v_len; ++j)
      if (partition.assignment[j] == e) t.member_mean.at(i, j) = inv;
  }
  t.partition = std::move(partition);
  return t;
}

namespace {

nlohmann::json parse_json_or_throw(const std::string& text, const std::string& origin) {
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ValidationError(origin + ": not valid JSON");
  return j;
}

}  // namespace

Topology Topology::from_json_text(const std::string& text) {
  nlohmann::json j = parse_json_or_throw(text, "topology");
  if (!j.contains("num_vertices") || !j["num_vertices"].is_number_unsigned())
    throw ValidationError("topology: missing or invalid 'num_vertices'");
  const std::size_t v_len = j["num_vertices"].get<std::size_t>();

  if (!j.contains("bones") || !j["bones"].is_array())
    throw ValidationError("topology: missing 'bones' array");
  std::vector<std::pair<std::size_t, std::size_t>> bones;
  for (std::size_t b = 0; b < j["bones"].size(); ++b) {
    const auto& e = j["bones"][b];
    if (!e.is_array() || e.size() != 2 || !e[0].is_number_unsigned() || !e[1].is_number_unsigned())
      throw ValidationError("topology: bones[" + std::to_string(b) +
                            "] must be a pair of vertex ids");
    bones.emplace_back(e[0].get<std::size_t>(), e[1].get<std::size_t>());
  }

  if (!j.contains("hyperedges") || !j["hyperedges"].is_array())
    throw ValidationError("topology: missing 'hyperedges' array");
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t g = 0; g < j["hyperedges"].size(); ++g) {
    const auto& e = j["hyperedges"][g];
    if (!e.is_array())
      throw ValidationError("topology: hyperedges[" + std::to_string(g) + "] must be an array");
    std::vector<std::size_t> group;
    for (const auto& v : e) {
      if (!v.is_number_unsigned())
        throw ValidationError("topology: hyperedges[" + std::to_string(g) +
                              "] contains a non-integer vertex id");
      group.push_back(v.get<std::size_t>());
    }
    groups.push_back(std::move(group));
  }

  std::vector<std::string> names;
  if (j.contains("joint_names")) {
    for (const auto& n : j["joint_names"]) names.push_back(n.get<std::string>());
  }
  std::size_t root = 0;
  if (j.contains("root_joint")) root = j["root_joint"].get<std::size_t>();

  JointGraph graph = make_joint_graph(v_len, bones, std::move(names));
  HyperedgePartition partition = partition_from_groups(v_len, groups);
  return Topology::build(std::move(graph), std::move(partition), root);
}

Topology Topology::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("topology: cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return from_json_text(ss.str());
  } catch (const ValidationError& e) {
    throw ValidationError(std::string(e.what()) + " (file: " + path + ")");
  }
}

}  // namespace h2o
