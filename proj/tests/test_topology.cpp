#include <doctest.h>

#include <cmath>

#include "h2o/topology.hpp"

using namespace h2o;

namespace {

// Floyd-Warshall oracle, independent of the BFS implementation.
std::vector<int> floyd_warshall(const JointGraph& g) {
  const std::size_t n = g.num_vertices;
  const int inf = 1 << 20;
  std::vector<int> d(n * n, inf);
  for (std::size_t i = 0; i < n; ++i) d[i * n + i] = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (g.adjacency.at(i, j) != 0.0) d[i * n + j] = 1;
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        d[i * n + j] = std::min(d[i * n + j], d[i * n + k] + d[k * n + j]);
  return d;
}

JointGraph random_connected_graph(std::size_t n, Rng& rng) {
  std::vector<std::pair<std::size_t, std::size_t>> bones;
  for (std::size_t v = 1; v < n; ++v) bones.emplace_back(v, rng.index(v));  // spanning tree
  const std::size_t extra = rng.index(n);
  for (std::size_t e = 0; e < extra; ++e) {
    std::size_t i = rng.index(n), j = rng.index(n);
    if (i != j) bones.emplace_back(i, j);
  }
  return make_joint_graph(n, bones);
}

}  // namespace

TEST_CASE("build_incidence from an assignment map") {
  HyperedgePartition p = build_incidence(3, {{0, 0}, {1, 0}, {2, 1}}, 2);
  CHECK(p.incidence.shape() == Shape{3, 2});
  CHECK(p.incidence.at(0, 0) == 1.0);
  CHECK(p.incidence.at(1, 0) == 1.0);
  CHECK(p.incidence.at(2, 1) == 1.0);
  CHECK(p.incidence.at(0, 1) == 0.0);
  for (std::size_t v = 0; v < 3; ++v) {
    double row = 0.0;
    for (std::size_t e = 0; e < 2; ++e) row += p.incidence.at(v, e);
    CHECK(row == 1.0);
  }

  HyperedgePartition single = build_incidence(1, {{0, 0}}, 1);
  DegreeMatrices d = compute_degrees(single);
  CHECK(single.incidence.at(0, 0) == 1.0);
  CHECK(d.vertex_degrees.at(0, 0) == 1.0);
  CHECK(d.hyperedge_degrees.at(0, 0) == 1.0);

  CHECK_THROWS_WITH_AS(build_incidence(3, {{0, 0}, {2, 1}}, 2),
                       doctest::Contains("vertex 1"), ValidationError);
  CHECK_THROWS_WITH_AS(build_incidence(2, {{0, 0}, {1, 0}}, 2),
                       doctest::Contains("hyperedge 1"), ValidationError);
}

TEST_CASE("default 22-joint topology groups match the published joint selection") {
  Topology topo = Topology::from_json_file(std::string(H2O_CONFIG_DIR) + "/topology_imigue.json");
  CHECK(topo.num_vertices() == 22);
  std::vector<double> column_sums(topo.num_hyperedges(), 0.0);
  for (std::size_t v = 0; v < 22; ++v)
    for (std::size_t e = 0; e < topo.num_hyperedges(); ++e)
      column_sums[e] += topo.partition.incidence.at(v, e);
  CHECK(column_sums == std::vector<double>{5, 7, 5, 5});
}

TEST_CASE("compute_degrees matches row and column sums") {
  HyperedgePartition p = build_incidence(3, {{0, 0}, {1, 0}, {2, 1}}, 2);
  DegreeMatrices d = compute_degrees(p);
  CHECK(d.vertex_degrees.at(0, 0) == 1.0);
  CHECK(d.vertex_degrees.at(1, 1) == 1.0);
  CHECK(d.vertex_degrees.at(2, 2) == 1.0);
  CHECK(d.hyperedge_degrees.at(0, 0) == 2.0);
  CHECK(d.hyperedge_degrees.at(1, 1) == 1.0);

  HyperedgePartition all = build_incidence(3, {{0, 0}, {1, 0}, {2, 0}}, 1);
  CHECK(compute_degrees(all).hyperedge_degrees.at(0, 0) == 3.0);

  HyperedgePartition diag = build_incidence(4, {{0, 0}, {1, 1}, {2, 2}, {3, 3}}, 4);
  DegreeMatrices dd = compute_degrees(diag);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(dd.vertex_degrees.at(i, i) == 1.0);
    CHECK(dd.hyperedge_degrees.at(i, i) == 1.0);
  }
}

TEST_CASE("hop distances on known graphs") {
  JointGraph chain = make_joint_graph(4, {{0, 1}, {1, 2}, {2, 3}});
  HopTable hops = hop_distances(chain);
  CHECK(hops.at(0, 3) == 3);
  CHECK(hops.max_hops_plus_one == 4);

  JointGraph k3 = make_joint_graph(3, {{0, 1}, {1, 2}, {0, 2}});
  HopTable h3 = hop_distances(k3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(h3.at(i, j) == (i == j ? 0u : 1u));
  CHECK(h3.max_hops_plus_one == 2);

  JointGraph star = make_joint_graph(5, {{0, 1}, {0, 2}, {0, 3}, {0, 4}});
  HopTable hs = hop_distances(star);
  CHECK(hs.at(1, 2) == 2);
  CHECK(hs.max_hops_plus_one == 3);

  JointGraph disconnected = make_joint_graph(4, {{0, 1}, {2, 3}});
  CHECK_THROWS_WITH_AS(hop_distances(disconnected), doctest::Contains("disconnected"),
                       ValidationError);
}

TEST_CASE("hop distances agree with Floyd-Warshall on random graphs") {
  Rng rng(101);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.index(7);  // up to 8 vertices
    JointGraph g = random_connected_graph(n, rng);
    HopTable hops = hop_distances(g);
    std::vector<int> oracle = floyd_warshall(g);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        CHECK(static_cast<int>(hops.at(i, j)) == oracle[i * n + j]);
        CHECK(hops.at(i, j) == hops.at(j, i));
      }
  }
}

TEST_CASE("hyperedge_pool reduces to identity and group means") {
  HyperedgePartition eye = build_incidence(3, {{0, 0}, {1, 1}, {2, 2}}, 3);
  DegreeMatrices d_eye = compute_degrees(eye);
  NdArray x = NdArray::from_values({3, 2}, {1, 0, 0, 1, 1, 1});
  NdArray pooled = hyperedge_pool(x, eye, d_eye, NdArray::eye(2));
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(pooled[i] == doctest::Approx(x[i]));

  HyperedgePartition one = build_incidence(3, {{0, 0}, {1, 0}, {2, 0}}, 1);
  NdArray mean = hyperedge_pool(x, one, compute_degrees(one), NdArray::eye(2));
  CHECK(mean.shape() == Shape{1, 2});
  CHECK(mean[0] == doctest::Approx(2.0 / 3.0));
  CHECK(mean[1] == doctest::Approx(2.0 / 3.0));

  CHECK_THROWS_AS(hyperedge_pool(NdArray({4, 2}), one, compute_degrees(one), NdArray::eye(2)),
                  ValidationError);
}

TEST_CASE("hyperedge_pool matches the loop-based group-mean oracle") {
  Rng rng(55);
  for (int trial = 0; trial < 20; ++trial) {
    std::map<std::size_t, std::size_t> assign;
    std::vector<std::size_t> groups(6);
    // keep both hyperedges nonempty
    groups[0] = 0;
    groups[1] = 1;
    for (std::size_t v = 2; v < 6; ++v) groups[v] = rng.index(2);
    for (std::size_t v = 0; v < 6; ++v) assign[v] = groups[v];
    HyperedgePartition p = build_incidence(6, assign, 2);
    DegreeMatrices d = compute_degrees(p);

    NdArray x({6, 3}), w({3, 3});
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.normal(0, 1);
    for (std::size_t i = 0; i < w.numel(); ++i) w[i] = rng.normal(0, 1);

    NdArray got = hyperedge_pool(x, p, d, w);

    for (std::size_t e = 0; e < 2; ++e) {
      std::vector<double> mean(3, 0.0);
      std::size_t count = 0;
      for (std::size_t v = 0; v < 6; ++v)
        if (groups[v] == e) {
          for (std::size_t c = 0; c < 3; ++c) mean[c] += x.at(v, c);
          ++count;
        }
      for (std::size_t c = 0; c < 3; ++c) mean[c] /= static_cast<double>(count);
      for (std::size_t c = 0; c < 3; ++c) {
        double expect = 0.0;
        for (std::size_t k = 0; k < 3; ++k) expect += mean[k] * w.at(k, c);
        CHECK(std::fabs(got.at(e, c) - expect) < 1e-12);
      }
    }
  }
}

TEST_CASE("gather_relpos is a pure gather") {
  JointGraph single = make_joint_graph(1, {});
  HopTable h1 = hop_distances(single);
  NdArray r1 = NdArray::from_values({1, 2}, {3.0, 4.0});
  NdArray out1 = gather_relpos(h1, r1);
  CHECK(out1.at(0, 0, 0) == 3.0);
  CHECK(out1.at(0, 0, 1) == 4.0);

  JointGraph pair = make_joint_graph(2, {{0, 1}});
  HopTable h2 = hop_distances(pair);
  NdArray r2 = NdArray::from_values({2, 2}, {1, 1, 2, 2});
  NdArray out2 = gather_relpos(h2, r2);
  CHECK(out2.at(0, 1, 0) == 2.0);
  CHECK(out2.at(0, 1, 1) == 2.0);
  CHECK(out2.at(0, 0, 0) == 1.0);

  // table too small for the observed hops
  NdArray small = NdArray::from_values({1, 2}, {9.0, 9.0});
  CHECK_THROWS_WITH_AS(gather_relpos(h2, small), doctest::Contains("exceeds"), ValidationError);

  JointGraph star = make_joint_graph(5, {{0, 1}, {0, 2}, {0, 3}, {0, 4}});
  HopTable hs = hop_distances(star);
  Rng rng(8);
  NdArray r({hs.max_hops_plus_one, 3});
  for (std::size_t i = 0; i < r.numel(); ++i) r[i] = rng.normal(0, 1);
  NdArray rphi = gather_relpos(hs, r);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j)
      for (std::size_t c = 0; c < 3; ++c) {
        CHECK(rphi.at(i, j, c) == r.at(hs.at(i, j), c));
        CHECK(rphi.at(i, j, c) == rphi.at(j, i, c));  // symmetric in (i,j)
      }
}

TEST_CASE("topology json validation names the offending entry") {
  CHECK_THROWS_WITH_AS(Topology::from_json_text("{"), doctest::Contains("not valid JSON"),
                       ValidationError);
  CHECK_THROWS_WITH_AS(
      Topology::from_json_text(
          R"({"num_vertices": 3, "bones": [[0,1],[1,9]], "hyperedges": [[0,1,2]]})"),
      doctest::Contains("bones[1]"), ValidationError);
  CHECK_THROWS_WITH_AS(
      Topology::from_json_text(
          R"({"num_vertices": 3, "bones": [[0,1],[1,2]], "hyperedges": [[0,1],[1,2]]})"),
      doctest::Contains("hyperedges[1]"), ValidationError);

  Topology mini = Topology::from_json_file(std::string(H2O_CONFIG_DIR) + "/topology_mini.json");
  CHECK(mini.num_vertices() == 10);
  CHECK(mini.num_hyperedges() == 5);
  CHECK(mini.root_joint == 0);
  // member_mean broadcasts group means: rows of a group are identical
  for (std::size_t j = 0; j < 10; ++j)
    CHECK(mini.member_mean.at(0, j) == mini.member_mean.at(1, j));
}
