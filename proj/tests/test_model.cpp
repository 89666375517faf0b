#include <doctest.h>

#include <cmath>
#include <set>

#include "h2o/gradcheck.hpp"
#include "h2o/model.hpp"

using namespace h2o;

namespace {

std::shared_ptr<Topology> micro_topology() {
  return std::make_shared<Topology>(Topology::build(
      make_joint_graph(4, {{0, 1}, {1, 2}, {2, 3}}), partition_from_groups(4, {{0, 1}, {2, 3}})));
}

std::shared_ptr<Topology> mini10_topology() {
  JointGraph g = make_joint_graph(
      10, {{0, 1}, {1, 2}, {2, 3}, {2, 4}, {4, 5}, {2, 6}, {6, 7}, {0, 8}, {0, 9}});
  HyperedgePartition p =
      partition_from_groups(10, {{0, 1}, {2, 3}, {4, 5}, {6, 7}, {8, 9}});
  return std::make_shared<Topology>(Topology::build(std::move(g), std::move(p)));
}

ModelConfig micro_model_config() {
  ModelConfig cfg;
  cfg.num_joints = 4;
  cfg.d_model = 6;
  cfg.temporal_len = 4;
  cfg.encoder_blocks = 1;
  cfg.decoder_blocks = 1;
  cfg.num_heads = 2;
  return cfg;
}

NdArray random_input(const ModelConfig& cfg, Rng& rng, double scale = 0.5) {
  NdArray x({cfg.temporal_len, cfg.num_joints, cfg.in_channels});
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.normal(0.0, scale);
  return x;
}

}  // namespace

TEST_CASE("config validation") {
  ModelConfig cfg = micro_model_config();
  CHECK_NOTHROW(cfg.validate());
  cfg.masking_rate = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg.masking_rate = 0.0;
  cfg.num_heads = 4;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("embedding with identity-like projection reproduces the input") {
  ModelConfig cfg = micro_model_config();
  cfg.d_model = 3;
  cfg.num_heads = 1;
  cfg.kernel_sizes = {1, 3};
  CHECK_THROWS_AS(cfg.validate(), ValidationError);  // 3 channels, 2 branches
  cfg.kernel_sizes = {3};
  Model model(cfg, micro_topology(), 0);
  for (auto& p : model.parameters()) {
    if (p.name == "embed.w")
      p.tensor.value() = NdArray::eye(3);
    else if (p.name == "embed.joint")
      p.tensor.value().fill(0.0);
  }
  Rng rng(1);
  NdArray x = random_input(cfg, rng);
  Tensor emb = model.embed_input(constant(x));
  CHECK(emb.shape() == Shape{4, 4, 3});
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(emb.value()[i] == doctest::Approx(x[i]));
}

TEST_CASE("zero-weight recognition head answers 0.5") {
  ModelConfig cfg = micro_model_config();
  Model model(cfg, micro_topology(), 3);
  for (auto& p : model.parameters()) p.tensor.value().fill(0.0);
  Rng rng(2);
  ForwardOutput out = model.forward(random_input(cfg, rng), Mode::eval);
  CHECK(out.probability.scalar() == doctest::Approx(0.5));
  CHECK(out.logit.scalar() == 0.0);

  // sigmoid arithmetic at logit ln(2): probability 2/3
  Tensor l(NdArray::from_values({1}, {std::log(2.0)}));
  CHECK(sigmoid(l).scalar() == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("decoder disabled leaves the reconstruction undefined") {
  ModelConfig cfg = micro_model_config();
  cfg.use_decoder = false;
  Model model(cfg, micro_topology(), 4);
  Rng rng(3);
  ForwardOutput out = model.forward(random_input(cfg, rng), Mode::train);
  CHECK_FALSE(out.reconstruction.defined());
  CHECK(out.logit.defined());
  Tensor z = constant(NdArray({4, 4, 6}));
  CHECK_THROWS_WITH_AS(model.decode(z, Tensor(), Mode::eval), doctest::Contains("disabled"),
                       ValidationError);
}

TEST_CASE("masking zeroes exactly round(rate*V) joints across all frames") {
  ModelConfig cfg = micro_model_config();
  cfg.num_joints = 10;
  cfg.masking_rate = 0.3;
  auto topo = mini10_topology();
  Model model(cfg, topo, 5);
  Rng rng(4);
  NdArray x = random_input(cfg, rng);
  Rng mask_rng(77);
  ForwardOutput out = model.forward(x, Mode::train, &mask_rng);
  CHECK(out.masked_joints.size() == 3);  // round(0.3 * 10)
  std::set<std::size_t> unique(out.masked_joints.begin(), out.masked_joints.end());
  CHECK(unique.size() == 3);

  // eval mode never masks
  ForwardOutput eval_out = model.forward(x, Mode::eval);
  CHECK(eval_out.masked_joints.empty());

  // train mode without an rng is a contract violation
  CHECK_THROWS_AS(model.forward(x, Mode::train), ValidationError);
}

TEST_CASE("forward validates the input shape") {
  ModelConfig cfg = micro_model_config();
  Model model(cfg, micro_topology(), 6);
  CHECK_THROWS_WITH_AS(model.forward(NdArray({4, 5, 3}), Mode::eval),
                       doctest::Contains("must be"), ValidationError);
}

TEST_CASE("reconstruction shape equals input shape on the test grid") {
  struct Case {
    std::size_t t, v;
  };
  for (Case c : {Case{4, 4}, Case{8, 6}}) {
    ModelConfig cfg = micro_model_config();
    cfg.temporal_len = c.t;
    cfg.num_joints = c.v;
    std::shared_ptr<Topology> topo;
    if (c.v == 4) {
      topo = micro_topology();
    } else {
      topo = std::make_shared<Topology>(
          Topology::build(make_joint_graph(6, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}}),
                          partition_from_groups(6, {{0, 1, 2}, {3, 4, 5}})));
    }
    Model model(cfg, topo, 7);
    Rng rng(5);
    ForwardOutput out = model.forward(random_input(cfg, rng), Mode::train);
    CHECK(out.reconstruction.shape() == Shape{c.t, c.v, 3});
  }
}

TEST_CASE("hypergraph off equals zero-weight hypergraph path bitwise") {
  ModelConfig hg_cfg = micro_model_config();
  ModelConfig bl_cfg = hg_cfg;
  bl_cfg.use_hypergraph = false;
  bl_cfg.use_enhanced_hyperedge = false;

  auto topo = micro_topology();
  Model hg(hg_cfg, topo, 11);
  Model bl(bl_cfg, topo, 11);
  for (auto& p : hg.parameters()) {
    const std::string& n = p.name;
    if (n.find(".w_e") != std::string::npos)  // w_e, w_eq, w_ek, w_ev
      p.tensor.value().fill(0.0);
  }
  Rng rng(6);
  NdArray x = random_input(hg_cfg, rng);
  ForwardOutput a = hg.forward(x, Mode::eval);
  ForwardOutput b = bl.forward(x, Mode::eval);
  CHECK(a.logit.scalar() == b.logit.scalar());
  for (std::size_t i = 0; i < a.reconstruction.numel(); ++i)
    CHECK(a.reconstruction.value()[i] == b.reconstruction.value()[i]);
}

TEST_CASE("forward is deterministic for a fixed seed") {
  ModelConfig cfg = micro_model_config();
  auto topo = micro_topology();
  Model m1(cfg, topo, 42);
  Model m2(cfg, topo, 42);
  Rng rng(7);
  NdArray x = random_input(cfg, rng);
  ForwardOutput o1 = m1.forward(x, Mode::train);
  ForwardOutput o2 = m2.forward(x, Mode::train);
  CHECK(o1.logit.scalar() == o2.logit.scalar());
  for (std::size_t i = 0; i < o1.reconstruction.numel(); ++i)
    CHECK(o1.reconstruction.value()[i] == o2.reconstruction.value()[i]);
}

TEST_CASE("parameter count is a pure function of the config") {
  ModelConfig cfg = micro_model_config();
  auto topo = micro_topology();
  Model m1(cfg, topo, 1);
  Model m2(cfg, topo, 999);
  CHECK(m1.parameter_count() == m2.parameter_count());
  CHECK(m1.parameter_count() > 0);

  ModelConfig no_dec = cfg;
  no_dec.use_decoder = false;
  Model m3(no_dec, topo, 1);
  CHECK(m3.parameter_count() < m1.parameter_count());

  // decoder presence must not shift the other modules' initialization
  for (std::size_t i = 0; i < m3.parameters().size(); ++i) {
    const Parameter& p3 = m3.parameters()[i];
    if (p3.name.rfind("decoder", 0) == 0) continue;
    const Parameter* match = nullptr;
    for (const auto& p1 : m1.parameters())
      if (p1.name == p3.name) match = &p1;
    REQUIRE(match != nullptr);
    for (std::size_t k = 0; k < p3.tensor.numel(); ++k)
      CHECK(p3.tensor.value()[k] == match->tensor.value()[k]);
  }
}

TEST_CASE("encoder gradcheck on a two-block micro config") {
  ModelConfig cfg = micro_model_config();
  cfg.encoder_blocks = 2;
  cfg.decoder_blocks = 0;
  cfg.use_decoder = false;
  Model model(cfg, micro_topology(), 23);
  Rng rng(8);
  NdArray x = random_input(cfg, rng);
  auto loss_fn = [&]() {
    ForwardOutput out = model.forward(x, Mode::train);
    return bce_loss(reshape(out.probability, {1}), {1});
  };
  FiniteDiffReport report = finite_diff_check(loss_fn, model.parameters(), 1e-5, 1e-4, 8, 6);
  CHECK(report.pass);
}
