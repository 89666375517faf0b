#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "h2o/het_block.hpp"

namespace h2o {

struct ModelConfig {
  std::size_t num_joints = 0;
  std::size_t in_channels = 3;
  std::size_t d_model = 216;
  std::size_t temporal_len = 52;
  std::size_t encoder_blocks = 6;
  std::size_t decoder_blocks = 2;
  std::size_t num_heads = 9;
  std::vector<std::size_t> kernel_sizes = {1, 3, 5};
  bool use_hypergraph = true;
  bool use_enhanced_hyperedge = true;
  bool use_decoder = true;
  double masking_rate = 0.0;
  bool share_relpos_heads = false;
  bool recompute_hyperedges = false;
  bool norm_attention = true;
  bool norm_temporal = true;
  Dtype dtype = Dtype::f64;

  void validate() const;
  bool decoder_enabled() const { return use_decoder && decoder_blocks > 0; }
};

struct ForwardOutput {
  Tensor reconstruction;  // undefined when the decoder branch is off
  Tensor logit;           // (1,)
  Tensor probability;     // (1,) = sigmoid(logit)
  std::vector<std::size_t> masked_joints;
  std::vector<BlockDiagnostics> encoder_diags;
  std::vector<BlockDiagnostics> decoder_diags;
};

// Encoder/decoder stacks of HET blocks plus the shallow recognition head.
class Model {
 public:
  Model(ModelConfig config, std::shared_ptr<const Topology> topo, std::uint64_t seed);

  // x_o must be (temporal_len, num_joints, in_channels). Masking (train mode
  // only) zeroes round(rate*|V|) joints for all frames and needs mask_rng.
  ForwardOutput forward(const NdArray& x_o, Mode mode, Rng* mask_rng = nullptr,
                        bool with_reconstruction = true, bool diagnostics = false);

  Tensor embed_input(const Tensor& x_o);
  struct Encoded {
    Tensor z;
    Tensor e;
  };
  Encoded encode(const Tensor& x_emb, Mode mode, std::vector<BlockDiagnostics>* diags = nullptr);
  Tensor decode(const Tensor& z, const Tensor& e, Mode mode,
                std::vector<BlockDiagnostics>* diags = nullptr);
  struct Recognition {
    Tensor logit;
    Tensor probability;
  };
  Recognition recognize(const Tensor& z, Mode mode);

  std::vector<Parameter>& parameters() { return params_; }
  std::size_t parameter_count() const;
  const ModelConfig& config() const { return cfg_; }
  const Topology& topology() const { return *topo_; }
  std::uint64_t seed() const { return seed_; }

  static std::vector<std::size_t> sample_masked_joints(double rate, std::size_t num_joints,
                                                       Rng& rng);

 private:
  ModelConfig cfg_;
  std::shared_ptr<const Topology> topo_;
  std::uint64_t seed_ = 0;

  Tensor w_embed_, joint_emb_;
  std::vector<std::unique_ptr<HetBlock>> encoder_;
  std::vector<std::unique_ptr<HetBlock>> decoder_;
  Tensor w_rec_out_, b_rec_out_;
  Tensor head_wq_, head_wk_, head_wv_;
  Tensor head_bn_gamma_, head_bn_beta_;
  BatchNormStats head_bn_stats_;
  Tensor head_mlp_w1_, head_mlp_b1_, head_mlp_w2_, head_mlp_b2_;
  Tensor head_fc_w_, head_fc_b_;
  std::vector<Parameter> params_;
};

}  // namespace h2o
