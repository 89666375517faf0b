#include "h2o/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace h2o {

void ModelConfig::validate() const {
  if (num_joints == 0) throw ValidationError("model: num_joints must be >= 1");
  if (in_channels == 0) throw ValidationError("model: in_channels must be >= 1");
  if (encoder_blocks < 1) throw ValidationError("model: encoder needs at least one block");
  if (masking_rate < 0.0 || masking_rate >= 1.0)
    throw ValidationError("model: masking_rate must be in [0,1)");
  if (num_heads == 0 || d_model % num_heads != 0)
    throw ValidationError("model: d_model " + std::to_string(d_model) +
                          " not divisible by num_heads " + std::to_string(num_heads));
  if (use_enhanced_hyperedge && !use_hypergraph)
    throw ValidationError("model: enhanced hyperedge requires use_hypergraph");
  if (d_model % kernel_sizes.size() != 0)
    throw ValidationError("model: d_model " + std::to_string(d_model) + " not divisible by " +
                          std::to_string(kernel_sizes.size()) + " temporal branches");
}

Model::Model(ModelConfig config, std::shared_ptr<const Topology> topo, std::uint64_t seed)
    : cfg_(std::move(config)), topo_(std::move(topo)), seed_(seed) {
  cfg_.validate();
  if (!topo_) throw ValidationError("model: topology is required");
  if (topo_->num_vertices() != cfg_.num_joints)
    throw ValidationError("model: config has " + std::to_string(cfg_.num_joints) +
                          " joints but topology has " + std::to_string(topo_->num_vertices()));
  const Dtype dt = cfg_.dtype;
  const std::size_t d = cfg_.d_model;

  {
    Rng rng(Rng::derive(seed, "embed"));
    NdArray w({cfg_.in_channels, d}, dt);
    init_fan_in_uniform(w, cfg_.in_channels, rng);
    w_embed_ = Tensor(std::move(w), true);
    NdArray je({cfg_.num_joints, d}, dt);
    init_normal(je, 0.02, rng);
    joint_emb_ = Tensor(std::move(je), true);
  }

  auto block_config = [&](ShortcutKind sc, BlockRole role) {
    HetBlockConfig bc;
    bc.d_in = d;
    bc.d_model = d;
    bc.num_heads = cfg_.num_heads;
    bc.kernel_sizes = cfg_.kernel_sizes;
    bc.shortcut = sc;
    bc.role = role;
    bc.use_hypergraph = cfg_.use_hypergraph;
    bc.use_enhanced_hyperedge = cfg_.use_enhanced_hyperedge;
    bc.share_relpos_heads = cfg_.share_relpos_heads;
    bc.recompute_hyperedges = cfg_.recompute_hyperedges;
    bc.norm_attention = cfg_.norm_attention;
    bc.norm_temporal = cfg_.norm_temporal;
    bc.dtype = dt;
    return bc;
  };
  for (std::size_t i = 0; i < cfg_.encoder_blocks; ++i)
    encoder_.push_back(std::make_unique<HetBlock>(
        block_config(ShortcutKind::identity, BlockRole::encoder), *topo_,
        Rng::derive(seed, "encoder.block" + std::to_string(i))));
  if (cfg_.decoder_enabled()) {
    Rng rng(Rng::derive(seed, "decoder.out"));
    for (std::size_t i = 0; i < cfg_.decoder_blocks; ++i)
      decoder_.push_back(std::make_unique<HetBlock>(
          block_config(ShortcutKind::projection, BlockRole::decoder), *topo_,
          Rng::derive(seed, "decoder.block" + std::to_string(i))));
    NdArray w({d, cfg_.in_channels}, dt);
    init_fan_in_uniform(w, d, rng);
    w_rec_out_ = Tensor(std::move(w), true);
    b_rec_out_ = Tensor(NdArray({cfg_.in_channels}, dt), true);
  }

  {
    Rng rng(Rng::derive(seed, "head"));
    auto weight = [&](std::size_t rows, std::size_t cols) {
      NdArray w({rows, cols}, dt);
      init_fan_in_uniform(w, rows, rng);
      return Tensor(std::move(w), true);
    };
    head_wq_ = weight(d, d);
    head_wk_ = weight(d, d);
    head_wv_ = weight(d, d);
    head_bn_gamma_ = Tensor(NdArray::full({d}, 1.0, dt), true);
    head_bn_beta_ = Tensor(NdArray({d}, dt), true);
    head_mlp_w1_ = weight(d, d);
    head_mlp_b1_ = Tensor(NdArray({d}, dt), true);
    head_mlp_w2_ = weight(d, d);
    head_mlp_b2_ = Tensor(NdArray({d}, dt), true);
    head_fc_w_ = weight(d, 1);
    head_fc_b_ = Tensor(NdArray({1}, dt), true);
  }

  auto push = [&](const std::string& name, Tensor& t) {
    if (!t.defined()) return;
    t.set_name(name);
    params_.push_back({name, t});
  };
  push("embed.w", w_embed_);
  push("embed.joint", joint_emb_);
  for (std::size_t i = 0; i < encoder_.size(); ++i)
    encoder_[i]->collect_parameters("encoder.block" + std::to_string(i), params_);
  for (std::size_t i = 0; i < decoder_.size(); ++i)
    decoder_[i]->collect_parameters("decoder.block" + std::to_string(i), params_);
  push("decoder.out.w", w_rec_out_);
  push("decoder.out.b", b_rec_out_);
  push("head.w_q", head_wq_);
  push("head.w_k", head_wk_);
  push("head.w_v", head_wv_);
  push("head.bn.gamma", head_bn_gamma_);
  push("head.bn.beta", head_bn_beta_);
  push("head.mlp.w1", head_mlp_w1_);
  push("head.mlp.b1", head_mlp_b1_);
  push("head.mlp.w2", head_mlp_w2_);
  push("head.mlp.b2", head_mlp_b2_);
  push("head.fc.w", head_fc_w_);
  push("head.fc.b", head_fc_b_);
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

std::vector<std::size_t> Model::sample_masked_joints(double rate, std::size_t num_joints,
                                                     Rng& rng) {
  const std::size_t count =
      static_cast<std::size_t>(std::llround(rate * static_cast<double>(num_joints)));
  std::vector<std::size_t> all(num_joints);
  std::iota(all.begin(), all.end(), 0);
  std::shuffle(all.begin(), all.end(), rng.engine());
  all.resize(count);
  std::sort(all.begin(), all.end());
  return all;
}

Tensor Model::embed_input(const Tensor& x_o) {
  return add_mat_bcast(matmul(x_o, w_embed_), joint_emb_);
}

Model::Encoded Model::encode(const Tensor& x_emb, Mode mode,
                             std::vector<BlockDiagnostics>* diags) {
  Tensor x = x_emb;
  Tensor e;
  for (auto& block : encoder_) {
    BlockDiagnostics* d = nullptr;
    if (diags) {
      diags->emplace_back();
      d = &diags->back();
    }
    HetBlock::Output out = block->forward(x, e, *topo_, mode, d);
    x = out.x;
    e = out.e;
  }
  return {x, e};
}

Tensor Model::decode(const Tensor& z, const Tensor& e_in, Mode mode,
                     std::vector<BlockDiagnostics>* diags) {
  if (!cfg_.decoder_enabled())
    throw ValidationError("decode: decoder branch is disabled (decoder_blocks == 0)");
  Tensor x = z;
  Tensor e = e_in;
  for (auto& block : decoder_) {
    BlockDiagnostics* d = nullptr;
    if (diags) {
      diags->emplace_back();
      d = &diags->back();
    }
    HetBlock::Output out = block->forward(x, e, *topo_, mode, d);
    x = out.x;
    e = out.e;
  }
  return linear(x, w_rec_out_, b_rec_out_);
}

Model::Recognition Model::recognize(const Tensor& z, Mode mode) {
  const std::size_t heads = cfg_.num_heads;
  const std::size_t hd = cfg_.d_model / heads;
  Tensor q = matmul(z, head_wq_);
  Tensor k = matmul(z, head_wk_);
  Tensor v = matmul(z, head_wv_);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * hd;
    Tensor qh = slice_lastaxis(q, off, hd);
    Tensor kh = slice_lastaxis(k, off, hd);
    Tensor vh = slice_lastaxis(v, off, hd);
    Tensor scores = scale(matmul_nt(qh, kh), inv_sqrt_d);
    outs.push_back(apply_attention(scores, vh));
  }
  Tensor attn = concat_lastaxis(outs);
  Tensor norm = batchnorm(attn, head_bn_gamma_, head_bn_beta_, head_bn_stats_, mode);
  Tensor hidden = relu(linear(norm, head_mlp_w1_, head_mlp_b1_));
  Tensor mlp = linear(hidden, head_mlp_w2_, head_mlp_b2_);
  Tensor pooled = mean_pool(mean_pool(mlp, 0), 0);  // over T then joints -> (D,)
  Tensor logit =
      reshape(linear(reshape(pooled, {1, cfg_.d_model}), head_fc_w_, head_fc_b_), {1});
  return {logit, sigmoid(logit)};
}

ForwardOutput Model::forward(const NdArray& x_o, Mode mode, Rng* mask_rng,
                             bool with_reconstruction, bool diagnostics) {
  if (x_o.ndim() != 3 || x_o.dim(0) != cfg_.temporal_len || x_o.dim(1) != cfg_.num_joints ||
      x_o.dim(2) != cfg_.in_channels)
    throw ValidationError("forward: input must be (" + std::to_string(cfg_.temporal_len) + "," +
                          std::to_string(cfg_.num_joints) + "," +
                          std::to_string(cfg_.in_channels) + "), got " + x_o.shape_str());
  if (!x_o.all_finite()) throw ValidationError("forward: input has non-finite coordinates");

  ForwardOutput out;
  NdArray input = x_o;
  input.set_dtype(cfg_.dtype);
  input.quantize();
  if (cfg_.masking_rate > 0.0 && mode == Mode::train) {
    if (!mask_rng) throw ValidationError("forward: masking requires a mask rng");
    out.masked_joints = sample_masked_joints(cfg_.masking_rate, cfg_.num_joints, *mask_rng);
    for (std::size_t t = 0; t < input.dim(0); ++t)
      for (std::size_t v : out.masked_joints)
        for (std::size_t c = 0; c < input.dim(2); ++c) input.at(t, v, c) = 0.0;
  }

  Tensor x_emb = embed_input(constant(std::move(input)));
  Encoded enc = encode(x_emb, mode, diagnostics ? &out.encoder_diags : nullptr);
  if (with_reconstruction && cfg_.decoder_enabled())
    out.reconstruction = decode(enc.z, enc.e, mode, diagnostics ? &out.decoder_diags : nullptr);
  Recognition rec = recognize(enc.z, mode);
  out.logit = rec.logit;
  out.probability = rec.probability;
  return out;
}

}  // namespace h2o
