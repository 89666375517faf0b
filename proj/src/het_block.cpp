#include "h2o/het_block.hpp"

#include <cmath>

namespace h2o {

void HetBlockConfig::validate() const {
  if (d_in == 0 || d_model == 0) throw ValidationError("het block: channel counts must be >= 1");
  if (num_heads == 0 || d_model % num_heads != 0)
    throw ValidationError("het block: d_model " + std::to_string(d_model) +
                          " not divisible by num_heads " + std::to_string(num_heads));
  if (kernel_sizes.empty()) throw ValidationError("het block: kernel_sizes must be nonempty");
  for (std::size_t k : kernel_sizes)
    if (k % 2 == 0)
      throw ValidationError("het block: kernel size " + std::to_string(k) + " must be odd");
  if (d_model % kernel_sizes.size() != 0)
    throw ValidationError("het block: d_model " + std::to_string(d_model) +
                          " not divisible by " + std::to_string(kernel_sizes.size()) +
                          " temporal branches");
  if (shortcut == ShortcutKind::identity && d_in != d_model)
    throw ValidationError("het block: identity shortcut requires d_in == d_model (" +
                          std::to_string(d_in) + " vs " + std::to_string(d_model) + ")");
  if (use_enhanced_hyperedge && !use_hypergraph)
    throw ValidationError("het block: enhanced hyperedge requires the hypergraph path");
}

AttentionScores attention_scores(const Tensor& q, const Tensor& k, const Tensor& e_q,
                                 const Tensor& e_k, const Tensor& rphi, bool use_part_c,
                                 bool use_part_d) {
  AttentionScores s;
  s.part_a = relpos_scores(q, rphi);
  s.part_b = matmul_nt(q, k);
  s.combined = add(s.part_a, s.part_b);
  if (use_part_c) {
    s.part_c = matmul_nt(q, e_k);
    s.combined = add(s.combined, s.part_c);
  }
  if (use_part_d) {
    s.part_d = matmul_nt(e_q, e_k);
    s.combined = add(s.combined, s.part_d);
  }
  return s;
}

Tensor apply_attention(const Tensor& scores, const Tensor& values) {
  return matmul(softmax_lastaxis(scores), values);
}

Tensor update_hyperedges(const Tensor& e_q, const Tensor& e_k, const Tensor& e_v) {
  return matmul(softmax_lastaxis(matmul_nt(e_q, e_k)), e_v);
}

Tensor hyperedge_features(const Tensor& x, const Topology& topo, const Tensor& w_e) {
  NdArray mean = topo.member_mean;
  mean.set_dtype(x.dtype());
  mean.quantize();
  Tensor pooled = matmul(constant(std::move(mean)), x);  // broadcast over frames
  return matmul(pooled, w_e);
}

Tensor multiscale_temporal_conv(const Tensor& x, const std::vector<Tensor>& kernels,
                                const std::vector<std::size_t>& kernel_sizes) {
  if (kernels.size() != kernel_sizes.size())
    throw ValidationError("multiscale_temporal_conv: " + std::to_string(kernels.size()) +
                          " kernels for " + std::to_string(kernel_sizes.size()) + " branches");
  std::vector<Tensor> branches;
  branches.reserve(kernels.size());
  for (std::size_t b = 0; b < kernels.size(); ++b)
    branches.push_back(conv1d_dilated(x, kernels[b], /*dilation=*/1));
  return add(concat_lastaxis(branches), x);
}

HetBlock::HetBlock(HetBlockConfig config, const Topology& topo, std::uint64_t seed)
    : cfg_(std::move(config)) {
  cfg_.validate();
  hop_indices_ = topo.hops.flat_indices();
  const std::size_t m = topo.hops.max_hops_plus_one;
  const std::size_t d_in = cfg_.d_in, d_model = cfg_.d_model;
  const Dtype dt = cfg_.dtype;
  Rng rng(seed);

  auto weight = [&](std::size_t rows, std::size_t cols) {
    NdArray w({rows, cols}, dt);
    init_fan_in_uniform(w, rows, rng);
    return Tensor(std::move(w), true);
  };
  w_q_ = weight(d_in, d_model);
  w_k_ = weight(d_in, d_model);
  w_v_ = weight(d_in, d_model);
  w_eq_ = weight(d_in, d_model);
  w_ek_ = weight(d_in, d_model);
  w_ev_ = weight(d_in, d_model);
  w_e_ = weight(d_in, d_model);

  const std::size_t tables = cfg_.share_relpos_heads ? 1 : cfg_.num_heads;
  for (std::size_t h = 0; h < tables; ++h) {
    NdArray r({m, cfg_.head_dim()}, dt);
    init_normal(r, 0.02, rng);
    relpos_.emplace_back(std::move(r), true);
  }

  const std::size_t branch = cfg_.branch_channels();
  for (std::size_t k : cfg_.kernel_sizes) {
    NdArray ker({k, d_model, branch}, dt);
    init_fan_in_uniform(ker, k * d_model, rng);
    conv_kernels_.emplace_back(std::move(ker), true);
  }

  bn_attn_gamma_ = Tensor(NdArray::full({d_model}, 1.0, dt), true);
  bn_attn_beta_ = Tensor(NdArray({d_model}, dt), true);
  bn_conv_gamma_ = Tensor(NdArray::full({d_model}, 1.0, dt), true);
  bn_conv_beta_ = Tensor(NdArray({d_model}, dt), true);

  if (cfg_.shortcut == ShortcutKind::projection) w_shortcut_ = weight(d_in, d_model);
}

Tensor HetBlock::relpos_table(std::size_t head) const {
  return cfg_.share_relpos_heads ? relpos_[0] : relpos_[head];
}

HetBlock::Output HetBlock::forward(const Tensor& x, const Tensor& e_in, const Topology& topo,
                                   Mode mode, BlockDiagnostics* diag) {
  const std::size_t v_len = topo.num_vertices();
  if (x.value().ndim() != 3 || x.shape()[1] != v_len || x.shape()[2] != cfg_.d_in)
    throw ValidationError("het block: input must be (T," + std::to_string(v_len) + "," +
                          std::to_string(cfg_.d_in) + "), got " + x.value().shape_str());
  const std::size_t heads = cfg_.num_heads;
  const std::size_t hd = cfg_.head_dim();
  const bool hyper = cfg_.use_hypergraph;
  const bool enhanced = hyper && cfg_.use_enhanced_hyperedge;

  Tensor e_base;
  if (hyper) {
    if (e_in.defined() && !cfg_.recompute_hyperedges)
      e_base = e_in;
    else
      e_base = hyperedge_features(x, topo, w_e_);
  }

  Tensor q = matmul(x, w_q_);
  Tensor k = matmul(x, w_k_);
  Tensor v = matmul(x, w_v_);
  Tensor eq, ek, ev;
  if (hyper) {
    ek = matmul(e_base, w_ek_);
    if (enhanced) {
      eq = matmul(e_base, w_eq_);
      ev = matmul(e_base, w_ev_);
    }
  }

  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<Tensor> head_outs, e_heads;
  head_outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * hd;
    Tensor qh = slice_lastaxis(q, off, hd);
    Tensor kh = slice_lastaxis(k, off, hd);
    Tensor vh = slice_lastaxis(v, off, hd);
    Tensor eqh, ekh;
    if (hyper) ekh = slice_lastaxis(ek, off, hd);
    if (enhanced) eqh = slice_lastaxis(eq, off, hd);
    Tensor rphi = reshape(gather_rows(relpos_table(h), hop_indices_), {v_len, v_len, hd});

    AttentionScores scores =
        attention_scores(qh, kh, eqh, ekh, rphi, /*use_part_c=*/hyper, /*use_part_d=*/enhanced);
    Tensor scaled = scale(scores.combined, inv_sqrt_d);
    head_outs.push_back(apply_attention(scaled, vh));

    if (enhanced) {
      Tensor evh = slice_lastaxis(ev, off, hd);
      // Part d alone drives the update; reuse its unscaled scores.
      e_heads.push_back(matmul(softmax_lastaxis(scores.part_d), evh));
    }

    if (diag) {
      diag->parts["a"].push_back(scores.part_a.value());
      diag->parts["b"].push_back(scores.part_b.value());
      if (scores.part_c.defined()) diag->parts["c"].push_back(scores.part_c.value());
      if (scores.part_d.defined()) diag->parts["d"].push_back(scores.part_d.value());
      diag->parts["combined"].push_back(scaled.value());
    }
  }

  Tensor x_attn = concat_lastaxis(head_outs);
  Tensor y = cfg_.norm_attention
                 ? batchnorm(x_attn, bn_attn_gamma_, bn_attn_beta_, bn_attn_stats_, mode)
                 : x_attn;

  std::vector<Tensor> branches;
  branches.reserve(conv_kernels_.size());
  for (const Tensor& ker : conv_kernels_) branches.push_back(conv1d_dilated(y, ker, 1));
  Tensor concat = concat_lastaxis(branches);
  Tensor conv = cfg_.norm_temporal
                    ? batchnorm(concat, bn_conv_gamma_, bn_conv_beta_, bn_conv_stats_, mode)
                    : concat;
  Tensor z = add(conv, y);

  Tensor shortcut = cfg_.shortcut == ShortcutKind::identity ? x : matmul(x, w_shortcut_);
  Output out;
  out.x = add(z, shortcut);
  if (enhanced)
    out.e = concat_lastaxis(e_heads);
  else if (hyper)
    out.e = e_base;  // static propagation
  if (diag && out.e.defined()) diag->hyperedge_features = out.e.value();
  return out;
}

void HetBlock::collect_parameters(const std::string& prefix, std::vector<Parameter>& out) {
  auto push = [&](const std::string& name, Tensor& t) {
    if (!t.defined()) return;
    t.set_name(prefix + "." + name);
    out.push_back({prefix + "." + name, t});
  };
  push("w_q", w_q_);
  push("w_k", w_k_);
  push("w_v", w_v_);
  push("w_eq", w_eq_);
  push("w_ek", w_ek_);
  push("w_ev", w_ev_);
  push("w_e", w_e_);
  for (std::size_t h = 0; h < relpos_.size(); ++h)
    push(cfg_.share_relpos_heads ? std::string("relpos") : "relpos.head" + std::to_string(h),
         relpos_[h]);
  for (std::size_t b = 0; b < conv_kernels_.size(); ++b)
    push("conv.k" + std::to_string(cfg_.kernel_sizes[b]), conv_kernels_[b]);
  push("bn_attn.gamma", bn_attn_gamma_);
  push("bn_attn.beta", bn_attn_beta_);
  push("bn_conv.gamma", bn_conv_gamma_);
  push("bn_conv.beta", bn_conv_beta_);
  push("w_shortcut", w_shortcut_);
}

}  // namespace h2o
