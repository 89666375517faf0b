#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "h2o/autodiff.hpp"
#include "h2o/topology.hpp"

namespace h2o {

enum class ShortcutKind { identity, projection };
enum class BlockRole { encoder, decoder };

struct HetBlockConfig {
  std::size_t d_in = 0;      // input channels
  std::size_t d_model = 0;   // output channels
  std::size_t num_heads = 9;
  std::vector<std::size_t> kernel_sizes = {1, 3, 5};
  ShortcutKind shortcut = ShortcutKind::identity;
  BlockRole role = BlockRole::encoder;
  bool use_hypergraph = true;          // parts c,d and the hyperedge path
  bool use_enhanced_hyperedge = true;  // part d and the dynamic update
  bool share_relpos_heads = false;
  bool recompute_hyperedges = false;   // blocks >= 2 re-derive E from their own input
  bool norm_attention = true;          // batch norm after the attention output
  bool norm_temporal = true;           // batch norm after the branch concat
  Dtype dtype = Dtype::f64;

  void validate() const;
  std::size_t head_dim() const { return d_model / num_heads; }
  std::size_t branch_channels() const { return d_model / kernel_sizes.size(); }
};

// Raw attention scores and hyperedge snapshots for one block, recorded only
// when inspection is on. Parts are per head, (T,V,V) each; "combined" is the
// scaled sum that feeds the softmax.
struct BlockDiagnostics {
  std::map<std::string, std::vector<NdArray>> parts;  // "a"/"b"/"c"/"d"/"combined" -> per head
  NdArray hyperedge_features;                         // E' (T,V,D), when the hyperedge path is on
};

// Sum of the active score parts: a = Q R_phi^T (per-row dot), b = Q K^T,
// c = Q E_K^T, d = E_Q E_K^T. Returns the unscaled sum; absent parts are
// undefined Tensors.
struct AttentionScores {
  Tensor combined;
  Tensor part_a, part_b, part_c, part_d;
};
AttentionScores attention_scores(const Tensor& q, const Tensor& k, const Tensor& e_q,
                                 const Tensor& e_k, const Tensor& rphi, bool use_part_c,
                                 bool use_part_d);

// softmax(A) * V with rows over the last axis of A.
Tensor apply_attention(const Tensor& scores, const Tensor& values);

// E' = softmax(E_Q E_K^T) * E_V; the softmax here is unscaled.
Tensor update_hyperedges(const Tensor& e_q, const Tensor& e_k, const Tensor& e_v);

// Vertex-broadcast hyperedge features: member_mean * X * W_e per frame.
Tensor hyperedge_features(const Tensor& x, const Topology& topo, const Tensor& w_e);

// Parallel temporal branches (given odd kernel sizes, same padding), channel
// concat, plus the input as residual. Kernels carry D/branches channels each.
Tensor multiscale_temporal_conv(const Tensor& x, const std::vector<Tensor>& kernels,
                                const std::vector<std::size_t>& kernel_sizes);

class HetBlock {
 public:
  HetBlock(HetBlockConfig config, const Topology& topo, std::uint64_t seed);

  struct Output {
    Tensor x;  // (T, V, d_model)
    Tensor e;  // hyperedge state for the next block; undefined when path off
  };

  // x (T, V, d_in); e_in undefined means this is the first block and E is
  // derived from x. Frames share the spatial attention weights; the temporal
  // convolution couples them afterwards.
  Output forward(const Tensor& x, const Tensor& e_in, const Topology& topo, Mode mode,
                 BlockDiagnostics* diag = nullptr);

  void collect_parameters(const std::string& prefix, std::vector<Parameter>& out);
  const HetBlockConfig& config() const { return cfg_; }

 private:
  Tensor relpos_table(std::size_t head) const;

  HetBlockConfig cfg_;
  std::vector<std::size_t> hop_indices_;  // flattened hop table for the gather
  Tensor w_q_, w_k_, w_v_;
  Tensor w_eq_, w_ek_, w_ev_;
  Tensor w_e_;
  std::vector<Tensor> relpos_;  // per head (m, head_dim), or a single shared table
  std::vector<Tensor> conv_kernels_;
  Tensor bn_attn_gamma_, bn_attn_beta_;
  Tensor bn_conv_gamma_, bn_conv_beta_;
  BatchNormStats bn_attn_stats_, bn_conv_stats_;
  Tensor w_shortcut_;  // projection shortcut only
};

}  // namespace h2o
