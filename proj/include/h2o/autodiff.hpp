#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "h2o/ndarray.hpp"

namespace h2o {

enum class Mode { train, eval };

// Grad recording can be switched off (inference, finite-difference probes);
// ops then produce plain leaves and the graph behind them is dropped.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

namespace detail {

struct Node {
  NdArray value;
  NdArray grad;  // empty until first accumulation
  bool requires_grad = false;
  std::uint64_t seq = 0;
  std::string name;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad and accumulates into parents' grads.
  std::function<void(Node&)> backward_fn;

  NdArray& ensure_grad();
};

}  // namespace detail

// Shared handle to one value in the recorded computation. Copying a Tensor
// aliases the same node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NdArray value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const NdArray& value() const;
  NdArray& value();
  const NdArray& grad() const;
  NdArray& grad();
  bool requires_grad() const;
  const Shape& shape() const { return value().shape(); }
  Dtype dtype() const { return value().dtype(); }
  std::size_t numel() const { return value().numel(); }
  double scalar() const;

  void zero_grad();
  Tensor detach() const;
  const std::string& name() const;
  void set_name(std::string name);

  std::shared_ptr<detail::Node> node() const { return node_; }
  static Tensor wrap(std::shared_ptr<detail::Node> n);

 private:
  std::shared_ptr<detail::Node> node_;
};

// A learnable tensor plus its checkpoint path, e.g. "encoder.block3.w_ek".
struct Parameter {
  std::string name;
  Tensor tensor;
};

// Ordered record of the operations that produced `root`: reverse traversal
// replays exactly the execution order.
class Tape {
 public:
  explicit Tape(const Tensor& root);
  std::size_t num_ops() const { return num_ops_; }
  std::size_t num_nodes() const { return order_.size(); }
  // Seeds d(root)/d(root) = 1 and accumulates grads into every reachable
  // tensor that requires grad. Root must be scalar.
  void backward();

 private:
  std::shared_ptr<detail::Node> root_;
  std::vector<std::shared_ptr<detail::Node>> order_;  // ascending seq
  std::size_t num_ops_ = 0;
};

void backward(const Tensor& loss);
void zero_grads(std::vector<Parameter>& params);

// ---- primitive ops ----

Tensor constant(NdArray v);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
// x (..., n, d) + b (d,) broadcast over leading axes.
Tensor add_rowvec(const Tensor& x, const Tensor& b);
// x (T, V, D) + m (V, D) broadcast over the leading axis.
Tensor add_mat_bcast(const Tensor& x, const Tensor& m);

// a (n,k)|(B,n,k) times b (k,m)|(B,k,m); a 2D with b 3D and vice versa
// broadcast over the batch axis.
Tensor matmul(const Tensor& a, const Tensor& b);
// a (..., n, k) times b (..., m, k)^T -> (..., n, m).
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor linear(const Tensor& x, const Tensor& w);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softmax_lastaxis(const Tensor& x);

// x (T, C_in) or (T, V, C_in), kernel (k, C_in, C_out), same padding along T.
Tensor conv1d_dilated(const Tensor& x, const Tensor& kernel, std::size_t dilation);

Tensor mean_pool(const Tensor& x, std::size_t axis);
Tensor mean_all(const Tensor& x);

// table (m, d), indices flat -> (indices.size(), d). Pure gather.
Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& indices);

Tensor reshape(const Tensor& x, Shape new_shape);
Tensor concat_lastaxis(const std::vector<Tensor>& xs);
Tensor slice_lastaxis(const Tensor& x, std::size_t start, std::size_t len);
Tensor stack_scalars(const std::vector<Tensor>& xs);

// out[t,i,j] = dot(q[t,i,:], rphi[i,j,:]); q (T,V,d) or (V,d), rphi (V,V,d).
Tensor relpos_scores(const Tensor& q, const Tensor& rphi);

// (1/T) sum_t frobenius_norm(xhat[t] - target[t]); xhat (T,V,C).
Tensor rec_loss_seq(const Tensor& xhat, const NdArray& target);
// Mean binary cross-entropy over the batch; probs clamped to [1e-7, 1-1e-7].
Tensor bce_loss(const Tensor& probs, const std::vector<int>& labels);

struct BatchNormStats {
  NdArray running_mean;
  NdArray running_var;
  bool initialized = false;
};

// Channels-last batch norm: normalizes each channel over all leading axes.
// Train mode uses batch statistics and updates the EMA; eval mode uses the
// running statistics.
Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 BatchNormStats& stats, Mode mode, double momentum = 0.9,
                 double eps = 1e-5);

// Extension hook: records an op with caller-provided value and backward.
// Used by tests to inject deliberately wrong gradients.
Tensor custom_op(const std::vector<Tensor>& inputs, NdArray value,
                 std::function<void(detail::Node&)> backward_fn);

}  // namespace h2o
