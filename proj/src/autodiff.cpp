#include "h2o/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace h2o {

namespace {

thread_local bool g_grad_enabled = true;
thread_local std::uint64_t g_seq = 0;

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

bool any_requires(const std::vector<NodePtr>& parents) {
  for (const auto& p : parents)
    if (p && p->requires_grad) return true;
  return false;
}

void debug_check_finite(const char* op, const NdArray& out) {
#ifndef NDEBUG
  if (!out.all_finite()) throw NumericError(std::string(op) + ": non-finite output");
#else
  (void)op;
  (void)out;
#endif
}

Tensor record(const char* op, NdArray value, std::vector<NodePtr> parents,
              std::function<void(Node&)> fn) {
  debug_check_finite(op, value);
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->seq = ++g_seq;
  if (g_grad_enabled && any_requires(parents)) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_fn = std::move(fn);
  }
  return Tensor::wrap(std::move(n));
}

Dtype common_dtype(const char* op, const Tensor& a, const Tensor& b) {
  if (a.dtype() != b.dtype())
    throw ValidationError(std::string(op) + ": dtype mismatch (" + dtype_name(a.dtype()) +
                          " vs " + dtype_name(b.dtype()) + ")");
  return a.dtype();
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw ValidationError(std::string(op) + ": shape mismatch " + a.value().shape_str() + " vs " +
                        b.value().shape_str());
}

// C(n,m) += A(n,k) B(k,m)
void mm_nn(double* c, const double* a, const double* b, std::size_t n, std::size_t k,
           std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    double* crow = c + i * m;
    const double* arow = a + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      const double* brow = b + kk * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

// C(n,m) += A(n,k) B(m,k)^T
void mm_nt(double* c, const double* a, const double* b, std::size_t n, std::size_t k,
           std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * m;
    for (std::size_t j = 0; j < m; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
      crow[j] += acc;
    }
  }
}

// C(n,m) += A(k,n)^T B(k,m)
void mm_tn(double* c, const double* a, const double* b, std::size_t n, std::size_t k,
           std::size_t m) {
  for (std::size_t kk = 0; kk < k; ++kk) {
    const double* arow = a + kk * n;
    const double* brow = b + kk * m;
    for (std::size_t i = 0; i < n; ++i) {
      const double av = arow[i];
      double* crow = c + i * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

namespace detail {

NdArray& Node::ensure_grad() {
  if (grad.numel() == 0) grad = NdArray(value.shape(), Dtype::f64);
  return grad;
}

}  // namespace detail

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Tensor::Tensor(NdArray value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->seq = ++g_seq;
  node_ = std::move(n);
}

Tensor Tensor::wrap(std::shared_ptr<detail::Node> n) {
  Tensor t;
  t.node_ = std::move(n);
  return t;
}

const NdArray& Tensor::value() const { return node_->value; }
NdArray& Tensor::value() { return node_->value; }
const NdArray& Tensor::grad() const { return const_cast<Node*>(node_.get())->ensure_grad(); }
NdArray& Tensor::grad() { return node_->ensure_grad(); }
bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

double Tensor::scalar() const {
  if (numel() != 1)
    throw ValidationError("scalar(): tensor has " + std::to_string(numel()) + " elements");
  return value()[0];
}

void Tensor::zero_grad() {
  if (node_) node_->grad = NdArray();
}

Tensor Tensor::detach() const { return Tensor(value(), false); }

const std::string& Tensor::name() const { return node_->name; }
void Tensor::set_name(std::string name) { node_->name = std::move(name); }

Tape::Tape(const Tensor& root) : root_(root.node()) {
  if (!root_) throw ValidationError("Tape: undefined root tensor");
  std::unordered_set<const Node*> seen;
  std::vector<NodePtr> stack{root_};
  seen.insert(root_.get());
  while (!stack.empty()) {
    NodePtr n = stack.back();
    stack.pop_back();
    order_.push_back(n);
    for (const auto& p : n->parents) {
      if (p && seen.insert(p.get()).second) stack.push_back(p);
    }
  }
  std::sort(order_.begin(), order_.end(),
            [](const NodePtr& a, const NodePtr& b) { return a->seq < b->seq; });
  for (const auto& n : order_)
    if (n->backward_fn) ++num_ops_;
}

void Tape::backward() {
  if (root_->value.numel() != 1)
    throw ValidationError("backward: loss must be scalar, got shape " + root_->value.shape_str());
  root_->ensure_grad()[0] += 1.0;
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    Node& n = **it;
    if (n.backward_fn && n.grad.numel() > 0) n.backward_fn(n);
  }
}

void backward(const Tensor& loss) { Tape(loss).backward(); }

void zero_grads(std::vector<Parameter>& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

// ---- ops ----

Tensor constant(NdArray v) { return Tensor(std::move(v), false); }

Tensor add(const Tensor& a, const Tensor& b) {
  common_dtype("add", a, b);
  if (!a.value().same_shape(b.value())) shape_error("add", a, b);
  NdArray out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i];
  out.quantize();
  auto pa = a.node(), pb = b.node();
  return record("add", std::move(out), {pa, pb}, [pa, pb](Node& self) {
    if (pa->requires_grad) {
      NdArray& g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      NdArray& g = pb->ensure_grad();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  common_dtype("sub", a, b);
  if (!a.value().same_shape(b.value())) shape_error("sub", a, b);
  NdArray out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
  out.quantize();
  auto pa = a.node(), pb = b.node();
  return record("sub", std::move(out), {pa, pb}, [pa, pb](Node& self) {
    if (pa->requires_grad) {
      NdArray& g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      NdArray& g = pb->ensure_grad();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  common_dtype("mul", a, b);
  if (!a.value().same_shape(b.value())) shape_error("mul", a, b);
  NdArray out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
  out.quantize();
  auto pa = a.node(), pb = b.node();
  return record("mul", std::move(out), {pa, pb}, [pa, pb](Node& self) {
    if (pa->requires_grad) {
      NdArray& g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * pb->value[i];
    }
    if (pb->requires_grad) {
      NdArray& g = pb->ensure_grad();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * pa->value[i];
    }
  });
}

Tensor scale(const Tensor& a, double c) {
  NdArray out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= c;
  out.quantize();
  auto pa = a.node();
  return record("scale", std::move(out), {pa}, [pa, c](Node& self) {
    if (!pa->requires_grad) return;
    NdArray& g = pa->ensure_grad();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * c;
  });
}

Tensor add_rowvec(const Tensor& x, const Tensor& b) {
  common_dtype("add_rowvec", x, b);
  const std::size_t d = b.numel();
  if (b.value().ndim() != 1 || x.value().ndim() < 1 || x.shape().back() != d)
    shape_error("add_rowvec", x, b);
  NdArray out = x.value();
  const std::size_t rows = out.numel() / d;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] += b.value()[j];
  out.quantize();
  auto px = x.node(), pb = b.node();
  return record("add_rowvec", std::move(out), {px, pb}, [px, pb, rows, d](Node& self) {
    if (px->requires_grad) {
      NdArray& g = px->ensure_grad();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      NdArray& g = pb->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[r * d + j];
    }
  });
}

Tensor add_mat_bcast(const Tensor& x, const Tensor& m) {
  common_dtype("add_mat_bcast", x, m);
  if (x.value().ndim() != 3 || m.value().ndim() != 2 || x.shape()[1] != m.shape()[0] ||
      x.shape()[2] != m.shape()[1])
    shape_error("add_mat_bcast", x, m);
  NdArray out = x.value();
  const std::size_t t_len = x.shape()[0], plane = m.numel();
  for (std::size_t t = 0; t < t_len; ++t)
    for (std::size_t i = 0; i < plane; ++i) out[t * plane + i] += m.value()[i];
  out.quantize();
  auto px = x.node(), pm = m.node();
  return record("add_mat_bcast", std::move(out), {px, pm}, [px, pm, t_len, plane](Node& self) {
    if (px->requires_grad) {
      NdArray& g = px->ensure_grad();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
    if (pm->requires_grad) {
      NdArray& g = pm->ensure_grad();
      for (std::size_t t = 0; t < t_len; ++t)
        for (std::size_t i = 0; i < plane; ++i) g[i] += self.grad[t * plane + i];
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  common_dtype("matmul", a, b);
  const NdArray& av = a.value();
  const NdArray& bv = b.value();
  const bool a3 = av.ndim() == 3, b3 = bv.ndim() == 3;
  if ((av.ndim() != 2 && !a3) || (bv.ndim() != 2 && !b3)) shape_error("matmul", a, b);
  const std::size_t batch = a3 ? av.dim(0) : (b3 ? bv.dim(0) : 1);
  if (a3 && b3 && av.dim(0) != bv.dim(0)) shape_error("matmul", a, b);
  const std::size_t n = av.dim(a3 ? 1 : 0), k = av.dim(a3 ? 2 : 1);
  const std::size_t kb = bv.dim(b3 ? 1 : 0), m = bv.dim(b3 ? 2 : 1);
  if (k != kb) shape_error("matmul", a, b);

  Shape out_shape = (a3 || b3) ? Shape{batch, n, m} : Shape{n, m};
  NdArray out(out_shape, av.dtype());
  for (std::size_t t = 0; t < batch; ++t) {
    const double* ap = av.data() + (a3 ? t * n * k : 0);
    const double* bp = bv.data() + (b3 ? t * k * m : 0);
    mm_nn(out.data() + t * n * m, ap, bp, n, k, m);
  }
  out.quantize();
  auto pa = a.node(), pb = b.node();
  return record("matmul", std::move(out), {pa, pb},
                [pa, pb, a3, b3, batch, n, k, m](Node& self) {
                  for (std::size_t t = 0; t < batch; ++t) {
                    const double* dc = self.grad.data() + t * n * m;
                    const double* ap = pa->value.data() + (a3 ? t * n * k : 0);
                    const double* bp = pb->value.data() + (b3 ? t * k * m : 0);
                    if (pa->requires_grad)
                      mm_nt(pa->ensure_grad().data() + (a3 ? t * n * k : 0), dc, bp, n, m, k);
                    if (pb->requires_grad)
                      mm_tn(pb->ensure_grad().data() + (b3 ? t * k * m : 0), ap, dc, k, n, m);
                  }
                });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  common_dtype("matmul_nt", a, b);
  const NdArray& av = a.value();
  const NdArray& bv = b.value();
  const bool a3 = av.ndim() == 3, b3 = bv.ndim() == 3;
  if ((av.ndim() != 2 && !a3) || (bv.ndim() != 2 && !b3)) shape_error("matmul_nt", a, b);
  const std::size_t batch = a3 ? av.dim(0) : (b3 ? bv.dim(0) : 1);
  if (a3 && b3 && av.dim(0) != bv.dim(0)) shape_error("matmul_nt", a, b);
  const std::size_t n = av.dim(a3 ? 1 : 0), k = av.dim(a3 ? 2 : 1);
  const std::size_t m = bv.dim(b3 ? 1 : 0), kb = bv.dim(b3 ? 2 : 1);
  if (k != kb) shape_error("matmul_nt", a, b);

  Shape out_shape = (a3 || b3) ? Shape{batch, n, m} : Shape{n, m};
  NdArray out(out_shape, av.dtype());
  for (std::size_t t = 0; t < batch; ++t) {
    const double* ap = av.data() + (a3 ? t * n * k : 0);
    const double* bp = bv.data() + (b3 ? t * m * k : 0);
    mm_nt(out.data() + t * n * m, ap, bp, n, k, m);
  }
  out.quantize();
  auto pa = a.node(), pb = b.node();
  return record("matmul_nt", std::move(out), {pa, pb},
                [pa, pb, a3, b3, batch, n, k, m](Node& self) {
                  for (std::size_t t = 0; t < batch; ++t) {
                    const double* dc = self.grad.data() + t * n * m;
                    const double* ap = pa->value.data() + (a3 ? t * n * k : 0);
                    const double* bp = pb->value.data() + (b3 ? t * m * k : 0);
                    if (pa->requires_grad)
                      mm_nn(pa->ensure_grad().data() + (a3 ? t * n * k : 0), dc, bp, n, m, k);
                    if (pb->requires_grad)
                      mm_tn(pb->ensure_grad().data() + (b3 ? t * m * k : 0), dc, ap, m, n, k);
                  }
                });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_rowvec(matmul(x, w), b);
}

Tensor linear(const Tensor& x, const Tensor& w) { return matmul(x, w); }

Tensor relu(const Tensor& x) {
  NdArray out = x.value();
  for (std::size_t i = 0; i < out.numel(); ++i)
    if (out[i] < 0.0) out[i] = 0.0;
  auto px = x.node();
  return record("relu", std::move(out), {px}, [px](Node& self) {
    if (!px->requires_grad) return;
    NdArray& g = px->ensure_grad();
    for (std::size_t i = 0; i < g.numel(); ++i)
      if (px->value[i] > 0.0) g[i] += self.grad[i];
  });
}

Tensor sigmoid(const Tensor& x) {
  NdArray out = x.value();
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const double v = out[i];
    out[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  out.quantize();
  auto px = x.node();
  NdArray saved = out;
  return record("sigmoid", std::move(out), {px}, [px, saved](Node& self) {
    if (!px->requires_grad) return;
    NdArray& g = px->ensure_grad();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * saved[i] * (1.0 - saved[i]);
  });
}

Tensor softmax_lastaxis(const Tensor& x) {
  const NdArray& xv = x.value();
  if (xv.ndim() < 1) throw ValidationError("softmax_lastaxis: needs at least one axis");
  if (!xv.all_finite()) throw NumericError("softmax_lastaxis: non-finite input");
  const std::size_t d = xv.shape().back();
  const std::size_t rows = xv.numel() / d;
  NdArray out(xv.shape(), xv.dtype());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * d;
    double* yr = out.data() + r * d;
    double mx = xr[0];
    for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, xr[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    for (std::size_t j = 0; j < d; ++j) yr[j] /= sum;
  }
  out.quantize();
  auto px = x.node();
  NdArray saved = out;
  return record("softmax_lastaxis", std::move(out), {px}, [px, saved, rows, d](Node& self) {
    if (!px->requires_grad) return;
    NdArray& g = px->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* p = saved.data() + r * d;
      const double* dy = self.grad.data() + r * d;
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += dy[j] * p[j];
      double* gr = g.data() + r * d;
      for (std::size_t j = 0; j < d; ++j) gr[j] += p[j] * (dy[j] - dot);
    }
  });
}

Tensor conv1d_dilated(const Tensor& x, const Tensor& kernel, std::size_t dilation) {
  common_dtype("conv1d_dilated", x, kernel);
  const NdArray& xv = x.value();
  const NdArray& kv = kernel.value();
  if (kv.ndim() != 3)
    throw ValidationError("conv1d_dilated: kernel must be (k, C_in, C_out), got " + kv.shape_str());
  const bool flat = xv.ndim() == 2;  // (T, C)
  if (!flat && xv.ndim() != 3)
    throw ValidationError("conv1d_dilated: input must be (T,C) or (T,V,C), got " + xv.shape_str());
  const std::size_t t_len = xv.dim(0);
  const std::size_t v_len = flat ? 1 : xv.dim(1);
  const std::size_t c_in = flat ? xv.dim(1) : xv.dim(2);
  const std::size_t k = kv.dim(0), c_out = kv.dim(2);
  if (kv.dim(1) != c_in)
    throw ValidationError("conv1d_dilated: kernel C_in " + std::to_string(kv.dim(1)) +
                          " vs input channels " + std::to_string(c_in));
  if (k % 2 == 0) throw ValidationError("conv1d_dilated: kernel size must be odd for same padding");
  if (dilation == 0) throw ValidationError("conv1d_dilated: dilation must be >= 1");
  const std::ptrdiff_t center = static_cast<std::ptrdiff_t>(k / 2);

  Shape out_shape = flat ? Shape{t_len, c_out} : Shape{t_len, v_len, c_out};
  NdArray out(out_shape, xv.dtype());
  const std::ptrdiff_t T = static_cast<std::ptrdiff_t>(t_len);
  for (std::size_t v = 0; v < v_len; ++v) {
    for (std::ptrdiff_t t = 0; t < T; ++t) {
      double* orow = out.data() + (static_cast<std::size_t>(t) * v_len + v) * c_out;
      for (std::size_t tap = 0; tap < k; ++tap) {
        const std::ptrdiff_t src =
            t + static_cast<std::ptrdiff_t>(dilation) * (static_cast<std::ptrdiff_t>(tap) - center);
        if (src < 0 || src >= T) continue;
        const double* xrow = xv.data() + (static_cast<std::size_t>(src) * v_len + v) * c_in;
        const double* krow = kv.data() + tap * c_in * c_out;
        for (std::size_t ci = 0; ci < c_in; ++ci) {
          const double xvv = xrow[ci];
          const double* kk = krow + ci * c_out;
          for (std::size_t co = 0; co < c_out; ++co) orow[co] += xvv * kk[co];
        }
      }
    }
  }
  out.quantize();
  auto px = x.node(), pk = kernel.node();
  return record("conv1d_dilated", std::move(out), {px, pk},
                [px, pk, t_len, v_len, c_in, c_out, k, dilation, center](Node& self) {
                  const std::ptrdiff_t T = static_cast<std::ptrdiff_t>(t_len);
                  NdArray* gx = px->requires_grad ? &px->ensure_grad() : nullptr;
                  NdArray* gk = pk->requires_grad ? &pk->ensure_grad() : nullptr;
                  for (std::size_t v = 0; v < v_len; ++v) {
                    for (std::ptrdiff_t t = 0; t < T; ++t) {
                      const double* dout =
                          self.grad.data() + (static_cast<std::size_t>(t) * v_len + v) * c_out;
                      for (std::size_t tap = 0; tap < k; ++tap) {
                        const std::ptrdiff_t src = t + static_cast<std::ptrdiff_t>(dilation) *
                                                           (static_cast<std::ptrdiff_t>(tap) - center);
                        if (src < 0 || src >= T) continue;
                        const std::size_t xoff = (static_cast<std::size_t>(src) * v_len + v) * c_in;
                        const double* krow = pk->value.data() + tap * c_in * c_out;
                        for (std::size_t ci = 0; ci < c_in; ++ci) {
                          const double* kk = krow + ci * c_out;
                          double acc = 0.0;
                          for (std::size_t co = 0; co < c_out; ++co) acc += dout[co] * kk[co];
                          if (gx) (*gx)[xoff + ci] += acc;
                          if (gk) {
                            double* gkrow = gk->data() + (tap * c_in + ci) * c_out;
                            const double xvv = px->value[xoff + ci];
                            for (std::size_t co = 0; co < c_out; ++co)
                              gkrow[co] += xvv * dout[co];
                          }
                        }
                      }
                    }
                  }
                });
}

Tensor mean_pool(const Tensor& x, std::size_t axis) {
  const NdArray& xv = x.value();
  if (axis >= xv.ndim())
    throw ValidationError("mean_pool: axis " + std::to_string(axis) + " out of range for " +
                          xv.shape_str());
  Shape out_shape;
  for (std::size_t i = 0; i < xv.ndim(); ++i)
    if (i != axis) out_shape.push_back(xv.dim(i));
  if (out_shape.empty()) out_shape = {1};
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= xv.dim(i);
  for (std::size_t i = axis + 1; i < xv.ndim(); ++i) inner *= xv.dim(i);
  const std::size_t n = xv.dim(axis);

  NdArray out(out_shape, xv.dtype());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t i = 0; i < inner; ++i)
        out[o * inner + i] += xv[(o * n + a) * inner + i] / static_cast<double>(n);
  out.quantize();
  auto px = x.node();
  return record("mean_pool", std::move(out), {px}, [px, outer, inner, n](Node& self) {
    if (!px->requires_grad) return;
    NdArray& g = px->ensure_grad();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t a = 0; a < n; ++a)
        for (std::size_t i = 0; i < inner; ++i)
          g[(o * n + a) * inner + i] += self.grad[o * inner + i] / static_cast<double>(n);
  });
}

Tensor mean_all(const Tensor& x) {
  const NdArray& xv = x.value();
  const std::size_t n = xv.numel();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += xv[i];
  NdArray out = NdArray::scalar(acc / static_cast<double>(n), xv.dtype());
  auto px = x.node();
  return record("mean_all", std::move(out), {px}, [px, n](Node& self) {
    if (!px->requires_grad) return;
    NdArray& g = px->ensure_grad();
    const double d = self.grad[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) g[i] += d;
  });
}

Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& indices) {
  const NdArray& tv = table.value();
  if (tv.ndim() != 2) throw ValidationError("gather_rows: table must be 2D, got " + tv.shape_str());
  const std::size_t m = tv.dim(0), d = tv.dim(1);
  for (std::size_t idx : indices)
    if (idx >= m)
      throw ValidationError("gather_rows: index " + std::to_string(idx) +
                            " out of range for table with " + std::to_string(m) + " rows");
  NdArray out({indices.size(), d}, tv.dtype());
  for (std::size_t r = 0; r < indices.size(); ++r)
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = tv[indices[r] * d + j];
  auto pt = table.node();
  auto idx = indices;
  return record("gather_rows", std::move(out), {pt}, [pt, idx, d](Node& self) {
    if (!pt->requires_grad) return;
    NdArray& g = pt->ensure_grad();
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < d; ++j) g[idx[r] * d + j] += self.grad[r * d + j];
  });
}

Tensor reshape(const Tensor& x, Shape new_shape) {
  NdArray out = x.value().reshaped(new_shape);
  auto px = x.node();
  return record("reshape", std::move(out), {px}, [px](Node& self) {
    if (!px->requires_grad) return;
    NdArray& g = px->ensure_grad();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
  });
}

Tensor concat_lastaxis(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ValidationError("concat_lastaxis: empty input list");
  const Shape& s0 = xs[0].shape();
  Shape lead(s0.begin(), s0.end() - 1);
  std::size_t total_last = 0;
  for (const Tensor& t : xs) {
    const Shape& s = t.shape();
    if (Shape(s.begin(), s.end() - 1) != lead)
      throw ValidationError("concat_lastaxis: leading shape mismatch " + t.value().shape_str() +
                            " vs " + xs[0].value().shape_str());
    total_last += s.back();
  }
  const std::size_t rows = shape_numel(lead.empty() ? Shape{1} : lead);
  Shape out_shape = lead;
  out_shape.push_back(total_last);
  NdArray out(out_shape, xs[0].dtype());
  std::vector<std::size_t> widths;
  std::vector<NodePtr> parents;
  std::size_t off = 0;
  for (const Tensor& t : xs) {
    const std::size_t w = t.shape().back();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < w; ++j) out[r * total_last + off + j] = t.value()[r * w + j];
    widths.push_back(w);
    parents.push_back(t.node());
    off += w;
  }
  auto caps = parents;
  return record("concat_lastaxis", std::move(out), std::move(parents),
                [caps, widths, rows, total_last](Node& self) {
                  std::size_t off = 0;
                  for (std::size_t p = 0; p < caps.size(); ++p) {
                    const std::size_t w = widths[p];
                    if (caps[p]->requires_grad) {
                      NdArray& g = caps[p]->ensure_grad();
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t j = 0; j < w; ++j)
                          g[r * w + j] += self.grad[r * total_last + off + j];
                    }
                    off += w;
                  }
                });
}

Tensor slice_lastaxis(const Tensor& x, std::size_t start, std::size_t len) {
  const NdArray& xv = x.value();
  const std::size_t d = xv.shape().back();
  if (start + len > d)
    throw ValidationError("slice_lastaxis: [" + std::to_string(start) + "," +
                          std::to_string(start + len) + ") exceeds last axis " + std::to_string(d));
  Shape out_shape = xv.shape();
  out_shape.back() = len;
  const std::size_t rows = xv.numel() / d;
  NdArray out(out_shape, xv.dtype());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < len; ++j) out[r * len + j] = xv[r * d + start + j];
  auto px = x.node();
  return record("slice_lastaxis", std::move(out), {px}, [px, rows, d, start, len](Node& self) {
    if (!px->requires_grad) return;
    NdArray& g = px->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < len; ++j) g[r * d + start + j] += self.grad[r * len + j];
  });
}

Tensor stack_scalars(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ValidationError("stack_scalars: empty input list");
  NdArray out({xs.size()}, xs[0].dtype());
  std::vector<NodePtr> parents;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].numel() != 1)
      throw ValidationError("stack_scalars: input " + std::to_string(i) + " is not scalar");
    out[i] = xs[i].value()[0];
    parents.push_back(xs[i].node());
  }
  auto caps = parents;
  return record("stack_scalars", std::move(out), std::move(parents), [caps](Node& self) {
    for (std::size_t i = 0; i < caps.size(); ++i)
      if (caps[i]->requires_grad) caps[i]->ensure_grad()[0] += self.grad[i];
  });
}

Tensor relpos_scores(const Tensor& q, const Tensor& rphi) {
  common_dtype("relpos_scores", q, rphi);
  const NdArray& qv = q.value();
  const NdArray& rv = rphi.value();
  if (rv.ndim() != 3 || rv.dim(0) != rv.dim(1))
    throw ValidationError("relpos_scores: rphi must be (V,V,d), got " + rv.shape_str());
  const bool flat = qv.ndim() == 2;
  if (!flat && qv.ndim() != 3)
    throw ValidationError("relpos_scores: q must be (V,d) or (T,V,d), got " + qv.shape_str());
  const std::size_t v_len = rv.dim(0), d = rv.dim(2);
  const std::size_t t_len = flat ? 1 : qv.dim(0);
  if (qv.dim(flat ? 0 : 1) != v_len || qv.shape().back() != d) shape_error("relpos_scores", q, rphi);

  Shape out_shape = flat ? Shape{v_len, v_len} : Shape{t_len, v_len, v_len};
  NdArray out(out_shape, qv.dtype());
  for (std::size_t t = 0; t < t_len; ++t)
    for (std::size_t i = 0; i < v_len; ++i) {
      const double* qrow = qv.data() + (t * v_len + i) * d;
      double* orow = out.data() + (t * v_len + i) * v_len;
      for (std::size_t j = 0; j < v_len; ++j) {
        const double* rrow = rv.data() + (i * v_len + j) * d;
        double acc = 0.0;
        for (std::size_t c = 0; c < d; ++c) acc += qrow[c] * rrow[c];
        orow[j] = acc;
      }
    }
  out.quantize();
  auto pq = q.node(), pr = rphi.node();
  return record("relpos_scores", std::move(out), {pq, pr}, [pq, pr, t_len, v_len, d](Node& self) {
    NdArray* gq = pq->requires_grad ? &pq->ensure_grad() : nullptr;
    NdArray* gr = pr->requires_grad ? &pr->ensure_grad() : nullptr;
    for (std::size_t t = 0; t < t_len; ++t)
      for (std::size_t i = 0; i < v_len; ++i) {
        const double* dy = self.grad.data() + (t * v_len + i) * v_len;
        const double* qrow = pq->value.data() + (t * v_len + i) * d;
        for (std::size_t j = 0; j < v_len; ++j) {
          const double* rrow = pr->value.data() + (i * v_len + j) * d;
          const double g = dy[j];
          if (gq) {
            double* gqrow = gq->data() + (t * v_len + i) * d;
            for (std::size_t c = 0; c < d; ++c) gqrow[c] += g * rrow[c];
          }
          if (gr) {
            double* grrow = gr->data() + (i * v_len + j) * d;
            for (std::size_t c = 0; c < d; ++c) grrow[c] += g * qrow[c];
          }
        }
      }
  });
}

Tensor rec_loss_seq(const Tensor& xhat, const NdArray& target) {
  const NdArray& xv = xhat.value();
  if (!xv.same_shape(target))
    throw ValidationError("rec_loss_seq: prediction " + xv.shape_str() + " vs target " +
                          target.shape_str());
  if (xv.ndim() != 3) throw ValidationError("rec_loss_seq: expected (T,V,C), got " + xv.shape_str());
  const std::size_t t_len = xv.dim(0), plane = xv.dim(1) * xv.dim(2);
  NdArray diff = xv;
  for (std::size_t i = 0; i < diff.numel(); ++i) diff[i] -= target[i];
  std::vector<double> norms(t_len, 0.0);
  double total = 0.0;
  for (std::size_t t = 0; t < t_len; ++t) {
    double ss = 0.0;
    const double* dp = diff.data() + t * plane;
    for (std::size_t i = 0; i < plane; ++i) ss += dp[i] * dp[i];
    norms[t] = std::sqrt(ss);
    total += norms[t];
  }
  NdArray out = NdArray::scalar(total / static_cast<double>(t_len), xv.dtype());
  auto px = xhat.node();
  return record("rec_loss_seq", std::move(out), {px},
                [px, diff, norms, t_len, plane](Node& self) {
                  if (!px->requires_grad) return;
                  NdArray& g = px->ensure_grad();
                  const double gy = self.grad[0] / static_cast<double>(t_len);
                  for (std::size_t t = 0; t < t_len; ++t) {
                    const double inv = 1.0 / std::max(norms[t], 1e-12);
                    const double* dp = diff.data() + t * plane;
                    double* gp = g.data() + t * plane;
                    for (std::size_t i = 0; i < plane; ++i) gp[i] += gy * dp[i] * inv;
                  }
                });
}

Tensor bce_loss(const Tensor& probs, const std::vector<int>& labels) {
  const NdArray& pv = probs.value();
  if (pv.ndim() != 1 || pv.numel() != labels.size())
    throw ValidationError("bce_loss: probs shape " + pv.shape_str() + " vs " +
                          std::to_string(labels.size()) + " labels");
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] != 0 && labels[i] != 1)
      throw ValidationError("bce_loss: label at index " + std::to_string(i) + " is " +
                            std::to_string(labels[i]) + ", expected 0 or 1");
  constexpr double lo = 1e-7, hi = 1.0 - 1e-7;
  const std::size_t n = labels.size();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double h = std::min(std::max(pv[i], lo), hi);
    total += labels[i] == 1 ? -std::log(h) : -std::log(1.0 - h);
  }
  NdArray out = NdArray::scalar(total / static_cast<double>(n), pv.dtype());
  auto pp = probs.node();
  auto labs = labels;
  return record("bce_loss", std::move(out), {pp}, [pp, labs, n](Node& self) {
    if (!pp->requires_grad) return;
    NdArray& g = pp->ensure_grad();
    const double gy = self.grad[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double h = pp->value[i];
      if (h <= lo || h >= hi) continue;  // clamp is flat outside
      g[i] += gy * (h - static_cast<double>(labs[i])) / (h * (1.0 - h));
    }
  });
}

Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats,
                 Mode mode, double momentum, double eps) {
  common_dtype("batchnorm", x, gamma);
  const NdArray& xv = x.value();
  const std::size_t c = xv.shape().back();
  if (gamma.numel() != c || beta.numel() != c)
    throw ValidationError("batchnorm: gamma/beta size " + std::to_string(gamma.numel()) +
                          " vs channels " + std::to_string(c));
  const std::size_t m = xv.numel() / c;

  NdArray mean({c}, Dtype::f64), var({c}, Dtype::f64);
  if (mode == Mode::train) {
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t j = 0; j < c; ++j) mean[j] += xv[r * c + j];
    for (std::size_t j = 0; j < c; ++j) mean[j] /= static_cast<double>(m);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t j = 0; j < c; ++j) {
        const double d = xv[r * c + j] - mean[j];
        var[j] += d * d;
      }
    for (std::size_t j = 0; j < c; ++j) var[j] /= static_cast<double>(m);
    if (!stats.initialized) {
      stats.running_mean = mean;
      stats.running_var = var;
      stats.initialized = true;
    } else {
      for (std::size_t j = 0; j < c; ++j) {
        stats.running_mean[j] = momentum * stats.running_mean[j] + (1.0 - momentum) * mean[j];
        stats.running_var[j] = momentum * stats.running_var[j] + (1.0 - momentum) * var[j];
      }
    }
  } else {
    if (!stats.initialized) {
      stats.running_mean = NdArray({c}, Dtype::f64);
      stats.running_var = NdArray::full({c}, 1.0, Dtype::f64);
      stats.initialized = true;
    }
    mean = stats.running_mean;
    var = stats.running_var;
  }

  NdArray inv({c}, Dtype::f64);
  for (std::size_t j = 0; j < c; ++j) inv[j] = 1.0 / std::sqrt(var[j] + eps);
  NdArray xhat(xv.shape(), Dtype::f64);
  NdArray out(xv.shape(), xv.dtype());
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (xv[r * c + j] - mean[j]) * inv[j];
      xhat[r * c + j] = h;
      out[r * c + j] = gamma.value()[j] * h + beta.value()[j];
    }
  out.quantize();

  auto px = x.node(), pg = gamma.node(), pb = beta.node();
  const bool train_stats = mode == Mode::train;
  return record("batchnorm", std::move(out), {px, pg, pb},
                [px, pg, pb, xhat, inv, m, c, train_stats](Node& self) {
                  NdArray dgamma({c}, Dtype::f64), dbeta({c}, Dtype::f64);
                  for (std::size_t r = 0; r < m; ++r)
                    for (std::size_t j = 0; j < c; ++j) {
                      dgamma[j] += self.grad[r * c + j] * xhat[r * c + j];
                      dbeta[j] += self.grad[r * c + j];
                    }
                  if (pg->requires_grad) {
                    NdArray& g = pg->ensure_grad();
                    for (std::size_t j = 0; j < c; ++j) g[j] += dgamma[j];
                  }
                  if (pb->requires_grad) {
                    NdArray& g = pb->ensure_grad();
                    for (std::size_t j = 0; j < c; ++j) g[j] += dbeta[j];
                  }
                  if (!px->requires_grad) return;
                  NdArray& gx = px->ensure_grad();
                  const double mf = static_cast<double>(m);
                  if (train_stats) {
                    for (std::size_t r = 0; r < m; ++r)
                      for (std::size_t j = 0; j < c; ++j) {
                        const double dy = self.grad[r * c + j];
                        gx[r * c + j] += pg->value[j] * inv[j] *
                                         (dy - dbeta[j] / mf - xhat[r * c + j] * dgamma[j] / mf);
                      }
                  } else {
                    for (std::size_t r = 0; r < m; ++r)
                      for (std::size_t j = 0; j < c; ++j)
                        gx[r * c + j] += pg->value[j] * inv[j] * self.grad[r * c + j];
                  }
                });
}

Tensor custom_op(const std::vector<Tensor>& inputs, NdArray value,
                 std::function<void(detail::Node&)> backward_fn) {
  std::vector<NodePtr> parents;
  for (const Tensor& t : inputs) parents.push_back(t.node());
  return record("custom_op", std::move(value), std::move(parents), std::move(backward_fn));
}

}  // namespace h2o
