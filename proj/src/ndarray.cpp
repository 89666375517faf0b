#include "h2o/ndarray.hpp"

#include <cmath>
#include <functional>
#include <sstream>

namespace h2o {

std::string dtype_name(Dtype d) { return d == Dtype::f32 ? "f32" : "f64"; }

Dtype dtype_from_name(const std::string& name) {
  if (name == "f32" || name == "float32") return Dtype::f32;
  if (name == "f64" || name == "float64") return Dtype::f64;
  throw ValidationError("unknown dtype '" + name + "' (expected f32 or f64)");
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << ")";
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return s.empty() ? 0 : n;
}

NdArray NdArray::full(Shape shape, double v, Dtype dtype) {
  NdArray a(std::move(shape), dtype);
  a.fill(v);
  return a;
}

NdArray NdArray::from_values(Shape shape, std::vector<double> values, Dtype dtype) {
  if (shape_numel(shape) != values.size())
    throw ValidationError("from_values: shape " + h2o::shape_str(shape) + " expects " +
                          std::to_string(shape_numel(shape)) + " values, got " +
                          std::to_string(values.size()));
  NdArray a;
  a.shape_ = std::move(shape);
  a.dtype_ = dtype;
  a.data_ = std::move(values);
  a.quantize();
  return a;
}

NdArray NdArray::eye(std::size_t n, Dtype dtype) {
  NdArray a({n, n}, dtype);
  for (std::size_t i = 0; i < n; ++i) a.at(i, i) = 1.0;
  return a;
}

void NdArray::fill(double v) {
  if (dtype_ == Dtype::f32) v = static_cast<double>(static_cast<float>(v));
  for (double& x : data_) x = v;
}

void NdArray::quantize() {
  if (dtype_ != Dtype::f32) return;
  for (double& x : data_) x = static_cast<double>(static_cast<float>(x));
}

NdArray NdArray::reshaped(Shape new_shape) const {
  if (shape_numel(new_shape) != numel())
    throw ValidationError("reshape: " + shape_str() + " -> " + h2o::shape_str(new_shape) +
                          " changes element count");
  NdArray out = *this;
  out.shape_ = std::move(new_shape);
  return out;
}

bool NdArray::all_finite() const {
  for (double x : data_)
    if (!std::isfinite(x)) return false;
  return true;
}

double NdArray::max_abs() const {
  double m = 0.0;
  for (double x : data_) m = std::max(m, std::fabs(x));
  return m;
}

std::uint64_t Rng::derive(std::uint64_t seed, const std::string& tag) {
  std::uint64_t h = 1469598103934665603ull ^ seed;
  for (char c : tag) {
    h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
    h *= 1099511628211ull;
  }
  return h;
}

void init_fan_in_uniform(NdArray& w, std::size_t fan_in, Rng& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in > 0 ? fan_in : 1));
  for (std::size_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-bound, bound);
  w.quantize();
}

void init_normal(NdArray& w, double stddev, Rng& rng) {
  for (std::size_t i = 0; i < w.numel(); ++i) w[i] = rng.normal(0.0, stddev);
  w.quantize();
}

}  // namespace h2o
