#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "h2o/errors.hpp"

namespace h2o {

enum class Dtype { f32, f64 };

std::string dtype_name(Dtype d);
Dtype dtype_from_name(const std::string& name);

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

// Dense row-major array. Storage is double; in f32 mode every producing
// operation rounds its result through IEEE binary32 (see quantize()), so the
// observable values are float32 while accumulation inside a primitive stays
// wide.
class NdArray {
 public:
  NdArray() = default;
  explicit NdArray(Shape shape, Dtype dtype = Dtype::f64)
      : shape_(std::move(shape)), dtype_(dtype), data_(shape_numel(shape_), 0.0) {}

  static NdArray zeros(Shape shape, Dtype dtype = Dtype::f64) { return NdArray(std::move(shape), dtype); }
  static NdArray full(Shape shape, double v, Dtype dtype = Dtype::f64);
  static NdArray from_values(Shape shape, std::vector<double> values, Dtype dtype = Dtype::f64);
  static NdArray scalar(double v, Dtype dtype = Dtype::f64) { return from_values({1}, {v}, dtype); }
  static NdArray eye(std::size_t n, Dtype dtype = Dtype::f64);

  std::size_t ndim() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  const Shape& shape() const { return shape_; }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  Dtype dtype() const { return dtype_; }
  void set_dtype(Dtype d) { dtype_ = d; }
  bool defined() const { return !shape_.empty() || !data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& raw() { return data_; }
  const std::vector<double>& raw() const { return data_; }

  double& operator[](std::size_t flat) { return data_[flat]; }
  double operator[](std::size_t flat) const { return data_[flat]; }

  double& at(std::size_t i) { return data_[i]; }
  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double at(std::size_t i) const { return data_[i]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  void fill(double v);
  // Rounds every element through float when dtype is f32; no-op for f64.
  void quantize();
  bool same_shape(const NdArray& other) const { return shape_ == other.shape_; }
  std::string shape_str() const { return h2o::shape_str(shape_); }

  NdArray reshaped(Shape new_shape) const;
  bool all_finite() const;
  double max_abs() const;

 private:
  Shape shape_;
  Dtype dtype_ = Dtype::f64;
  std::vector<double> data_;
};

// Seeded RNG wrapper so every stochastic choice in the project goes through
// one engine type and stays reproducible.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double uniform(double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(gen_);
  }
  double normal(double mean, double stddev) {
    std::normal_distribution<double> d(mean, stddev);
    return d(gen_);
  }
  std::uint64_t next_u64() { return gen_(); }
  std::size_t index(std::size_t n) {
    std::uniform_int_distribution<std::size_t> d(0, n - 1);
    return d(gen_);
  }
  std::mt19937_64& engine() { return gen_; }

  // Derives an independent stream; used to give each module its own
  // initialization sequence regardless of sibling modules.
  static std::uint64_t derive(std::uint64_t seed, const std::string& tag);

 private:
  std::mt19937_64 gen_;
};

// Fan-in scaled uniform init for weight matrices and conv kernels.
void init_fan_in_uniform(NdArray& w, std::size_t fan_in, Rng& rng);
void init_normal(NdArray& w, double stddev, Rng& rng);

}  // namespace h2o
