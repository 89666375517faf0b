#include <doctest.h>

#include <cmath>

#include "h2o/ndarray.hpp"

using namespace h2o;

TEST_CASE("shape bookkeeping") {
  NdArray a({2, 3, 4});
  CHECK(a.numel() == 24);
  CHECK(a.ndim() == 3);
  CHECK(a.shape_str() == "(2,3,4)");
  a.at(1, 2, 3) = 7.0;
  CHECK(a[23] == 7.0);

  CHECK_THROWS_AS(NdArray::from_values({2, 2}, {1.0, 2.0, 3.0}), ValidationError);
  CHECK_THROWS_AS(a.reshaped({5, 5}), ValidationError);
  CHECK(a.reshaped({24}).ndim() == 1);
}

TEST_CASE("f32 quantization rounds through binary32") {
  NdArray a = NdArray::from_values({2}, {0.1, 1.0 / 3.0}, Dtype::f32);
  CHECK(a[0] == static_cast<double>(static_cast<float>(0.1)));
  CHECK(a[1] == static_cast<double>(static_cast<float>(1.0 / 3.0)));
  NdArray b = NdArray::from_values({2}, {0.1, 1.0 / 3.0}, Dtype::f64);
  CHECK(b[0] == 0.1);
}

TEST_CASE("eye and fill") {
  NdArray id = NdArray::eye(3);
  CHECK(id.at(0, 0) == 1.0);
  CHECK(id.at(0, 1) == 0.0);
  NdArray f = NdArray::full({2, 2}, 2.5);
  CHECK(f.max_abs() == 2.5);
}

TEST_CASE("rng streams are deterministic and independent per tag") {
  Rng a(Rng::derive(42, "weights"));
  Rng b(Rng::derive(42, "weights"));
  Rng c(Rng::derive(42, "other"));
  const double va = a.uniform(-1, 1);
  CHECK(va == b.uniform(-1, 1));
  CHECK(va != c.uniform(-1, 1));
}

TEST_CASE("fan-in init stays within bound") {
  Rng rng(1);
  NdArray w({64, 16});
  init_fan_in_uniform(w, 64, rng);
  const double bound = 1.0 / std::sqrt(64.0);
  for (std::size_t i = 0; i < w.numel(); ++i) {
    CHECK(w[i] <= bound);
    CHECK(w[i] >= -bound);
  }
}
