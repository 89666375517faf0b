#include <doctest.h>

#include <cmath>

#include "h2o/autodiff.hpp"
#include "h2o/gradcheck.hpp"
#include "h2o/optim.hpp"

using namespace h2o;

namespace {

NdArray random_array(Shape shape, Rng& rng, double scale = 1.0, Dtype dt = Dtype::f64) {
  NdArray a(std::move(shape), dt);
  for (std::size_t i = 0; i < a.numel(); ++i) a[i] = rng.normal(0.0, scale);
  a.quantize();
  return a;
}

// Independent oracle: naive i/j/k product, deliberately not the kernel's
// loop order.
NdArray matmul_oracle(const NdArray& a, const NdArray& b) {
  NdArray c({a.dim(0), b.dim(1)});
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < b.dim(1); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.dim(1); ++k) acc += a.at(i, k) * b.at(k, j);
      c.at(i, j) = acc;
    }
  return c;
}

}  // namespace

TEST_CASE("matmul matches the triple-loop oracle") {
  Rng rng(3);
  NdArray a = random_array({3, 4}, rng);
  NdArray b = random_array({4, 2}, rng);
  Tensor c = matmul(constant(a), constant(b));
  NdArray expect = matmul_oracle(a, b);
  for (std::size_t i = 0; i < expect.numel(); ++i)
    CHECK(std::fabs(c.value()[i] - expect[i]) < 1e-12);

  CHECK_THROWS_AS(matmul(constant(a), constant(a)), ValidationError);
}

TEST_CASE("batched matmul agrees with per-frame products") {
  Rng rng(4);
  NdArray a = random_array({5, 3, 4}, rng);
  NdArray w = random_array({4, 2}, rng);
  Tensor out = matmul(constant(a), constant(w));
  CHECK(out.shape() == Shape{5, 3, 2});
  for (std::size_t t = 0; t < 5; ++t) {
    NdArray frame({3, 4});
    for (std::size_t i = 0; i < 12; ++i) frame[i] = a[t * 12 + i];
    NdArray expect = matmul_oracle(frame, w);
    for (std::size_t i = 0; i < 6; ++i)
      CHECK(out.value()[t * 6 + i] == doctest::Approx(expect[i]).epsilon(1e-12));
  }

  // 2D left against 3D right broadcasts over the batch.
  NdArray p = random_array({3, 3}, rng);
  Tensor out2 = matmul(constant(p), constant(a));
  CHECK(out2.shape() == Shape{5, 3, 4});
}

TEST_CASE("softmax of equal logits is uniform") {
  Tensor y = softmax_lastaxis(constant(NdArray::from_values({3}, {0.0, 0.0, 0.0})));
  for (std::size_t i = 0; i < 3; ++i) CHECK(y.value()[i] == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("softmax rows sum to one under extreme logits") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const Dtype dt = trial % 2 ? Dtype::f32 : Dtype::f64;
    NdArray x = random_array({4, 9}, rng, 1.0, dt);
    x[rng.index(x.numel())] = 1e4;
    x[rng.index(x.numel())] = -1e4;
    x.quantize();
    Tensor y = softmax_lastaxis(constant(x));
    const double tol = dt == Dtype::f32 ? 1e-6 : 1e-12;
    for (std::size_t r = 0; r < 4; ++r) {
      double sum = 0.0;
      for (std::size_t j = 0; j < 9; ++j) {
        CHECK(y.value()[r * 9 + j] >= 0.0);
        sum += y.value()[r * 9 + j];
      }
      CHECK(std::fabs(sum - 1.0) < tol);
    }
  }
}

TEST_CASE("conv1d with zero kernel returns zeros of the same length") {
  Rng rng(6);
  NdArray x = random_array({7, 3}, rng);
  Tensor out = conv1d_dilated(constant(x), constant(NdArray({3, 3, 2})), 1);
  CHECK(out.shape() == Shape{7, 2});
  for (std::size_t i = 0; i < out.numel(); ++i) CHECK(out.value()[i] == 0.0);

  NdArray kernel({4, 3, 2});
  CHECK_THROWS_AS(conv1d_dilated(constant(x), constant(kernel), 1), ValidationError);
}

TEST_CASE("conv1d at T=1 sees only the center tap") {
  Rng rng(7);
  NdArray x = random_array({1, 2, 4}, rng);
  NdArray k5 = random_array({5, 4, 2}, rng);
  Tensor wide = conv1d_dilated(constant(x), constant(k5), 1);
  NdArray center({1, 4, 2});
  for (std::size_t i = 0; i < center.numel(); ++i) center[i] = k5[2 * 8 + i];
  Tensor point = conv1d_dilated(constant(x), constant(center), 1);
  for (std::size_t i = 0; i < wide.numel(); ++i)
    CHECK(wide.value()[i] == doctest::Approx(point.value()[i]).epsilon(1e-14));
}

TEST_CASE("mean_pool drops one axis and averages over it") {
  NdArray x = NdArray::from_values({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor over_rows = mean_pool(constant(x), 0);
  CHECK(over_rows.shape() == Shape{3});
  CHECK(over_rows.value()[0] == doctest::Approx(2.5));
  Tensor over_cols = mean_pool(constant(x), 1);
  CHECK(over_cols.shape() == Shape{2});
  CHECK(over_cols.value()[1] == doctest::Approx(5.0));
  CHECK(mean_all(constant(x)).scalar() == doctest::Approx(3.5));
  CHECK_THROWS_AS(mean_pool(constant(x), 2), ValidationError);
}

TEST_CASE("sum of linear map has all-ones gradient") {
  Tensor w(NdArray::from_values({2, 3}, {1, 2, 3, 4, 5, 6}), true);
  w.set_name("w");
  Tensor x = constant(NdArray::full({3, 1}, 1.0));
  Tensor y = matmul(w, x);                // (2,1)
  Tensor loss = scale(mean_all(y), 2.0);  // = sum(y)
  backward(loss);
  for (std::size_t i = 0; i < 6; ++i) CHECK(w.grad()[i] == doctest::Approx(1.0));
}

TEST_CASE("cross-entropy at uniform logits gives p minus onehot") {
  Tensor logits(NdArray::from_values({1, 2}, {0.3, 0.3}), true);
  Tensor probs = softmax_lastaxis(logits);
  Tensor h = reshape(slice_lastaxis(probs, 1, 1), {1});  // positive-class probability
  Tensor loss = bce_loss(h, {1});
  backward(loss);
  CHECK(logits.grad()[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(logits.grad()[1] == doctest::Approx(-0.5).epsilon(1e-12));
}

TEST_CASE("random op compositions pass finite differences") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    Rng rng(seed);
    std::vector<Parameter> params;
    Tensor a(random_array({3, 4}, rng, 0.7), true);
    Tensor b(random_array({4, 4}, rng, 0.7), true);
    Tensor g(random_array({4}, rng, 0.3), true);
    Tensor ker(random_array({3, 4, 4}, rng, 0.5), true);
    params.push_back({"a", a});
    params.push_back({"b", b});
    params.push_back({"g", g});
    params.push_back({"ker", ker});
    NdArray target = random_array({3, 4}, rng);

    auto loss_fn = [&]() {
      Tensor h = relu(matmul(a, b));
      h = add_rowvec(h, g);
      h = conv1d_dilated(h, ker, 1);  // (3,4) treated as (T,C)
      h = softmax_lastaxis(h);
      Tensor d = sub(h, constant(target));
      return mean_all(mul(d, d));
    };
    FiniteDiffReport report = finite_diff_check(loss_fn, params, 1e-5, 1e-4, 32, seed);
    CHECK(report.pass);
  }
}

TEST_CASE("batchnorm gradients pass finite differences in both modes") {
  Rng rng(11);
  Tensor x(random_array({6, 4}, rng), true);
  Tensor gamma(random_array({4}, rng, 0.2), true);
  Tensor beta(random_array({4}, rng, 0.2), true);
  std::vector<Parameter> params{{"x", x}, {"gamma", gamma}, {"beta", beta}};

  for (Mode mode : {Mode::train, Mode::eval}) {
    BatchNormStats stats;
    stats.running_mean = random_array({4}, rng, 0.1);
    stats.running_var = NdArray::full({4}, 1.3);
    stats.initialized = true;
    auto loss_fn = [&]() {
      BatchNormStats local = stats;  // keep the EMA out of the probe loop
      return mean_all(relu(batchnorm(x, gamma, beta, local, mode)));
    };
    FiniteDiffReport report = finite_diff_check(loss_fn, params, 1e-5, 1e-4, 24, 1);
    CHECK(report.pass);
  }
}

TEST_CASE("gather and relpos scores backpropagate") {
  Rng rng(12);
  Tensor table(random_array({4, 3}, rng), true);
  Tensor q(random_array({2, 5, 3}, rng), true);
  std::vector<Parameter> params{{"table", table}, {"q", q}};
  const std::vector<std::size_t> idx = {0, 2, 3, 1, 0, 3, 2, 1, 1, 0, 2, 3, 0,
                                        1, 2, 3, 3, 2, 1, 0, 0, 0, 1, 2, 3};
  auto loss_fn = [&]() {
    Tensor rphi = reshape(gather_rows(table, idx), {5, 5, 3});
    Tensor scores = relpos_scores(q, rphi);
    return mean_all(softmax_lastaxis(scores));
  };
  FiniteDiffReport report = finite_diff_check(loss_fn, params, 1e-5, 1e-4, 32, 2);
  CHECK(report.pass);

  CHECK_THROWS_AS(gather_rows(table, {7}), ValidationError);
}

TEST_CASE("tape replays in reverse execution order and skips unreachable") {
  Tensor a(NdArray::from_values({1}, {2.0}), true);
  Tensor unused(NdArray::from_values({1}, {5.0}), true);
  Tensor loss = mul(a, a);
  Tape tape(loss);
  CHECK(tape.num_ops() == 1);
  tape.backward();
  CHECK(a.grad()[0] == doctest::Approx(4.0));
  CHECK(unused.grad()[0] == 0.0);

  Tensor vec(NdArray::from_values({2}, {1.0, 2.0}), true);
  CHECK_THROWS_AS(backward(relu(vec)), ValidationError);
}

TEST_CASE("no-grad mode drops the recorded graph") {
  Tensor a(NdArray::from_values({1}, {2.0}), true);
  NoGradGuard guard;
  Tensor y = mul(a, a);
  CHECK_FALSE(y.requires_grad());
  CHECK(Tape(y).num_ops() == 0);
}

TEST_CASE("replaying a forward with identical inputs is bitwise identical") {
  for (Dtype dt : {Dtype::f32, Dtype::f64}) {
    Rng rng1(9), rng2(9);
    NdArray x1 = random_array({4, 6}, rng1, 1.0, dt);
    NdArray x2 = random_array({4, 6}, rng2, 1.0, dt);
    Tensor y1 =
        softmax_lastaxis(matmul(constant(x1), constant(random_array({6, 3}, rng1, 1.0, dt))));
    Tensor y2 =
        softmax_lastaxis(matmul(constant(x2), constant(random_array({6, 3}, rng2, 1.0, dt))));
    for (std::size_t i = 0; i < y1.numel(); ++i) CHECK(y1.value()[i] == y2.value()[i]);
  }
}

TEST_CASE("sgd step and schedule") {
  Tensor w(NdArray::from_values({1}, {1.0}), true);
  std::vector<Parameter> params{{"w", w}};
  w.grad()[0] = 1.0;
  sgd_step(params, 0.0005);
  CHECK(w.value()[0] == doctest::Approx(0.9995));

  w.zero_grad();
  sgd_step(params, 0.0005);
  CHECK(w.value()[0] == doctest::Approx(0.9995));  // zero grad leaves it alone

  LrSchedule schedule{0.0005, 0.1, {60}};
  CHECK(schedule.at_epoch(0) == doctest::Approx(0.0005));
  CHECK(schedule.at_epoch(59) == doctest::Approx(0.0005));
  CHECK(schedule.at_epoch(60) == doctest::Approx(0.00005));
}

TEST_CASE("quadratic loss gradcheck is near exact") {
  Rng rng(13);
  Tensor w(random_array({4, 4}, rng), true);
  std::vector<Parameter> params{{"w", w}};
  auto loss_fn = [&]() { return scale(mean_all(mul(w, w)), 16.0); };  // = ||W||^2
  FiniteDiffReport report = finite_diff_check(loss_fn, params, 1e-5, 1e-8, 16, 3);
  CHECK(report.pass);
  CHECK(report.entries[0].max_rel_err < 1e-8);
}

TEST_CASE("a corrupted backward is caught and named") {
  Rng rng(14);
  Tensor w(random_array({3, 3}, rng), true);
  std::vector<Parameter> params;
  params.push_back({"w_bad", w});
  auto loss_fn = [&]() {
    NdArray doubled = w.value();
    for (std::size_t i = 0; i < doubled.numel(); ++i) doubled[i] *= 2.0;
    auto node = w.node();
    // Forward is 2w but the recorded backward claims d/dw = 0.5.
    return mean_all(custom_op({w}, std::move(doubled), [node](detail::Node& self) {
      NdArray& g = node->ensure_grad();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += 0.5 * self.grad[i];
    }));
  };
  FiniteDiffReport report = finite_diff_check(loss_fn, params, 1e-5, 1e-4, 9, 4);
  CHECK_FALSE(report.pass);
  CHECK(report.entries[0].param == "w_bad");
  CHECK_FALSE(report.entries[0].pass);
}
