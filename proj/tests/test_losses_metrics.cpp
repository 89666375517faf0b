#include <doctest.h>

#include <cmath>

#include "h2o/losses.hpp"
#include "h2o/metrics.hpp"

using namespace h2o;

namespace {

Tensor seq_tensor(std::size_t t, std::size_t v, double value) {
  return constant(NdArray::full({t, v, 3}, value));
}

}  // namespace

TEST_CASE("reconstruction loss: exact match gives zero") {
  NdArray x = NdArray::full({4, 22, 3}, 0.7);
  Tensor loss = loss_rec({constant(x)}, {x});
  CHECK(loss.scalar() == 0.0);
}

TEST_CASE("reconstruction loss: unit offset on 22 joints is sqrt(66)") {
  NdArray target({5, 22, 3});
  Tensor loss = loss_rec({seq_tensor(5, 22, 1.0)}, {target});
  CHECK(loss.scalar() == doctest::Approx(std::sqrt(66.0)).epsilon(1e-12));
}

TEST_CASE("reconstruction loss is linear in the batch mean") {
  NdArray target({3, 4, 3});
  Tensor perfect = seq_tensor(3, 4, 0.0);
  Tensor off = seq_tensor(3, 4, 1.0);
  const double solo = loss_rec({off}, {target}).scalar();
  const double pair = loss_rec({off, perfect}, {target, target}).scalar();
  CHECK(pair == doctest::Approx(solo / 2.0).epsilon(1e-12));
  CHECK(solo > 0.0);
}

TEST_CASE("classification loss examples") {
  Tensor half = constant(NdArray::from_values({1}, {0.5}));
  CHECK(bce_loss(half, {1}).scalar() == doctest::Approx(0.693147).epsilon(1e-5));

  Tensor sure = constant(NdArray::from_values({1}, {1.0 - 1e-7}));
  CHECK(bce_loss(sure, {1}).scalar() == doctest::Approx(1e-7).epsilon(1e-2));

  Tensor batch = constant(NdArray::from_values({2}, {0.5, 0.5}));
  CHECK(bce_loss(batch, {1, 0}).scalar() == doctest::Approx(0.693147).epsilon(1e-5));

  CHECK_THROWS_WITH_AS(bce_loss(batch, {1, 2}), doctest::Contains("label"), ValidationError);
}

TEST_CASE("classification loss is symmetric under label flip") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> probs(5);
    std::vector<int> labels(5), flipped(5);
    std::vector<double> complement(5);
    for (std::size_t i = 0; i < 5; ++i) {
      probs[i] = rng.uniform(0.01, 0.99);
      labels[i] = rng.index(2) ? 1 : 0;
      flipped[i] = 1 - labels[i];
      complement[i] = 1.0 - probs[i];
    }
    const double a = bce_loss(constant(NdArray::from_values({5}, probs)), labels).scalar();
    const double b = bce_loss(constant(NdArray::from_values({5}, complement)), flipped).scalar();
    CHECK(a == doctest::Approx(b).epsilon(1e-12));
  }
}

TEST_CASE("combined loss and the balance suggestion") {
  Tensor rec = constant(NdArray::scalar(2.0));
  Tensor cls = constant(NdArray::scalar(3.0));
  CHECK(combined_loss(rec, cls, 1.0, 1.0).scalar() == doctest::Approx(5.0));
  CHECK(combined_loss(rec, cls, 0.0, 1.0).scalar() == doctest::Approx(3.0));
  CHECK(combined_loss(Tensor(), cls, 0.0, 2.0).scalar() == doctest::Approx(6.0));
  CHECK_THROWS_AS(combined_loss(rec, cls, -1.0, 1.0), ValidationError);

  CHECK(suggest_lambda1(12.0, 1.0) == doctest::Approx(0.1));
  CHECK(suggest_lambda1(1.0, 1.0) == doctest::Approx(1.0));
  CHECK(suggest_lambda1(0.001, 1.0) == doctest::Approx(1000.0));
}

TEST_CASE("metrics: perfect predictions") {
  MetricsReport m = compute_metrics({1, 0, 1, 0}, {1, 0, 1, 0});
  CHECK(m.accuracy == 1.0);
  CHECK(m.f1_micro == 1.0);
  CHECK(m.f1_positive == 1.0);
  CHECK(m.f1_macro == 1.0);
}

TEST_CASE("metrics: hand-filled 4-sample confusion table") {
  // labels: three positive, one negative; one positive missed
  const std::vector<int> labels = {1, 1, 1, 0};
  const std::vector<int> preds = {1, 1, 0, 0};
  MetricsReport m = compute_metrics(preds, labels);
  CHECK(m.confusion.tp[1] == 2);
  CHECK(m.confusion.fn[1] == 1);
  CHECK(m.confusion.tp[0] == 1);
  CHECK(m.confusion.fp[0] == 1);
  CHECK(m.confusion.fp[1] == 0);
  CHECK(m.accuracy == doctest::Approx(0.75));
  // positive class: P = 2/2, R = 2/3 -> F1 = 0.8
  CHECK(m.f1_positive == doctest::Approx(0.8));
  // negative class: P = 1/2, R = 1/1 -> F1 = 2/3; macro = (0.8 + 2/3)/2
  CHECK(m.f1_macro == doctest::Approx((0.8 + 2.0 / 3.0) / 2.0));
  CHECK(m.f1_micro == doctest::Approx(0.75));
}

TEST_CASE("micro F1 equals accuracy on binary single-label data") {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.index(20);
    std::vector<int> preds(n), labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      preds[i] = rng.index(2) ? 1 : 0;
      labels[i] = rng.index(2) ? 1 : 0;
    }
    MetricsReport m = compute_metrics(preds, labels);
    CHECK(m.f1_micro == doctest::Approx(m.accuracy).epsilon(1e-12));
  }
}

TEST_CASE("metrics reject empty or malformed inputs") {
  CHECK_THROWS_AS(compute_metrics({}, {}), ValidationError);
  CHECK_THROWS_AS(compute_metrics({1}, {1, 0}), ValidationError);
  CHECK_THROWS_AS(compute_metrics({2}, {1}), ValidationError);
}

TEST_CASE("reference results are metadata only") {
  const auto& refs = reported_reference_results();
  REQUIRE(refs.size() == 2);
  CHECK(refs[0].dataset == "iMiGUE");
  CHECK(refs[0].accuracy == doctest::Approx(0.7000));
  CHECK(refs[0].f1 == doctest::Approx(0.7222));
  CHECK(refs[1].dataset == "SMG");
  CHECK(refs[1].accuracy == doctest::Approx(0.7544));
  CHECK(refs[1].f1 == doctest::Approx(0.7647));
}
