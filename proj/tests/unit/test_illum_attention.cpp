#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>

#include "rxm/attention.hpp"
#include "rxm/error.hpp"
#include "rxm/illum.hpp"
#include "rxm/ops.hpp"

using namespace rxm;
using doctest::Approx;

namespace {

Var c(Tensor t) { return Var::constant(std::move(t)); }

std::vector<float> values(const Var& v) { return {v.value().data().begin(), v.value().data().end()}; }

void zero_all(ParamSet& ps) {
  for (const auto& p : ps.all()) p->value.fill(0.0f);
}

}  // namespace

TEST_CASE("illumination prior is the channel mean") {
  const Tensor img({1, 3, 1, 1}, std::vector<float>{0.2f, 0.4f, 0.6f});
  CHECK(illumination_prior(c(img)).value()[0] == Approx(0.4));
  const Tensor black({2, 3, 4, 4}, 0.0f);
  for (float v : values(illumination_prior(c(black)))) CHECK(v == 0.0f);
  const Tensor flat({1, 3, 2, 2}, 0.3f);
  for (float v : values(illumination_prior(c(flat)))) CHECK(v == Approx(0.3));
  CHECK_THROWS_AS(illumination_prior(c(Tensor({1, 4, 2, 2}))), DimensionError);
}

TEST_CASE("estimator shapes and unit illumination") {
  Rng rng(1);
  ParamSet ps;
  const IEWeights w = make_ie_weights(ps, "ie", 40, rng);
  CHECK(w.dw.weight->value.shape() == Shape{40, 1, 5, 5});
  const Tensor img = Tensor::uniform({1, 3, 64, 64}, 0.0f, 1.0f, rng);
  ParamBinder bind;
  const IEOutput out = ie_forward(bind, w, c(img), illumination_prior(c(img)));
  CHECK(out.features.shape() == Shape{1, 40, 64, 64});
  CHECK(out.illumination.shape() == Shape{1, 3, 64, 64});
  // lit is exactly image * illumination.
  for (std::int64_t i = 0; i < img.numel(); ++i) CHECK(out.lit.value()[i] == img[i] * out.illumination.value()[i]);

  zero_all(ps);
  w.out.bias->value.fill(1.0f);
  ParamBinder unit_bind;
  const IEOutput unit = ie_forward(unit_bind, w, c(img), illumination_prior(c(img)));
  CHECK(max_abs_diff(unit.lit.value(), img) == 0.0);

  zero_all(ps);
  const Tensor zero({1, 3, 8, 8});
  ParamBinder zero_bind;
  for (float v : values(ie_forward(zero_bind, w, c(zero), illumination_prior(c(zero))).lit)) CHECK(v == 0.0f);
  CHECK_THROWS_AS(ie_forward(bind, w, c(img), c(Tensor({1, 1, 32, 64}))), DimensionError);
}

TEST_CASE("zero keys give uniform attention over value channels") {
  Rng rng(2);
  ParamSet ps;
  const IFAWeights w = make_ifa_weights(ps, "a", 8, 2, rng);
  w.wk->value.fill(0.0f);
  // Identity output projection exposes the per-head mixture.
  w.out.weight->value.fill(0.0f);
  w.out.bias->value.fill(0.0f);
  for (int i = 0; i < 8; ++i) w.out.weight->value[i * 8 + i] = 1.0f;
  const Tensor x = Tensor::normal({1, 8, 4, 4}, 1.0f, rng), f = Tensor::normal({1, 8, 4, 4}, 1.0f, rng);
  ParamBinder bind;
  Tensor attn;
  const Tensor y = ifa_forward(bind, w, c(x), c(f), &attn).value();
  for (float a : attn.data()) CHECK(a == Approx(0.25));
  const Tensor v = ops::conv2d(c(x), c(w.wv->value), Var{}).value();
  for (int head = 0; head < 2; ++head)
    for (int p = 0; p < 16; ++p) {
      double mean = 0.0;
      for (int k = 0; k < 4; ++k) mean += v[(head * 4 + k) * 16 + p] / 4.0;
      for (int k = 0; k < 4; ++k) CHECK(y[(head * 4 + k) * 16 + p] == Approx(mean).epsilon(1e-5));
    }
}

TEST_CASE("attention shape laws and errors") {
  Rng rng(3);
  ParamSet ps;
  const IFAWeights w = make_ifa_weights(ps, "a", 8, 2, rng);
  const Tensor x = Tensor::normal({1, 8, 4, 4}, 1.0f, rng);
  ParamBinder bind;
  CHECK(ifa_forward(bind, w, c(x), c(x)).shape() == x.shape());
  CHECK(igmsa_forward(bind, w, c(x), c(x)).shape() == x.shape());
  CHECK_THROWS_AS(ifa_forward(bind, w, c(x), c(Tensor({1, 8, 4, 2}))), DimensionError);
  CHECK_THROWS_AS(make_ifa_weights(ps, "b", 8, 3, rng), ConfigError);
  CHECK(w.alpha->value[0] == 1.0f);
}

TEST_CASE("igmsa with unit illumination is self-attention") {
  Rng rng(4);
  ParamSet ps;
  const IFAWeights w = make_ifa_weights(ps, "a", 4, 1, rng);
  const Tensor x = Tensor::normal({1, 4, 3, 3}, 1.0f, rng);
  ParamBinder bind;
  const Tensor a = igmsa_forward(bind, w, c(x), c(Tensor(x.shape(), 1.0f))).value();
  const Tensor b = ifa_forward(bind, w, c(x), c(x)).value();
  CHECK(max_abs_diff(a, b) <= 1e-6);
}

TEST_CASE("elementwise fusion") {
  const Tensor x({1, 2, 2, 2}, 2.0f);
  CHECK(max_abs_diff(elementwise_fuse(c(x), c(Tensor(x.shape(), 1.0f))).value(), x) == 0.0);
  for (float v : values(elementwise_fuse(c(x), c(Tensor(x.shape(), 3.0f))))) CHECK(v == 6.0f);
  for (float v : values(elementwise_fuse(c(Tensor(x.shape())), c(x)))) CHECK(v == 0.0f);
  CHECK_THROWS_AS(elementwise_fuse(c(x), c(Tensor({1, 2, 2, 1}))), DimensionError);
}

TEST_CASE("fusion mode names") {
  for (auto m : {FusionMode::ifa, FusionMode::elementwise, FusionMode::igmsa}) CHECK(parse_fusion_mode(to_string(m)) == m);
  CHECK_THROWS_AS(parse_fusion_mode("cross"), ConfigError);
}

TEST_CASE("attention cost grows linearly with pixels") {
  Rng rng(5);
  ParamSet ps;
  const IFAWeights w = make_ifa_weights(ps, "a", 16, 2, rng);
  auto time_at = [&](std::int64_t side) {
    const Tensor x = Tensor::normal({1, 16, side, side}, 1.0f, rng);
    ParamBinder bind;
    double best = 1e9;
    for (int r = 0; r < 5; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      ifa_forward(bind, w, c(x), c(x));
      best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    return best;
  };
  const double small = time_at(64);
  const double doubled = time_at(91);  // about twice the pixels
  CHECK(doubled < 3.0 * small);
}
