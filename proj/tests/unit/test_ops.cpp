#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "rxm/error.hpp"
#include "rxm/ops.hpp"

using namespace rxm;
using doctest::Approx;

namespace {

Var c(Tensor t) { return Var::constant(std::move(t)); }

Tensor filled(Shape s, std::vector<float> v) { return Tensor(s, std::move(v)); }

}  // namespace

TEST_CASE("tensor basics") {
  Tensor t(Shape{2, 3, 4, 5}, 1.5f);
  CHECK(t.numel() == 120);
  CHECK(t.at(1, 2, 3, 4) == 1.5f);
  CHECK_THROWS_AS(t.reshaped({1, 1, 1, 7}), DimensionError);
  Rng a(3), b(3);
  CHECK(max_abs_diff(Tensor::normal({1, 2, 3, 4}, 1.0f, a), Tensor::normal({1, 2, 3, 4}, 1.0f, b)) == 0.0);
}

TEST_CASE("shape mismatch names the axis") {
  try {
    require_same_shape({1, 2, 3, 4}, {1, 2, 5, 4}, "probe");
    FAIL("expected throw");
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("axis H") != std::string::npos);
  }
}

TEST_CASE("conv2d identity 1x1") {
  Rng rng(1);
  const Tensor x = Tensor::normal({2, 2, 3, 5}, 1.0f, rng);
  const Tensor w = filled({2, 2, 1, 1}, {1, 0, 0, 1});
  CHECK(max_abs_diff(ops::conv2d(c(x), c(w), Var{}).value(), x) == 0.0);
}

TEST_CASE("conv2d all-ones 3x3") {
  const Var y = ops::conv2d(c(Tensor({1, 1, 3, 3}, 1.0f)), c(Tensor({1, 1, 3, 3}, 1.0f)), Var{}, {.stride = 1, .padding = 1});
  const Tensor& v = y.value();
  CHECK(v.at(0, 0, 1, 1) == 9.0f);
  for (auto [h, w] : {std::pair{0, 0}, {0, 2}, {2, 0}, {2, 2}}) CHECK(v.at(0, 0, h, w) == 4.0f);
  for (auto [h, w] : {std::pair{0, 1}, {1, 0}, {1, 2}, {2, 1}}) CHECK(v.at(0, 0, h, w) == 6.0f);
}

TEST_CASE("conv2d stride and padding shapes") {
  Rng rng(2);
  const Var y = ops::conv2d(c(Tensor::normal({1, 3, 16, 16}, 1.0f, rng)), c(Tensor::normal({5, 3, 4, 4}, 1.0f, rng)),
                            Var{}, {.stride = 2, .padding = 1});
  CHECK(y.shape() == Shape{1, 5, 8, 8});
}

TEST_CASE("depthwise conv keeps channels independent") {
  Rng rng(3);
  Tensor x = Tensor::normal({1, 4, 5, 5}, 1.0f, rng);
  const Tensor w = Tensor::normal({4, 1, 3, 3}, 1.0f, rng);
  const ops::Conv2dOptions opt{.stride = 1, .padding = 1, .groups = 4};
  const Tensor before = ops::conv2d(c(x), c(w), Var{}, opt).value();
  for (int i = 0; i < 25; ++i) x[i] += 3.0f;
  const Tensor after = ops::conv2d(c(x), c(w), Var{}, opt).value();
  for (std::int64_t i = 25; i < before.numel(); ++i) CHECK(before[i] == after[i]);
  CHECK(before[12] != after[12]);
}

TEST_CASE("conv2d linearity") {
  Rng rng(4);
  const Tensor x = Tensor::normal({1, 3, 7, 6}, 1.0f, rng), y = Tensor::normal({1, 3, 7, 6}, 1.0f, rng);
  const Tensor w = Tensor::normal({2, 3, 3, 3}, 1.0f, rng);
  const float a = 0.7f, b = -1.3f;
  Tensor mix(x.shape());
  for (std::int64_t i = 0; i < mix.numel(); ++i) mix[i] = a * x[i] + b * y[i];
  const ops::Conv2dOptions opt{.stride = 1, .padding = 1};
  const Tensor lhs = ops::conv2d(c(mix), c(w), Var{}, opt).value();
  const Tensor cx = ops::conv2d(c(x), c(w), Var{}, opt).value();
  const Tensor cy = ops::conv2d(c(y), c(w), Var{}, opt).value();
  for (std::int64_t i = 0; i < lhs.numel(); ++i) CHECK(std::abs(lhs[i] - (a * cx[i] + b * cy[i])) <= 1e-5);
}

TEST_CASE("conv2d rejects bad shapes") {
  CHECK_THROWS_AS(ops::conv2d(c(Tensor({1, 3, 4, 4})), c(Tensor({2, 2, 3, 3})), Var{}), DimensionError);
  CHECK_THROWS_AS(ops::conv2d(c(Tensor({1, 3, 2, 2})), c(Tensor({2, 3, 3, 3})), Var{}), DimensionError);
}

TEST_CASE("conv_transpose2d") {
  CHECK(ops::conv_transpose2d(c(Tensor({1, 1, 2, 2}, 1.0f)), c(Tensor({1, 1, 2, 2}, 1.0f)), Var{}).shape() ==
        Shape{1, 1, 4, 4});
  Tensor x({1, 1, 2, 2});
  x[0] = 1.0f;
  const Tensor y = ops::conv_transpose2d(c(x), c(Tensor({1, 1, 2, 2}, 1.0f)), Var{}).value();
  for (int h = 0; h < 4; ++h)
    for (int w = 0; w < 4; ++w) CHECK(y.at(0, 0, h, w) == (h < 2 && w < 2 ? 1.0f : 0.0f));
  const Tensor z = ops::conv_transpose2d(c(Tensor({1, 2, 2, 2})), c(Tensor({2, 3, 2, 2}, 1.0f)),
                                         c(filled({1, 3, 1, 1}, {1, 2, 3})))
                       .value();
  for (int ch = 0; ch < 3; ++ch) CHECK(z.at(0, ch, 3, 1) == float(ch + 1));
}

TEST_CASE("layer_norm examples") {
  const Var g = c(Tensor({1, 2, 1, 1}, 1.0f)), b = c(Tensor({1, 2, 1, 1}, 0.0f));
  const Tensor y = ops::layer_norm(c(filled({1, 2, 1, 1}, {1, 3})), g, b).value();
  CHECK(y[0] == Approx(-1.0).epsilon(1e-5));
  CHECK(y[1] == Approx(1.0).epsilon(1e-5));
  const Tensor flat = ops::layer_norm(c(Tensor({1, 2, 2, 2}, 5.0f)), g, b).value();
  for (float v : flat.data()) CHECK(v == 0.0f);
  Rng rng(5);
  const Tensor shift = filled({1, 2, 1, 1}, {0.25f, -2.0f});
  const Tensor z = ops::layer_norm(c(Tensor::normal({1, 2, 3, 3}, 1.0f, rng)), c(Tensor({1, 2, 1, 1}, 0.0f)), c(shift)).value();
  for (int i = 0; i < 9; ++i) {
    CHECK(z[i] == 0.25f);
    CHECK(z[9 + i] == -2.0f);
  }
  CHECK_THROWS_AS(ops::layer_norm(c(Tensor({1, 0, 1, 1})), c(Tensor({1, 0, 1, 1})), c(Tensor({1, 0, 1, 1}))),
                  DimensionError);
}

TEST_CASE("softmax examples") {
  const Tensor u = ops::softmax(c(Tensor({1, 3, 1, 1}, 0.0f)), 1).value();
  for (float v : u.data()) CHECK(v == Approx(1.0 / 3.0));
  const Tensor p = ops::softmax(c(filled({1, 1, 1, 2}, {0.0f, static_cast<float>(std::numbers::ln2)})), 3).value();
  CHECK(p[0] == Approx(1.0 / 3.0).epsilon(1e-6));
  CHECK(p[1] == Approx(2.0 / 3.0).epsilon(1e-6));
  Rng rng(6);
  const Tensor x = Tensor::normal({2, 3, 4, 5}, 2.0f, rng);
  Tensor shifted = x;
  for (auto& v : shifted.data()) v += 7.0f;
  CHECK(max_abs_diff(ops::softmax(c(x), 2).value(), ops::softmax(c(shifted), 2).value()) <= 1e-6);
}

TEST_CASE("softmax sums to one on 1000 random inputs") {
  Rng rng(7);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const Shape s{1 + std::int64_t(rng.below(3)), 1 + std::int64_t(rng.below(5)), 1 + std::int64_t(rng.below(5)),
                  1 + std::int64_t(rng.below(5))};
    const int axis = int(rng.below(4));
    const Tensor y = ops::softmax(c(Tensor::normal(s, 4.0f, rng)), axis).value();
    const std::int64_t dims[4] = {s.n, s.c, s.h, s.w};
    for (std::int64_t n = 0; n < s.n; ++n)
      for (std::int64_t ch = 0; ch < s.c; ++ch)
        for (std::int64_t h = 0; h < s.h; ++h)
          for (std::int64_t w = 0; w < s.w; ++w) {
            std::int64_t idx[4] = {n, ch, h, w};
            if (idx[axis] != 0) continue;
            double sum = 0.0;
            for (std::int64_t k = 0; k < dims[axis]; ++k) {
              idx[axis] = k;
              sum += y.at(idx[0], idx[1], idx[2], idx[3]);
            }
            worst = std::max(worst, std::abs(sum - 1.0));
          }
  }
  CHECK(worst <= 1e-6);
}

TEST_CASE("activations") {
  const Tensor x = filled({1, 1, 1, 2}, {0.0f, 1.0f});
  const Tensor s = ops::activation(c(x), ops::Activation::silu).value();
  const Tensor g = ops::activation(c(x), ops::Activation::gelu).value();
  CHECK(s[0] == 0.0f);
  CHECK(g[0] == 0.0f);
  CHECK(s[1] == Approx(0.731059).epsilon(1e-6));
  CHECK(g[1] == Approx(0.841345).epsilon(1e-6));
  CHECK(ops::softplus(c(x)).value()[0] == Approx(std::log(2.0)));
  CHECK(ops::parse_activation("gelu") == ops::Activation::gelu);
  CHECK_THROWS_AS(ops::parse_activation("relu"), ConfigError);
}

TEST_CASE("batched_matmul against loops") {
  Rng rng(8);
  const Tensor a = Tensor::normal({2, 3, 4, 5}, 1.0f, rng), b = Tensor::normal({2, 3, 6, 5}, 1.0f, rng);
  const Tensor y = ops::batched_matmul(c(a), c(b), false, true).value();
  CHECK(y.shape() == Shape{2, 3, 4, 6});
  for (int n = 0; n < 2; ++n)
    for (int ch = 0; ch < 3; ++ch)
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 6; ++j) {
          double acc = 0.0;
          for (int k = 0; k < 5; ++k) acc += double(a.at(n, ch, i, k)) * b.at(n, ch, j, k);
          CHECK(y.at(n, ch, i, j) == Approx(acc).epsilon(1e-5));
        }
}

TEST_CASE("div_channels clamps tiny divisors") {
  const Tensor y = ops::div_channels(c(Tensor({1, 2, 1, 1}, 1.0f)), c(filled({1, 2, 1, 1}, {0.0f, -2.0f})), 1e-4f).value();
  CHECK(y[0] == Approx(1e4));
  CHECK(y[1] == Approx(-0.5));
}

TEST_CASE("single-lane determinism") {
  Rng rng(9);
  const Tensor x = Tensor::normal({1, 4, 9, 9}, 1.0f, rng), w = Tensor::normal({6, 4, 3, 3}, 1.0f, rng);
  const Tensor a = ops::conv2d(c(x), c(w), Var{}, {.stride = 1, .padding = 1}).value();
  const Tensor b = ops::conv2d(c(x), c(w), Var{}, {.stride = 1, .padding = 1}).value();
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}
