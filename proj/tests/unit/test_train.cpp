#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "rxm/error.hpp"
#include "rxm/train.hpp"

using namespace rxm;
using doctest::Approx;

namespace {

Var c(Tensor t) { return Var::constant(std::move(t)); }

ModelConfig tiny() {
  ModelConfig cfg;
  cfg.n_feat = 4;
  cfg.heads_base_width = 4;
  cfg.d_state_base = 2;
  return cfg;
}

TrainConfig quick() {
  TrainConfig tc;
  tc.total_steps = 3;
  tc.batch_size = 2;
  tc.crop = 8;
  tc.seed = 5;
  return tc;
}

std::vector<ImagePair> dataset(int count, Rng& rng) {
  std::vector<ImagePair> d;
  for (int i = 0; i < count; ++i) {
    d.push_back({Tensor::uniform({1, 3, 12, 16}, 0.0f, 0.3f, rng), Tensor::uniform({1, 3, 12, 16}, 0.0f, 1.0f, rng)});
  }
  return d;
}

}  // namespace

TEST_CASE("l1 loss") {
  const Tensor a({1, 1, 1, 2}, std::vector<float>{0, 1}), b({1, 1, 1, 2}, std::vector<float>{1, 1});
  CHECK(l1_loss(c(a), c(b)).value()[0] == 0.5f);
  CHECK(l1_loss(c(a), c(a)).value()[0] == 0.0f);
  Rng rng(1);
  const Tensor x = Tensor::normal({1, 3, 4, 4}, 1.0f, rng), y = Tensor::normal({1, 3, 4, 4}, 1.0f, rng);
  Tensor x3 = x, y3 = y;
  for (auto& v : x3.data()) v *= 3.0f;
  for (auto& v : y3.data()) v *= 3.0f;
  CHECK(l1_loss(c(x3), c(y3)).value()[0] == Approx(3.0 * l1_loss(c(x), c(y)).value()[0]).epsilon(1e-6));
  CHECK_THROWS_AS(l1_loss(c(x), c(Tensor({1, 3, 4, 5}))), DimensionError);
}

TEST_CASE("adam") {
  ParamSet ps;
  Param& p = ps.add("p", ParamKind::other, Tensor({1, 1, 1, 2}, std::vector<float>{1.0f, 1.0f}));
  Param& q = ps.add("q", ParamKind::other, Tensor({1, 1, 1, 1}, 0.5f));
  AdamState st;
  p.grad[0] = 3.0f;
  p.grad[1] = -0.01f;
  p.has_grad = true;
  q.has_grad = true;  // zero gradient
  adam_step(ps, st, 0.1);
  CHECK(p.value[0] == Approx(0.9).epsilon(1e-6));
  CHECK(p.value[1] == Approx(1.1).epsilon(1e-5));
  CHECK(q.value[0] == 0.5f);
  CHECK(p.grad[0] == 0.0f);
  CHECK_FALSE(p.has_grad);
  CHECK_THROWS_AS(adam_step(ps, st, 0.1), UsageError);
  CHECK(st.step == 1);
}

TEST_CASE("cosine schedule") {
  CHECK(cosine_lr(0, 100, 2e-4, 1e-6) == 2e-4);
  CHECK(cosine_lr(100, 100, 2e-4, 1e-6) == Approx(1e-6));
  CHECK(cosine_lr(50, 100, 2e-4, 1e-6) == Approx((2e-4 + 1e-6) / 2));
  CHECK_THROWS_AS(cosine_lr(101, 100, 2e-4, 1e-6), UsageError);
  CHECK_THROWS_AS(cosine_lr(-1, 100, 2e-4, 1e-6), UsageError);
}

TEST_CASE("geometric transforms") {
  Rng rng(2);
  const Tensor x = Tensor::normal({1, 3, 4, 6}, 1.0f, rng);
  CHECK(max_abs_diff(hflip(hflip(x)), x) == 0.0);
  CHECK(max_abs_diff(vflip(vflip(x)), x) == 0.0);
  CHECK(rot90(x).shape() == Shape{1, 3, 6, 4});
  CHECK(max_abs_diff(rot90(rot90(rot90(rot90(x)))), x) == 0.0);
  // Counterclockwise: the top-right corner moves to the top-left.
  CHECK(rot90(x).at(0, 1, 0, 0) == x.at(0, 1, 0, 5));
}

TEST_CASE("augmentation") {
  Rng rng(3);
  const ImagePair pair{Tensor::normal({1, 3, 8, 8}, 1.0f, rng), Tensor::normal({1, 3, 8, 8}, 1.0f, rng)};
  TrainConfig off;
  off.crop = 8;
  off.hflip = off.vflip = off.rot90 = false;
  const ImagePair same = augment(pair, off, rng);
  CHECK(max_abs_diff(same.low, pair.low) == 0.0);
  CHECK(max_abs_diff(same.gt, pair.gt) == 0.0);

  // A single marker pixel must land at the same place in both images.
  Tensor marker({1, 3, 12, 12});
  marker.at(0, 0, 2, 9) = 1.0f;
  TrainConfig on;
  on.crop = 8;
  for (int t = 0; t < 50; ++t) {
    const ImagePair out = augment({marker, marker}, on, rng);
    CHECK(max_abs_diff(out.low, out.gt) == 0.0);
  }
  TrainConfig big;
  big.crop = 16;
  CHECK_THROWS_AS(augment(pair, big, rng), DimensionError);
}

TEST_CASE("config validation") {
  TrainConfig tc;
  tc.crop = 6;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc = TrainConfig{};
  tc.batch_size = 0;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
}

TEST_CASE("training loop") {
  Rng rng(4);
  const auto data = dataset(3, rng);
  const auto trace = (std::filesystem::temp_directory_path() / "rxm_train_trace.csv").string();

  ModelWeights a = ModelWeights::create(tiny());
  const auto steps = train_loop(data, a, quick(), trace);
  REQUIRE(steps.size() == 3);
  CHECK(steps.front().lr == quick().lr_max);
  CHECK(steps.back().lr == Approx(quick().lr_min));
  for (const auto& s : steps) CHECK(std::isfinite(s.l1));

  std::ifstream in(trace);
  std::string line;
  std::getline(in, line);
  CHECK(line == "step,lr,l1");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 3);
  std::filesystem::remove(trace);

  ModelWeights b = ModelWeights::create(tiny());
  train_loop(data, b, quick());
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    const Tensor& x = a.params().all()[i]->value;
    const Tensor& y = b.params().all()[i]->value;
    CHECK(std::memcmp(x.ptr(), y.ptr(), sizeof(float) * x.numel()) == 0);
  }
  CHECK_THROWS_AS(train_loop({}, b, quick()), UsageError);
}
