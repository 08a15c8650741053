#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <set>

#include "rxm/error.hpp"
#include "rxm/model.hpp"

using namespace rxm;

namespace {

Var c(Tensor t) { return Var::constant(std::move(t)); }

ModelConfig small() {
  ModelConfig cfg;
  cfg.n_feat = 8;
  cfg.heads_base_width = 8;
  cfg.d_state_base = 4;
  return cfg;
}

std::set<std::string> names(const ModelWeights& w) {
  std::set<std::string> out;
  for (const auto& p : w.params().all()) out.insert(p->name);
  return out;
}

std::set<std::string> minus(const std::set<std::string>& a, const std::set<std::string>& b) {
  std::set<std::string> out;
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::inserter(out, out.end()));
  return out;
}

}  // namespace

TEST_CASE("config validation") {
  ModelConfig cfg;
  cfg.levels = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = ModelConfig{};
  cfg.heads_base_width = 7;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = ModelConfig{};
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.channels_at(2) == 160);
  CHECK(cfg.heads_at(0) == 1);
  CHECK(cfg.heads_at(2) == 4);
}

TEST_CASE("ablation parsing") {
  CHECK(parse_ablation("noss2d") == Ablation::noss2d);
  CHECK_THROWS_AS(parse_ablation("nothing"), ConfigError);
  const ModelConfig base;
  CHECK(apply_ablation(base, Ablation::fixedhs).d_state_fixed);
  CHECK(apply_ablation(base, Ablation::nofb).fusion == FusionMode::elementwise);
  CHECK(apply_ablation(base, Ablation::igmsa).fusion == FusionMode::igmsa);
  CHECK_FALSE(apply_ablation(base, Ablation::noss2d).ss2d_enabled);
}

TEST_CASE("census and ablation subtrees") {
  const ModelConfig cfg = small();
  const ModelWeights full = ModelWeights::create(cfg);
  const auto all = names(full);
  CHECK(all.size() == full.params().size());
  for (const char* n : {"ifvm.pyr1.w", "ifvm.pyr1.b", "ifvm.pyr2.w", "ifvm.pyr2.b"}) CHECK(all.count(n) == 1);

  const auto no_ss2d = names(ModelWeights::create(apply_ablation(cfg, Ablation::noss2d)));
  for (const auto& n : minus(all, no_ss2d)) CHECK(n.find(".ss2d.") != std::string::npos);
  for (const auto& n : no_ss2d) CHECK(n.find(".ss2d.") == std::string::npos);
  CHECK(minus(no_ss2d, all).empty());

  const auto no_fb = names(ModelWeights::create(apply_ablation(cfg, Ablation::nofb)));
  CHECK(minus(no_fb, all).empty());
  for (const auto& n : minus(all, no_fb)) CHECK(n.find(".ifa.") != std::string::npos);

  const auto igmsa = names(ModelWeights::create(apply_ablation(cfg, Ablation::igmsa)));
  CHECK(igmsa.size() == all.size());
  for (const auto& n : minus(igmsa, all)) CHECK(n.find(".igmsa.") != std::string::npos);

  const ModelWeights fixed = ModelWeights::create(apply_ablation(cfg, Ablation::fixedhs));
  CHECK(names(fixed) == all);
  CHECK(d_state_trace(full) == std::vector<std::int64_t>{4, 8, 16});
  CHECK(d_state_trace(fixed) == std::vector<std::int64_t>{4, 4, 4});
}

TEST_CASE("creation is a pure function of the config") {
  const ModelWeights a = ModelWeights::create(small());
  const ModelWeights b = ModelWeights::create(small());
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    CHECK(max_abs_diff(a.params().all()[i]->value, b.params().all()[i]->value) == 0.0);
  }
}

TEST_CASE("initialisation bounds") {
  const ModelWeights w = ModelWeights::create(small());
  for (const auto& p : w.params().all()) {
    if (p->kind == ParamKind::norm_gain) {
      for (float v : p->value.data()) CHECK(v == 1.0f);
    } else if (p->kind == ParamKind::norm_shift) {
      for (float v : p->value.data()) CHECK(v == 0.0f);
    }
  }
  const Param& k = w.params().get("ifvm.embed.w");
  const float bound = std::sqrt(1.0f / 27.0f);
  for (float v : k.value.data()) CHECK(std::abs(v) <= bound);
}

TEST_CASE("block structure and shapes") {
  ModelConfig cfg;
  const ModelWeights w = ModelWeights::create(cfg);
  ForwardTrace trace;
  ParamBinder bind;
  Rng rng(1);
  const Var y = model_forward(bind, w, c(Tensor::uniform({1, 3, 16, 16}, 0.0f, 1.0f, rng)), ScanKernel::parallel, &trace);
  CHECK(y.shape() == Shape{1, 3, 16, 16});
  REQUIRE(trace.block_inputs.size() == 5);
  CHECK(trace.block_inputs[0] == Shape{1, 40, 16, 16});
  CHECK(trace.block_inputs[1] == Shape{1, 80, 8, 8});
  CHECK(trace.block_inputs[2] == Shape{1, 160, 4, 4});
  CHECK(trace.block_inputs[3] == Shape{1, 80, 8, 8});
  CHECK(trace.block_inputs[4] == Shape{1, 40, 16, 16});
  CHECK(trace.bottleneck_channels == 160);
  CHECK_THROWS_AS(model_forward(bind, w, c(Tensor({1, 3, 18, 16}))), DimensionError);
}

TEST_CASE("ifssm shape and residual identity") {
  ModelConfig cfg;
  Rng rng(2);
  ParamSet ps;
  const IFSSMWeights w = make_ifssm_weights(ps, "blk", cfg, 0, rng);
  const Tensor x = Tensor::normal({1, 40, 16, 16}, 1.0f, rng);
  ParamBinder bind;
  CHECK(ifssm_forward(bind, w, cfg, c(x), c(x)).shape() == x.shape());

  cfg.ss2d_enabled = false;
  ParamSet plain;
  const IFSSMWeights r = make_ifssm_weights(plain, "blk", cfg, 0, rng);
  CHECK_FALSE(r.ss2d.has_value());
  for (const auto& p : plain.all()) {
    if (p->name.find(".ffn.") != std::string::npos || p->name.find(".ifa.out") != std::string::npos) p->value.fill(0.0f);
  }
  CHECK(max_abs_diff(ifssm_forward(bind, r, cfg, c(x), c(x)).value(), x) == 0.0);
}

TEST_CASE("pyramid shapes and zero input") {
  ModelConfig cfg;
  ModelWeights w = ModelWeights::create(cfg);
  ParamBinder bind;
  Rng rng(3);
  const auto pyr = build_flu_pyramid(bind, w.ifvm(), c(Tensor::normal({1, 40, 64, 64}, 1.0f, rng)));
  CHECK(pyr[0].shape() == Shape{1, 40, 64, 64});
  CHECK(pyr[1].shape() == Shape{1, 80, 32, 32});
  CHECK(pyr[2].shape() == Shape{1, 160, 16, 16});
  w.params().get("ifvm.pyr1.b").value.fill(0.0f);
  w.params().get("ifvm.pyr2.b").value.fill(0.0f);
  ParamBinder fresh;
  const auto zero = build_flu_pyramid(fresh, w.ifvm(), c(Tensor({1, 40, 8, 8})));
  for (const auto& level : zero)
    for (float v : level.value().data()) CHECK(v == 0.0f);
  CHECK_THROWS_AS(build_flu_pyramid(bind, w.ifvm(), c(Tensor({1, 40, 6, 8}))), DimensionError);
}

TEST_CASE("dead restorer adds only the output bias") {
  ModelWeights w = ModelWeights::create(small());
  for (const auto& p : w.params().all()) {
    if (p->name.rfind("ifvm.", 0) == 0) p->value.fill(0.0f);
  }
  Tensor& bias = w.params().get("ifvm.out.b").value;
  bias[0] = 0.1f;
  bias[1] = -0.2f;
  bias[2] = 0.3f;
  Rng rng(4);
  const Tensor lit = Tensor::uniform({1, 3, 16, 16}, 0.0f, 1.0f, rng);
  ParamBinder bind;
  const Tensor y = ifvm_forward(bind, w, c(lit), c(Tensor({1, 8, 16, 16}))).value();
  for (std::int64_t ch = 0; ch < 3; ++ch)
    for (std::int64_t p = 0; p < 256; ++p) CHECK(y[ch * 256 + p] == lit[ch * 256 + p] + bias[ch]);
}

TEST_CASE("bias-only network reduces to scaled input plus bias") {
  ModelWeights w = ModelWeights::create(small());
  for (const auto& p : w.params().all()) {
    if (p->kind == ParamKind::kernel) p->value.fill(0.0f);
  }
  Rng rng(5);
  const Tensor img = Tensor::uniform({1, 3, 8, 8}, 0.0f, 1.0f, rng);
  const Tensor y = enhance(w, img);
  const Tensor& illum = w.params().get("ie.out.b").value;
  const Tensor& out = w.params().get("ifvm.out.b").value;
  for (std::int64_t ch = 0; ch < 3; ++ch)
    for (std::int64_t p = 0; p < 64; ++p) CHECK(y[ch * 64 + p] == doctest::Approx(img[ch * 64 + p] * illum[ch] + out[ch]).epsilon(1e-6));
}

TEST_CASE("identity weights reproduce the input") {
  ModelWeights w = ModelWeights::create(small());
  make_identity(w);
  Rng rng(6);
  const Tensor img = Tensor::uniform({1, 3, 12, 8}, 0.0f, 1.0f, rng);
  CHECK(max_abs_diff(enhance(w, img), img) == 0.0);
}

TEST_CASE("single-lane determinism") {
  Rng rng(7);
  const Tensor img = Tensor::uniform({1, 3, 16, 16}, 0.0f, 1.0f, rng);
  const Tensor a = enhance(ModelWeights::create(small()), img);
  const Tensor b = enhance(ModelWeights::create(small()), img);
  CHECK(std::memcmp(a.ptr(), b.ptr(), sizeof(float) * a.numel()) == 0);
}
