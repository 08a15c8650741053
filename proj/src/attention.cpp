#include "rxm/attention.hpp"

#include <cmath>

#include "rxm/error.hpp"
#include "rxm/ops.hpp"

namespace rxm {

namespace {

void check_inputs(const IFAWeights& w, const Var& x, const Var& illum, const char* what) {
  require_same_shape(x.shape(), illum.shape(), what);
  if (x.shape().c != w.channels) {
    throw DimensionError(std::string(what) + ": input axis C is " + std::to_string(x.shape().c) +
                         ", weights expect " + std::to_string(w.channels));
  }
}

Var project(ParamBinder& bind, Param* weight, const Var& x) { return ops::conv2d(x, bind(*weight), Var{}); }

Var attend(ParamBinder& bind, const IFAWeights& w, const Var& q, const Var& k, const Var& v, Tensor* attention) {
  const Shape s = q.shape();
  const std::int64_t dk = s.c / w.heads;
  const Shape split{s.n, w.heads, dk, s.h * s.w};
  const Var scores = ops::batched_matmul(ops::reshape(k, split), ops::reshape(q, split), false, true);
  const Var weights = ops::softmax(ops::div_channels(scores, bind(*w.alpha), kAlphaMinAbs), 2);
  if (attention) *attention = weights.value();
  const Var heads = ops::batched_matmul(weights, ops::reshape(v, split), true, false);
  return conv(bind, w.out, ops::reshape(heads, s));
}

}  // namespace

std::string to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::ifa: return "ifa";
    case FusionMode::elementwise: return "elementwise";
    case FusionMode::igmsa: return "igmsa";
  }
  return "?";
}

FusionMode parse_fusion_mode(std::string_view text) {
  if (text == "ifa") return FusionMode::ifa;
  if (text == "elementwise") return FusionMode::elementwise;
  if (text == "igmsa") return FusionMode::igmsa;
  throw ConfigError("unknown fusion mode '" + std::string(text) + "' (expected ifa, elementwise or igmsa)");
}

IFAWeights make_ifa_weights(ParamSet& params, const std::string& prefix, std::int64_t channels,
                            std::int64_t heads, Rng& rng) {
  if (heads < 1 || channels % heads != 0) {
    throw ConfigError("attention: " + std::to_string(channels) + " channels not divisible into " +
                      std::to_string(heads) + " heads");
  }
  IFAWeights w;
  w.channels = channels;
  w.heads = heads;
  const auto bound = static_cast<float>(std::sqrt(1.0 / static_cast<double>(channels)));
  const Shape proj{channels, channels, 1, 1};
  w.wq = &params.add(prefix + ".wq", ParamKind::kernel, Tensor::uniform(proj, -bound, bound, rng));
  w.wk = &params.add(prefix + ".wk", ParamKind::kernel, Tensor::uniform(proj, -bound, bound, rng));
  w.wv = &params.add(prefix + ".wv", ParamKind::kernel, Tensor::uniform(proj, -bound, bound, rng));
  w.alpha = &params.add(prefix + ".alpha", ParamKind::other, Tensor(Shape{1, heads, 1, 1}, 1.0f));
  w.out = make_conv(params, prefix + ".out", channels, channels, 1, true, rng);
  return w;
}

Var ifa_forward(ParamBinder& bind, const IFAWeights& w, const Var& x, const Var& illum, Tensor* attention) {
  check_inputs(w, x, illum, "ifa_forward");
  return attend(bind, w, project(bind, w.wq, illum), project(bind, w.wk, x), project(bind, w.wv, x), attention);
}

Var elementwise_fuse(const Var& x, const Var& illum) {
  require_same_shape(x.shape(), illum.shape(), "elementwise_fuse");
  return ops::mul(x, illum);
}

Var igmsa_forward(ParamBinder& bind, const IFAWeights& w, const Var& x, const Var& illum, Tensor* attention) {
  check_inputs(w, x, illum, "igmsa_forward");
  const Var v = ops::mul(project(bind, w.wv, x), illum);
  return attend(bind, w, project(bind, w.wq, x), project(bind, w.wk, x), v, attention);
}

}  // namespace rxm
