#include "rxm/layers.hpp"

#include <cmath>

namespace rxm {

ConvParams make_conv(ParamSet& params, const std::string& name, std::int64_t cout, std::int64_t cin_per_group,
                     std::int64_t kernel, bool with_bias, Rng& rng) {
  const auto bound = static_cast<float>(std::sqrt(1.0 / static_cast<double>(cin_per_group * kernel * kernel)));
  ConvParams p;
  p.weight = &params.add(name + ".w", ParamKind::kernel,
                         Tensor::uniform(Shape{cout, cin_per_group, kernel, kernel}, -bound, bound, rng));
  if (with_bias) {
    p.bias = &params.add(name + ".b", ParamKind::bias, Tensor::uniform(Shape{1, cout, 1, 1}, -bound, bound, rng));
  }
  return p;
}

ConvParams make_conv_transpose(ParamSet& params, const std::string& name, std::int64_t cin, std::int64_t cout,
                               std::int64_t kernel, Rng& rng) {
  const auto bound = static_cast<float>(std::sqrt(1.0 / static_cast<double>(cin * kernel * kernel)));
  ConvParams p;
  p.weight = &params.add(name + ".w", ParamKind::kernel,
                         Tensor::uniform(Shape{cin, cout, kernel, kernel}, -bound, bound, rng));
  p.bias = &params.add(name + ".b", ParamKind::bias, Tensor::uniform(Shape{1, cout, 1, 1}, -bound, bound, rng));
  return p;
}

LayerNormParams make_layer_norm(ParamSet& params, const std::string& name, std::int64_t channels) {
  LayerNormParams p;
  p.gamma = &params.add(name + ".g", ParamKind::norm_gain, Tensor(Shape{1, channels, 1, 1}, 1.0f));
  p.beta = &params.add(name + ".b", ParamKind::norm_shift, Tensor(Shape{1, channels, 1, 1}, 0.0f));
  return p;
}

Var conv(ParamBinder& bind, const ConvParams& p, const Var& x, ops::Conv2dOptions options) {
  return ops::conv2d(x, bind(*p.weight), p.bias ? bind(*p.bias) : Var{}, options);
}

Var conv_transpose(ParamBinder& bind, const ConvParams& p, const Var& x, ops::ConvTransposeOptions options) {
  return ops::conv_transpose2d(x, bind(*p.weight), p.bias ? bind(*p.bias) : Var{}, options);
}

Var layer_norm(ParamBinder& bind, const LayerNormParams& p, const Var& x) {
  return ops::layer_norm(x, bind(*p.gamma), bind(*p.beta));
}

}  // namespace rxm
