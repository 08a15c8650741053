#include "rxm/illum.hpp"

#include <array>

#include "rxm/error.hpp"
#include "rxm/ops.hpp"

namespace rxm {

IEWeights make_ie_weights(ParamSet& params, const std::string& prefix, std::int64_t n_feat, Rng& rng) {
  IEWeights w;
  w.n_feat = n_feat;
  w.fuse = make_conv(params, prefix + ".fuse", n_feat, 4, 1, true, rng);
  w.dw = make_conv(params, prefix + ".dw", n_feat, 1, 5, true, rng);
  w.out = make_conv(params, prefix + ".out", 3, n_feat, 1, true, rng);
  return w;
}

Var illumination_prior(const Var& image) {
  if (image.shape().c != 3) {
    throw DimensionError("illumination_prior: axis C must be 3, got " + std::to_string(image.shape().c));
  }
  return ops::channel_mean(image);
}

IEOutput ie_forward(ParamBinder& bind, const IEWeights& w, const Var& image, const Var& prior) {
  const Shape is = image.shape();
  const Shape ps = prior.shape();
  if (is.c != 3) throw DimensionError("ie_forward: image axis C must be 3, got " + std::to_string(is.c));
  if (ps.c != 1) throw DimensionError("ie_forward: prior axis C must be 1, got " + std::to_string(ps.c));
  if (ps.n != is.n) throw DimensionError("ie_forward: prior/image mismatch on axis N");
  if (ps.h != is.h) throw DimensionError("ie_forward: prior/image mismatch on axis H");
  if (ps.w != is.w) throw DimensionError("ie_forward: prior/image mismatch on axis W");

  const std::array<Var, 2> parts{image, prior};
  const Var fused = conv(bind, w.fuse, ops::concat_channels(parts));
  IEOutput out;
  out.features = conv(bind, w.dw, fused, {.stride = 1, .padding = 2, .groups = static_cast<int>(w.n_feat)});
  out.illumination = conv(bind, w.out, out.features);
  out.lit = ops::mul(image, out.illumination);
  return out;
}

}  // namespace rxm
