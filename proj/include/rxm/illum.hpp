#pragma once

#include <cstdint>
#include <string>

#include "rxm/autodiff.hpp"
#include "rxm/layers.hpp"

namespace rxm {

// Illumination estimator: concat(image, prior) -> 1x1 -> depthwise 5x5 gives the
// illumination features; a final 1x1 gives the 3-channel illumination map.
struct IEWeights {
  ConvParams fuse;  // 1x1, 4 -> n_feat
  ConvParams dw;    // 5x5 depthwise, n_feat groups, padding 2
  ConvParams out;   // 1x1, n_feat -> 3
  std::int64_t n_feat = 0;
};

IEWeights make_ie_weights(ParamSet& params, const std::string& prefix, std::int64_t n_feat, Rng& rng);

// Per-pixel mean of the three colour channels: (N, 3, H, W) -> (N, 1, H, W).
Var illumination_prior(const Var& image);

struct IEOutput {
  Var lit;           // image * illumination, (N, 3, H, W)
  Var features;      // (N, n_feat, H, W)
  Var illumination;  // raw map, not clamped, (N, 3, H, W)
};

IEOutput ie_forward(ParamBinder& bind, const IEWeights& w, const Var& image, const Var& prior);

}  // namespace rxm
