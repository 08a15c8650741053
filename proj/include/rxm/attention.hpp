#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "rxm/autodiff.hpp"
#include "rxm/layers.hpp"

namespace rxm {

// How an IFSSM block fuses the illumination features into its input.
enum class FusionMode { ifa, elementwise, igmsa };

std::string to_string(FusionMode mode);
FusionMode parse_fusion_mode(std::string_view text);

struct IFAWeights {
  Param* wq = nullptr;     // (C, C, 1, 1), no bias
  Param* wk = nullptr;
  Param* wv = nullptr;
  Param* alpha = nullptr;  // (1, heads, 1, 1), per-head temperature divisor
  ConvParams out;          // 1x1, C -> C
  std::int64_t channels = 0;
  std::int64_t heads = 0;
};

// |alpha| is clamped to at least this value where it divides the scores.
inline constexpr float kAlphaMinAbs = 1e-4f;

IFAWeights make_ifa_weights(ParamSet& params, const std::string& prefix, std::int64_t channels,
                            std::int64_t heads, Rng& rng);

// Channel-wise multi-head cross attention. Per head i, with Q_i from the
// illumination features and K_i, V_i from x, each laid out as (HW, d_k):
//   A_i = softmax over key channels of (K_i^T Q_i / alpha_i)   (d_k x d_k)
//   head_i = V_i A_i
// Heads are concatenated back to (N, C, H, W) and mixed by a 1x1 conv.
// When `attention` is given it receives A as (N, heads, d_k, d_k), rows = key channel.
Var ifa_forward(ParamBinder& bind, const IFAWeights& w, const Var& x, const Var& illum, Tensor* attention = nullptr);

// x * illum.
Var elementwise_fuse(const Var& x, const Var& illum);

// Self attention on x with the value map modulated by the illumination features.
Var igmsa_forward(ParamBinder& bind, const IFAWeights& w, const Var& x, const Var& illum,
                  Tensor* attention = nullptr);

}  // namespace rxm
