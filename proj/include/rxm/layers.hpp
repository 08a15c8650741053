#pragma once

#include <cstdint>
#include <string>

#include "rxm/autodiff.hpp"
#include "rxm/ops.hpp"

namespace rxm {

struct ConvParams {
  Param* weight = nullptr;
  Param* bias = nullptr;  // may be null
};

struct LayerNormParams {
  Param* gamma = nullptr;
  Param* beta = nullptr;
};

// Registers "<name>.w" (Cout, Cin/groups, k, k) and optionally "<name>.b",
// both uniform in +-sqrt(1 / fan_in).
ConvParams make_conv(ParamSet& params, const std::string& name, std::int64_t cout, std::int64_t cin_per_group,
                     std::int64_t kernel, bool with_bias, Rng& rng);
// Transposed conv weight layout (Cin, Cout, k, k); fan_in = Cin * k * k.
ConvParams make_conv_transpose(ParamSet& params, const std::string& name, std::int64_t cin, std::int64_t cout,
                               std::int64_t kernel, Rng& rng);
// gamma = 1, beta = 0.
LayerNormParams make_layer_norm(ParamSet& params, const std::string& name, std::int64_t channels);

Var conv(ParamBinder& bind, const ConvParams& p, const Var& x, ops::Conv2dOptions options = {});
Var conv_transpose(ParamBinder& bind, const ConvParams& p, const Var& x, ops::ConvTransposeOptions options = {});
Var layer_norm(ParamBinder& bind, const LayerNormParams& p, const Var& x);

}  // namespace rxm
