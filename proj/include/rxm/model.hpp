#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rxm/attention.hpp"
#include "rxm/autodiff.hpp"
#include "rxm/illum.hpp"
#include "rxm/layers.hpp"
#include "rxm/ss2d.hpp"

namespace rxm {

struct ModelConfig {
  std::int64_t n_feat = 40;
  int levels = 2;
  std::int64_t d_state_base = 16;
  bool d_state_fixed = false;
  FusionMode fusion = FusionMode::ifa;
  bool ss2d_enabled = true;
  std::int64_t heads_base_width = 40;
  std::uint64_t seed = 0;

  // Throws ConfigError.
  void validate() const;

  // Level 0 is full resolution; level `levels` is the bottleneck.
  std::int64_t channels_at(int level) const { return n_feat << level; }
  std::int64_t d_state_at(int level) const { return d_state_fixed ? d_state_base : d_state_base << level; }
  std::int64_t heads_at(int level) const { return channels_at(level) / heads_base_width; }

  bool operator==(const ModelConfig&) const = default;
};

// Ablation variants, each a single ModelConfig switch.
enum class Ablation { fixedhs, nofb, noss2d, igmsa };
Ablation parse_ablation(std::string_view name);
ModelConfig apply_ablation(ModelConfig config, Ablation ablation);

struct FFNWeights {
  ConvParams expand;   // 1x1, C -> 4C
  ConvParams project;  // 1x1, 4C -> C
};

// Pre-norm residual block: fusion, selective scan, feed-forward.
struct IFSSMWeights {
  LayerNormParams ln1;
  std::optional<IFAWeights> attention;  // absent for elementwise fusion
  std::optional<LayerNormParams> ln2;   // present with ss2d
  std::optional<SS2DWeights> ss2d;
  LayerNormParams ln3;
  FFNWeights ffn;
  std::int64_t channels = 0;
};

struct EncoderLevel {
  IFSSMWeights block;
  ConvParams down;  // 4x4 stride 2, C -> 2C
};

struct DecoderLevel {
  ConvParams up;    // transposed 2x2 stride 2, 2C -> C
  ConvParams fuse;  // 1x1 over concat(up, skip), 2C -> C
  IFSSMWeights block;
};

struct IFVMWeights {
  ConvParams embed;  // 3x3 stride 1, 3 -> n_feat
  std::array<ConvParams, 2> pyramid;  // 4x4 stride 2 convs, n_feat -> 2 n_feat -> 4 n_feat
  std::array<EncoderLevel, 2> encoder;
  IFSSMWeights bottleneck;
  std::array<DecoderLevel, 2> decoder;  // indexed by level
  ConvParams out;    // 3x3 stride 1, n_feat -> 3
};

class ModelWeights {
 public:
  // Seeded from config.seed; kernels and biases uniform in +-sqrt(1 / fan_in).
  static ModelWeights create(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  const IEWeights& ie() const { return ie_; }
  const IFVMWeights& ifvm() const { return ifvm_; }

 private:
  ModelConfig config_;
  ParamSet params_;
  IEWeights ie_;
  IFVMWeights ifvm_;
};

IFSSMWeights make_ifssm_weights(ParamSet& params, const std::string& prefix, const ModelConfig& config, int level,
                               Rng& rng);

// Zeroes every parameter and sets the illumination bias to 1, so the model maps
// any image to itself.
void make_identity(ModelWeights& weights);

// Per-level d_state of the selective scans actually built (levels 0..levels).
std::vector<std::int64_t> d_state_trace(const ModelWeights& weights);

// Shapes observed during a forward pass.
struct ForwardTrace {
  std::vector<Shape> block_inputs;  // one per IFSSM, execution order
  std::int64_t bottleneck_channels = 0;
};

Var ifssm_forward(ParamBinder& bind, const IFSSMWeights& w, const ModelConfig& config, const Var& x,
                  const Var& illum, ScanKernel kernel = ScanKernel::parallel);

// [F_lu, down(F_lu), down(down(F_lu))] at (C, H, W), (2C, H/2, W/2), (4C, H/4, W/4).
std::array<Var, 3> build_flu_pyramid(ParamBinder& bind, const IFVMWeights& w, const Var& features);

Var ifvm_forward(ParamBinder& bind, const ModelWeights& weights, const Var& lit, const Var& features,
                 ScanKernel kernel = ScanKernel::parallel, ForwardTrace* trace = nullptr);

// image -> prior -> estimator -> restorer. Image extents must be multiples of 4.
Var model_forward(ParamBinder& bind, const ModelWeights& weights, const Var& image,
                  ScanKernel kernel = ScanKernel::parallel, ForwardTrace* trace = nullptr);

// Inference without a tape.
Tensor enhance(const ModelWeights& weights, const Tensor& image, ScanKernel kernel = ScanKernel::parallel);

}  // namespace rxm
