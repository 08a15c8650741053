#include "rxm/model.hpp"

#include "rxm/error.hpp"
#include "rxm/ops.hpp"

namespace rxm {

namespace {

using I64 = std::int64_t;

IFSSMWeights make_ifssm(ParamSet& params, const std::string& prefix, const ModelConfig& cfg, int level, Rng& rng) {
  IFSSMWeights w;
  const I64 channels = cfg.channels_at(level);
  w.channels = channels;
  w.ln1 = make_layer_norm(params, prefix + ".ln1", channels);
  switch (cfg.fusion) {
    case FusionMode::ifa:
      w.attention = make_ifa_weights(params, prefix + ".ifa", channels, cfg.heads_at(level), rng);
      break;
    case FusionMode::igmsa:
      w.attention = make_ifa_weights(params, prefix + ".igmsa", channels, cfg.heads_at(level), rng);
      break;
    case FusionMode::elementwise:
      break;
  }
  if (cfg.ss2d_enabled) {
    // The branch pre-norm lives under the ss2d subtree so that disabling the
    // scan removes one contiguous group of parameters.
    w.ln2 = make_layer_norm(params, prefix + ".ss2d.ln_in", channels);
    w.ss2d = make_ss2d_weights(params, prefix + ".ss2d", channels, cfg.d_state_at(level), rng);
  }
  w.ln3 = make_layer_norm(params, prefix + ".ln3", channels);
  w.ffn.expand = make_conv(params, prefix + ".ffn.fc1", 4 * channels, channels, 1, true, rng);
  w.ffn.project = make_conv(params, prefix + ".ffn.fc2", channels, 4 * channels, 1, true, rng);
  return w;
}

void require_multiple_of_4(const Shape& s, const char* what) {
  if (s.h % 4 != 0) {
    throw DimensionError(std::string(what) + ": axis H (" + std::to_string(s.h) + ") must be a multiple of 4");
  }
  if (s.w % 4 != 0) {
    throw DimensionError(std::string(what) + ": axis W (" + std::to_string(s.w) + ") must be a multiple of 4");
  }
}

constexpr ops::Conv2dOptions kDown{.stride = 2, .padding = 1, .groups = 1};
constexpr ops::Conv2dOptions kSame3{.stride = 1, .padding = 1, .groups = 1};

}  // namespace

IFSSMWeights make_ifssm_weights(ParamSet& params, const std::string& prefix, const ModelConfig& config, int level,
                               Rng& rng) {
  config.validate();
  return make_ifssm(params, prefix, config, level, rng);
}

void ModelConfig::validate() const {
  if (levels != 2) throw ConfigError("levels must be 2, got " + std::to_string(levels));
  if (n_feat < 1) throw ConfigError("n_feat must be positive");
  if (heads_base_width < 1) throw ConfigError("heads_base_width must be positive");
  if (n_feat % heads_base_width != 0) {
    throw ConfigError("n_feat (" + std::to_string(n_feat) + ") must be divisible by heads_base_width (" +
                      std::to_string(heads_base_width) + ")");
  }
  if (d_state_base < 1) throw ConfigError("d_state_base must be positive");
}

Ablation parse_ablation(std::string_view name) {
  if (name == "fixedhs") return Ablation::fixedhs;
  if (name == "nofb") return Ablation::nofb;
  if (name == "noss2d") return Ablation::noss2d;
  if (name == "igmsa") return Ablation::igmsa;
  throw ConfigError("unknown ablation variant '" + std::string(name) + "' (expected fixedhs, nofb, noss2d, igmsa)");
}

ModelConfig apply_ablation(ModelConfig config, Ablation ablation) {
  switch (ablation) {
    case Ablation::fixedhs: config.d_state_fixed = true; break;
    case Ablation::nofb: config.fusion = FusionMode::elementwise; break;
    case Ablation::noss2d: config.ss2d_enabled = false; break;
    case Ablation::igmsa: config.fusion = FusionMode::igmsa; break;
  }
  return config;
}

ModelWeights ModelWeights::create(const ModelConfig& config) {
  config.validate();
  ModelWeights m;
  m.config_ = config;
  Rng rng(config.seed);
  ParamSet& ps = m.params_;
  const I64 nf = config.n_feat;
  m.ie_ = make_ie_weights(ps, "ie", nf, rng);

  IFVMWeights& v = m.ifvm_;
  v.embed = make_conv(ps, "ifvm.embed", nf, 3, 3, true, rng);
  for (int l = 0; l < 2; ++l) {
    v.pyramid[l] = make_conv(ps, "ifvm.pyr" + std::to_string(l + 1), config.channels_at(l + 1),
                             config.channels_at(l), 4, true, rng);
  }
  for (int l = 0; l < 2; ++l) {
    const std::string prefix = "ifvm.enc" + std::to_string(l);
    v.encoder[l].block = make_ifssm(ps, prefix, config, l, rng);
    v.encoder[l].down = make_conv(ps, prefix + ".down", config.channels_at(l + 1), config.channels_at(l), 4, true, rng);
  }
  v.bottleneck = make_ifssm(ps, "ifvm.mid", config, 2, rng);
  for (int l = 1; l >= 0; --l) {
    const std::string prefix = "ifvm.dec" + std::to_string(l);
    v.decoder[l].up = make_conv_transpose(ps, prefix + ".up", config.channels_at(l + 1), config.channels_at(l), 2, rng);
    v.decoder[l].fuse = make_conv(ps, prefix + ".fuse", config.channels_at(l), 2 * config.channels_at(l), 1, true, rng);
    v.decoder[l].block = make_ifssm(ps, prefix, config, l, rng);
  }
  v.out = make_conv(ps, "ifvm.out", 3, nf, 3, true, rng);
  return m;
}

std::vector<I64> d_state_trace(const ModelWeights& weights) {
  std::vector<I64> trace;
  auto push = [&](const IFSSMWeights& block) {
    if (block.ss2d) trace.push_back(block.ss2d->directions[0].d_state);
  };
  push(weights.ifvm().encoder[0].block);
  push(weights.ifvm().encoder[1].block);
  push(weights.ifvm().bottleneck);
  return trace;
}

Var ifssm_forward(ParamBinder& bind, const IFSSMWeights& w, const ModelConfig& config, const Var& x,
                  const Var& illum, ScanKernel kernel) {
  require_same_shape(x.shape(), illum.shape(), "ifssm_forward");
  const Var normed = layer_norm(bind, w.ln1, x);
  Var fused;
  switch (config.fusion) {
    case FusionMode::ifa: fused = ifa_forward(bind, *w.attention, normed, illum); break;
    case FusionMode::igmsa: fused = igmsa_forward(bind, *w.attention, normed, illum); break;
    case FusionMode::elementwise: fused = elementwise_fuse(normed, illum); break;
  }
  Var y = ops::add(x, fused);
  if (w.ss2d) y = ops::add(y, ss2d_block(bind, *w.ss2d, layer_norm(bind, *w.ln2, y), kernel));
  const Var hidden = ops::gelu(conv(bind, w.ffn.expand, layer_norm(bind, w.ln3, y)));
  return ops::add(y, conv(bind, w.ffn.project, hidden));
}

std::array<Var, 3> build_flu_pyramid(ParamBinder& bind, const IFVMWeights& w, const Var& features) {
  require_multiple_of_4(features.shape(), "build_flu_pyramid");
  std::array<Var, 3> levels;
  levels[0] = features;
  levels[1] = conv(bind, w.pyramid[0], levels[0], kDown);
  levels[2] = conv(bind, w.pyramid[1], levels[1], kDown);
  return levels;
}

Var ifvm_forward(ParamBinder& bind, const ModelWeights& weights, const Var& lit, const Var& features,
                 ScanKernel kernel, ForwardTrace* trace) {
  const ModelConfig& cfg = weights.config();
  const IFVMWeights& w = weights.ifvm();
  require_multiple_of_4(lit.shape(), "ifvm_forward");
  if (lit.shape().c != 3) throw DimensionError("ifvm_forward: lit image axis C must be 3");
  const auto pyramid = build_flu_pyramid(bind, w, features);

  auto block = [&](const IFSSMWeights& b, const Var& x, int level) {
    if (trace) trace->block_inputs.push_back(x.shape());
    return ifssm_forward(bind, b, cfg, x, pyramid[level], kernel);
  };

  Var h = conv(bind, w.embed, lit, kSame3);
  std::array<Var, 2> skips;
  for (int l = 0; l < 2; ++l) {
    skips[l] = block(w.encoder[l].block, h, l);
    h = conv(bind, w.encoder[l].down, skips[l], kDown);
  }
  if (trace) trace->bottleneck_channels = h.shape().c;
  h = block(w.bottleneck, h, 2);
  for (int l = 1; l >= 0; --l) {
    const DecoderLevel& d = w.decoder[l];
    const std::array<Var, 2> joined{conv_transpose(bind, d.up, h, {.stride = 2, .padding = 0}), skips[l]};
    h = conv(bind, d.fuse, ops::concat_channels(joined));
    h = block(d.block, h, l);
  }
  return ops::add(conv(bind, w.out, h, kSame3), lit);
}

Var model_forward(ParamBinder& bind, const ModelWeights& weights, const Var& image, ScanKernel kernel,
                  ForwardTrace* trace) {
  require_multiple_of_4(image.shape(), "model_forward");
  const IEOutput ie = ie_forward(bind, weights.ie(), image, illumination_prior(image));
  return ifvm_forward(bind, weights, ie.lit, ie.features, kernel, trace);
}

void make_identity(ModelWeights& weights) {
  for (const auto& p : weights.params().all()) p->value.fill(0.0f);
  weights.params().get("ie.out.b").value.fill(1.0f);
}

Tensor enhance(const ModelWeights& weights, const Tensor& image, ScanKernel kernel) {
  ParamBinder bind;
  return model_forward(bind, weights, Var::constant(image), kernel).value();
}

}  // namespace rxm
