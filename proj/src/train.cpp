#include "rxm/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>

#include "rxm/error.hpp"
#include "rxm/ops.hpp"

namespace rxm {

namespace {

using I64 = std::int64_t;

Tensor stack(const std::vector<Tensor>& items) {
  const Shape first = items.front().shape();
  Tensor out(Shape{static_cast<I64>(items.size()), first.c, first.h, first.w});
  I64 offset = 0;
  for (const Tensor& t : items) {
    require_same_shape(t.shape(), first, "batch stack");
    std::copy(t.data().begin(), t.data().end(), out.data().begin() + offset);
    offset += t.numel();
  }
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch must be >= 1");
  if (crop < 4 || crop % 4 != 0) throw ConfigError("crop must be a positive multiple of 4, got " + std::to_string(crop));
  if (total_steps < 1) throw ConfigError("total_steps must be >= 1");
  if (!(lr_max > 0.0) || !(lr_min >= 0.0) || lr_min > lr_max) {
    throw ConfigError("learning rates must satisfy 0 <= lr_min <= lr_max, lr_max > 0");
  }
}

void adam_step(ParamSet& params, AdamState& state, double lr) {
  const auto& all = params.all();
  for (const auto& p : all) {
    if (!p->has_grad) throw UsageError("adam_step: parameter '" + p->name + "' has no gradient");
  }
  if (state.m.size() != all.size()) {
    state.m.clear();
    state.v.clear();
    for (const auto& p : all) {
      state.m.emplace_back(p->value.shape());
      state.v.emplace_back(p->value.shape());
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  const auto b1 = static_cast<float>(state.beta1), b2 = static_cast<float>(state.beta2);
  for (std::size_t k = 0; k < all.size(); ++k) {
    Param& p = *all[k];
    float* m = state.m[k].ptr();
    float* v = state.v[k].ptr();
    const float* g = p.grad.ptr();
    float* w = p.value.ptr();
    for (I64 i = 0; i < p.value.numel(); ++i) {
      m[i] = b1 * m[i] + (1.0f - b1) * g[i];
      v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      w[i] = static_cast<float>(w[i] - lr * m_hat / (std::sqrt(v_hat) + state.eps));
    }
    p.zero_grad();
  }
}

Var l1_loss(const Var& pred, const Var& target) { return ops::mean_abs_error(pred, target); }

double cosine_lr(I64 step, I64 total, double lr_max, double lr_min) {
  if (total < 0 || step < 0 || step > total) {
    throw UsageError("cosine_lr: step " + std::to_string(step) + " outside [0, " + std::to_string(total) + "]");
  }
  if (total == 0) return lr_max;
  const double phase = std::numbers::pi * static_cast<double>(step) / static_cast<double>(total);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(phase));
}

Tensor hflip(const Tensor& image) {
  const Shape s = image.shape();
  Tensor out(s);
  for (I64 p = 0; p < s.n * s.c; ++p)
    for (I64 y = 0; y < s.h; ++y)
      for (I64 x = 0; x < s.w; ++x) out[(p * s.h + y) * s.w + x] = image[(p * s.h + y) * s.w + (s.w - 1 - x)];
  return out;
}

Tensor vflip(const Tensor& image) {
  const Shape s = image.shape();
  Tensor out(s);
  for (I64 p = 0; p < s.n * s.c; ++p)
    for (I64 y = 0; y < s.h; ++y)
      for (I64 x = 0; x < s.w; ++x) out[(p * s.h + y) * s.w + x] = image[(p * s.h + (s.h - 1 - y)) * s.w + x];
  return out;
}

Tensor rot90(const Tensor& image) {
  const Shape s = image.shape();
  Tensor out(Shape{s.n, s.c, s.w, s.h});
  // out[i][j] = in[j][W - 1 - i]
  for (I64 p = 0; p < s.n * s.c; ++p)
    for (I64 i = 0; i < s.w; ++i)
      for (I64 j = 0; j < s.h; ++j) out[(p * s.w + i) * s.h + j] = image[(p * s.h + j) * s.w + (s.w - 1 - i)];
  return out;
}

Tensor crop(const Tensor& image, I64 top, I64 left, I64 height, I64 width) {
  const Shape s = image.shape();
  if (top < 0 || height < 0 || top + height > s.h) throw DimensionError("crop: window exceeds axis H of " + s.str());
  if (left < 0 || width < 0 || left + width > s.w) throw DimensionError("crop: window exceeds axis W of " + s.str());
  Tensor out(Shape{s.n, s.c, height, width});
  for (I64 p = 0; p < s.n * s.c; ++p)
    for (I64 y = 0; y < height; ++y)
      for (I64 x = 0; x < width; ++x) out[(p * height + y) * width + x] = image[(p * s.h + top + y) * s.w + left + x];
  return out;
}

ImagePair augment(const ImagePair& pair, const TrainConfig& cfg, Rng& rng) {
  require_same_shape(pair.low.shape(), pair.gt.shape(), "augment");
  const Shape s = pair.low.shape();
  if (s.h < cfg.crop) {
    throw DimensionError("augment: axis H (" + std::to_string(s.h) + ") smaller than crop " + std::to_string(cfg.crop));
  }
  if (s.w < cfg.crop) {
    throw DimensionError("augment: axis W (" + std::to_string(s.w) + ") smaller than crop " + std::to_string(cfg.crop));
  }
  const I64 top = static_cast<I64>(rng.below(static_cast<std::uint64_t>(s.h - cfg.crop + 1)));
  const I64 left = static_cast<I64>(rng.below(static_cast<std::uint64_t>(s.w - cfg.crop + 1)));
  ImagePair out{crop(pair.low, top, left, cfg.crop, cfg.crop), crop(pair.gt, top, left, cfg.crop, cfg.crop)};
  if (cfg.hflip && rng.coin()) {
    out.low = hflip(out.low);
    out.gt = hflip(out.gt);
  }
  if (cfg.vflip && rng.coin()) {
    out.low = vflip(out.low);
    out.gt = vflip(out.gt);
  }
  if (cfg.rot90) {
    const auto turns = rng.below(4);
    for (std::uint64_t k = 0; k < turns; ++k) {
      out.low = rot90(out.low);
      out.gt = rot90(out.gt);
    }
  }
  return out;
}

std::vector<TrainStep> train_loop(std::span<const ImagePair> dataset, ModelWeights& weights, const TrainConfig& cfg,
                                  const std::string& trace_path, ScanKernel kernel) {
  cfg.validate();
  if (dataset.empty()) throw UsageError("train_loop: empty dataset");
  std::ofstream trace_file;
  if (!trace_path.empty()) {
    trace_file.open(trace_path, std::ios::trunc);
    if (!trace_file) throw IoError("cannot write loss trace '" + trace_path + "'");
    trace_file << "step,lr,l1\n";
  }

  Rng rng(cfg.seed);
  AdamState adam;
  weights.params().zero_grad();
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();
  auto next_index = [&] {
    if (cursor == order.size()) {
      // Fisher-Yates reshuffle at each epoch boundary.
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
      cursor = 0;
    }
    return order[cursor++];
  };

  std::vector<TrainStep> history;
  history.reserve(static_cast<std::size_t>(cfg.total_steps));
  const I64 span = std::max<I64>(cfg.total_steps - 1, 1);
  for (I64 step = 0; step < cfg.total_steps; ++step) {
    std::vector<Tensor> lows, gts;
    for (I64 b = 0; b < cfg.batch_size; ++b) {
      ImagePair sample = augment(dataset[next_index()], cfg, rng);
      lows.push_back(std::move(sample.low));
      gts.push_back(std::move(sample.gt));
    }
    const double lr = cosine_lr(std::min(step, span), span, cfg.lr_max, cfg.lr_min);

    Tape tape;
    ParamBinder bind(&tape);
    const Var pred = model_forward(bind, weights, tape.input(stack(lows)), kernel);
    const Var loss = l1_loss(pred, Var::constant(stack(gts)));
    tape.backward(loss, Tensor(loss.shape(), 1.0f));
    adam_step(weights.params(), adam, lr);

    const TrainStep record{step, lr, static_cast<double>(loss.value()[0])};
    if (!std::isfinite(record.l1)) throw NumericError("training loss became non-finite at step " + std::to_string(step));
    history.push_back(record);
    if (trace_file) {
      char line[96];
      std::snprintf(line, sizeof line, "%lld,%.9g,%.9g\n", static_cast<long long>(step), lr, record.l1);
      trace_file << line << std::flush;
    }
  }
  return history;
}

}  // namespace rxm
