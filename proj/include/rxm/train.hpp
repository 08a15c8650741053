#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rxm/autodiff.hpp"
#include "rxm/model.hpp"

namespace rxm {

struct TrainConfig {
  double lr_max = 2e-4;
  double lr_min = 1e-6;
  std::int64_t total_steps = 1000;
  std::int64_t batch_size = 8;
  std::int64_t crop = 128;
  bool hflip = true;
  bool vflip = true;
  bool rot90 = true;
  std::uint64_t seed = 0;

  // Throws ConfigError.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

// Bias-corrected Adam over every parameter, then zeroes the gradients.
// Throws UsageError if a parameter received no gradient.
void adam_step(ParamSet& params, AdamState& state, double lr);

// mean(|pred - target|) as a (1, 1, 1, 1) value.
Var l1_loss(const Var& pred, const Var& target);

// lr_min + (lr_max - lr_min) (1 + cos(pi step / total)) / 2, for 0 <= step <= total.
double cosine_lr(std::int64_t step, std::int64_t total, double lr_max, double lr_min);
inline double cosine_lr(std::int64_t step, const TrainConfig& cfg) {
  return cosine_lr(step, cfg.total_steps, cfg.lr_max, cfg.lr_min);
}

struct ImagePair {
  Tensor low;  // (1, 3, H, W)
  Tensor gt;
};

Tensor hflip(const Tensor& image);
Tensor vflip(const Tensor& image);
// Quarter turn counterclockwise: (N, C, H, W) -> (N, C, W, H).
Tensor rot90(const Tensor& image);
Tensor crop(const Tensor& image, std::int64_t top, std::int64_t left, std::int64_t height, std::int64_t width);

// Shared random crop, then the same flips / quarter turns on both images.
ImagePair augment(const ImagePair& pair, const TrainConfig& cfg, Rng& rng);

struct TrainStep {
  std::int64_t step = 0;
  double lr = 0.0;
  double l1 = 0.0;
};

// Runs cfg.total_steps of sample -> augment -> forward -> L1 -> backward -> Adam.
// Step i of T uses cosine_lr(i, T - 1) so the trace starts at lr_max and ends
// at lr_min. When trace_path is non-empty a `step,lr,l1` CSV is written there,
// one row appended per step.
std::vector<TrainStep> train_loop(std::span<const ImagePair> dataset, ModelWeights& weights, const TrainConfig& cfg,
                                  const std::string& trace_path = {}, ScanKernel kernel = ScanKernel::parallel);

}  // namespace rxm
