#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rxm/autodiff.hpp"
#include "rxm/layers.hpp"
#include "rxm/scan_kernels.hpp"

namespace rxm {

enum class ScanDirection { row_fwd, row_bwd, col_fwd, col_bwd };
inline constexpr std::array<ScanDirection, 4> kScanDirections = {ScanDirection::row_fwd, ScanDirection::row_bwd,
                                                                 ScanDirection::col_fwd, ScanDirection::col_bwd};

// Flat spatial index visited at each step of the given traversal of an H x W grid.
std::vector<std::int64_t> scan_order(ScanDirection direction, std::int64_t height, std::int64_t width);

// (N, C, H, W) -> four (N, C, L, 1) sequences, L = H * W, in kScanDirections order.
std::array<Var, 4> scan_expand(const Var& x);
// Un-permutes each (N, C, L, 1) sequence back to (N, C, H, W) and sums the four maps.
Var scan_merge(std::span<const Var, 4> sequences, std::int64_t height, std::int64_t width);

enum class ScanKernel { sequential, parallel };

// Differentiable selective scan.
//   x, delta: (N, D, L, 1)   a_log: (D, S, 1, 1), A = -exp(a_log)
//   b, c:     (N, S, L, 1)   d_skip: (1, D, 1, 1)
// Returns y: (N, D, L, 1). The backward pass replays the recurrence per lane.
Var selective_scan(const Var& x, const Var& delta, const Var& a_log, const Var& b, const Var& c, const Var& d_skip,
                   ScanKernel kernel);

struct S6Params {
  Param* a_log = nullptr;   // (d_inner, d_state, 1, 1)
  Param* d_skip = nullptr;  // (1, d_inner, 1, 1)
  ConvParams bc;            // 1x1, d_inner -> 2 * d_state, no bias
  ConvParams dt;            // 1x1, d_inner -> d_inner, with bias
  std::int64_t d_state = 0;
};

struct SS2DWeights {
  ConvParams in;   // 1x1, C -> 2 * d_inner (signal, gate), no bias
  ConvParams dw;   // 3x3 depthwise on d_inner, padding 1
  std::array<S6Params, 4> directions;
  LayerNormParams norm;
  ConvParams out;  // 1x1, d_inner -> C
  std::int64_t channels = 0;
  std::int64_t d_inner = 0;
};

inline constexpr std::int64_t kSS2DExpansion = 2;

S6Params make_s6_params(ParamSet& params, const std::string& prefix, std::int64_t d_inner, std::int64_t d_state,
                        Rng& rng);
SS2DWeights make_ss2d_weights(ParamSet& params, const std::string& prefix, std::int64_t channels,
                              std::int64_t d_state, Rng& rng);

// seq (N, d_inner, L, 1): delta = softplus(dt(seq)), (B, C) = split(bc(seq)), then the scan.
Var s6_forward(ParamBinder& bind, const S6Params& p, const Var& seq, ScanKernel kernel);
inline Var s6_sequential(ParamBinder& bind, const S6Params& p, const Var& seq) {
  return s6_forward(bind, p, seq, ScanKernel::sequential);
}
inline Var s6_parallel(ParamBinder& bind, const S6Params& p, const Var& seq) {
  return s6_forward(bind, p, seq, ScanKernel::parallel);
}

// in -> (signal, gate); signal -> dw3x3 -> silu -> expand -> S6 x4 -> merge -> LN -> * silu(gate) -> out.
Var ss2d_block(ParamBinder& bind, const SS2DWeights& w, const Var& x, ScanKernel kernel = ScanKernel::parallel);

struct ScanBenchRow {
  std::string kernel;
  std::int64_t length = 0;
  std::int64_t d_state = 0;
  int threads = 1;
  double ns_per_token = 0.0;
  double max_abs_diff = 0.0;  // against the sequential kernel
};

// Times both kernels on `trials` seeded random problems (batch 1, `channels` lanes)
// and records the worst deviation of the parallel kernel from the sequential one.
std::vector<ScanBenchRow> bench_scan(std::int64_t length, std::int64_t d_state, std::int64_t channels, int trials,
                                     int threads, std::uint64_t seed);

}  // namespace rxm
