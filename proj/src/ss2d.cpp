#include "rxm/ss2d.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "rxm/error.hpp"
#include "rxm/ops.hpp"
#include "rxm/parallel.hpp"

namespace rxm {

namespace {

using I64 = std::int64_t;

bool multi_lane() { return parallel::num_threads() > 1; }

// (N, S, L) -> (N, L, S)
std::vector<float> to_token_major(const Tensor& t) {
  const Shape s = t.shape();
  const I64 S = s.c, L = s.h;
  std::vector<float> out(static_cast<std::size_t>(t.numel()));
  for (I64 n = 0; n < s.n; ++n)
    for (I64 k = 0; k < S; ++k)
      for (I64 l = 0; l < L; ++l) out[(n * L + l) * S + k] = t[(n * S + k) * L + l];
  return out;
}

// Number of channel blocks used to split the backward reduction over d_inner.
// Fixed, so the summation order never depends on the thread count.
constexpr I64 kGradBlocks = 8;

}  // namespace

std::vector<I64> scan_order(ScanDirection direction, I64 height, I64 width) {
  std::vector<I64> order;
  order.reserve(static_cast<std::size_t>(height * width));
  const bool by_column = direction == ScanDirection::col_fwd || direction == ScanDirection::col_bwd;
  if (by_column) {
    for (I64 w = 0; w < width; ++w)
      for (I64 h = 0; h < height; ++h) order.push_back(h * width + w);
  } else {
    for (I64 i = 0; i < height * width; ++i) order.push_back(i);
  }
  if (direction == ScanDirection::row_bwd || direction == ScanDirection::col_bwd) {
    std::reverse(order.begin(), order.end());
  }
  return order;
}

std::array<Var, 4> scan_expand(const Var& x) {
  const Shape s = x.shape();
  std::array<Var, 4> out;
  for (std::size_t i = 0; i < kScanDirections.size(); ++i) {
    auto order = std::make_shared<const std::vector<I64>>(scan_order(kScanDirections[i], s.h, s.w));
    out[i] = ops::gather_spatial(x, std::move(order), s.h * s.w, 1);
  }
  return out;
}

Var scan_merge(std::span<const Var, 4> sequences, I64 height, I64 width) {
  Var total;
  for (std::size_t i = 0; i < kScanDirections.size(); ++i) {
    const Shape s = sequences[i].shape();
    if (s.h * s.w != height * width) {
      throw DimensionError("scan_merge: sequence " + std::to_string(i) + " has length " + std::to_string(s.h * s.w) +
                           ", expected H*W = " + std::to_string(height * width));
    }
    const auto order = scan_order(kScanDirections[i], height, width);
    auto inverse = std::make_shared<std::vector<I64>>(order.size());
    for (std::size_t step = 0; step < order.size(); ++step) (*inverse)[order[step]] = static_cast<I64>(step);
    Var spatial = ops::gather_spatial(sequences[i], std::move(inverse), height, width);
    total = total.valid() ? ops::add(total, spatial) : spatial;
  }
  return total;
}

Var selective_scan(const Var& x, const Var& delta, const Var& a_log, const Var& b, const Var& c, const Var& d_skip,
                   ScanKernel kernel) {
  const Shape xs = x.shape();
  const I64 N = xs.n, D = xs.c, L = xs.h * xs.w;
  const I64 S = a_log.shape().h == 1 && a_log.shape().w == 1 ? a_log.shape().c : -1;
  if (a_log.shape().n != D || S < 1) {
    throw DimensionError("selective_scan: a_log must be (D, S, 1, 1) with D = " + std::to_string(D) + ", got " +
                         a_log.shape().str());
  }
  require_same_shape(delta.shape(), xs, "selective_scan delta");
  const Shape bc_shape{N, S, xs.h, xs.w};
  require_same_shape(b.shape(), bc_shape, "selective_scan B");
  require_same_shape(c.shape(), bc_shape, "selective_scan C");
  require_same_shape(d_skip.shape(), Shape{1, D, 1, 1}, "selective_scan d_skip");

  std::vector<float> a(static_cast<std::size_t>(D * S));
  for (I64 i = 0; i < D * S; ++i) a[i] = -std::exp(a_log.value()[i]);
  auto bt = to_token_major(b.value().reshaped(Shape{N, S, L, 1}));
  auto ct = to_token_major(c.value().reshaped(Shape{N, S, L, 1}));

  scan::ScanProblem problem{N, D, L, S, x.value().ptr(), delta.value().ptr(), a.data(), bt.data(), ct.data(),
                            d_skip.value().ptr()};
  Tensor y(xs);
  if (kernel == ScanKernel::sequential) {
    scan::scan_sequential(problem, y.ptr());
  } else {
    scan::scan_parallel(problem, y.ptr());
  }

  return derive(std::move(y), {&x, &delta, &a_log, &b, &c, &d_skip},
                [=, a = std::move(a), bt = std::move(bt), ct = std::move(ct)](const Tensor& gy) {
                  const float* X = x.value().ptr();
                  const float* DT = delta.value().ptr();
                  const float* DS = d_skip.value().ptr();
                  const float* GY = gy.ptr();
                  Tensor* gx = x.grad_sink();
                  Tensor* gdelta = delta.grad_sink();
                  Tensor* galog = a_log.grad_sink();
                  Tensor* gskip = d_skip.grad_sink();
                  Tensor* gb = b.grad_sink();
                  Tensor* gc = c.grad_sink();
                  const bool need_bc = gb || gc;
                  const I64 blocks = std::min(kGradBlocks, D);
                  std::vector<std::vector<float>> gb_parts(static_cast<std::size_t>(blocks));
                  std::vector<std::vector<float>> gc_parts(static_cast<std::size_t>(blocks));
                  std::vector<float> ga(static_cast<std::size_t>(D * S), 0.0f);

#pragma omp parallel for schedule(static) if (multi_lane())
                  for (I64 blk = 0; blk < blocks; ++blk) {
                    const I64 d0 = blk * D / blocks, d1 = (blk + 1) * D / blocks;
                    std::vector<float>& gbt = gb_parts[blk];
                    std::vector<float>& gct = gc_parts[blk];
                    if (need_bc) {
                      gbt.assign(static_cast<std::size_t>(N * L * S), 0.0f);
                      gct.assign(static_cast<std::size_t>(N * L * S), 0.0f);
                    }
                    std::vector<float> hbuf(static_cast<std::size_t>(L * S));
                    std::vector<float> dbuf(static_cast<std::size_t>(L * S));
                    std::vector<float> carry(static_cast<std::size_t>(S));
                    for (I64 d = d0; d < d1; ++d) {
                      const float* A = a.data() + d * S;
                      double gskip_acc = 0.0;
                      for (I64 n = 0; n < N; ++n) {
                        const I64 lane = n * D + d;
                        const float* xl = X + lane * L;
                        const float* dl = DT + lane * L;
                        const float* gyl = GY + lane * L;
                        const float* B = bt.data() + n * L * S;
                        const float* C = ct.data() + n * L * S;
                        // Replay the forward states.
                        std::fill(carry.begin(), carry.end(), 0.0f);
                        for (I64 t = 0; t < L; ++t) {
                          const float dt = dl[t], xt = xl[t];
                          float* ht = hbuf.data() + t * S;
                          float* at = dbuf.data() + t * S;
                          for (I64 s = 0; s < S; ++s) {
                            at[s] = scan::decay(dt, A[s]);
                            carry[s] = at[s] * carry[s] + scan::drive(dt, B[t * S + s], xt);
                            ht[s] = carry[s];
                          }
                        }
                        std::fill(carry.begin(), carry.end(), 0.0f);
                        for (I64 t = L - 1; t >= 0; --t) {
                          const float g = gyl[t], xt = xl[t], dt = dl[t];
                          float gx_acc = g * DS[d];
                          float gdt_acc = 0.0f;
                          gskip_acc += static_cast<double>(g) * xt;
                          for (I64 s = 0; s < S; ++s) {
                            const float gh = carry[s] + g * C[t * S + s];
                            const float h_prev = t > 0 ? hbuf[(t - 1) * S + s] : 0.0f;
                            const float decay = dbuf[t * S + s];
                            const float g_decay = gh * h_prev;
                            if (need_bc) {
                              gct[(n * L + t) * S + s] += g * hbuf[t * S + s];
                              gbt[(n * L + t) * S + s] += gh * dt * xt;
                            }
                            gdt_acc += g_decay * A[s] * decay + gh * B[t * S + s] * xt;
                            ga[d * S + s] += g_decay * dt * decay;
                            gx_acc += gh * dt * B[t * S + s];
                            carry[s] = gh * decay;
                          }
                          if (gx) (*gx)[lane * L + t] += gx_acc;
                          if (gdelta) (*gdelta)[lane * L + t] += gdt_acc;
                        }
                      }
                      if (gskip) (*gskip)[d] += static_cast<float>(gskip_acc);
                    }
                  }

                  if (galog) {
                    for (I64 i = 0; i < D * S; ++i) (*galog)[i] += ga[i] * a[i];
                  }
                  if (need_bc) {
                    std::vector<float> gbt(static_cast<std::size_t>(N * L * S), 0.0f);
                    std::vector<float> gct(static_cast<std::size_t>(N * L * S), 0.0f);
                    for (I64 blk = 0; blk < blocks; ++blk) {
                      for (std::size_t i = 0; i < gbt.size(); ++i) {
                        gbt[i] += gb_parts[blk][i];
                        gct[i] += gc_parts[blk][i];
                      }
                    }
                    for (I64 n = 0; n < N; ++n)
                      for (I64 s = 0; s < S; ++s)
                        for (I64 t = 0; t < L; ++t) {
                          if (gb) (*gb)[(n * S + s) * L + t] += gbt[(n * L + t) * S + s];
                          if (gc) (*gc)[(n * S + s) * L + t] += gct[(n * L + t) * S + s];
                        }
                  }
                });
}

S6Params make_s6_params(ParamSet& params, const std::string& prefix, I64 d_inner, I64 d_state, Rng& rng) {
  S6Params p;
  p.d_state = d_state;
  Tensor a_log(Shape{d_inner, d_state, 1, 1});
  for (I64 d = 0; d < d_inner; ++d)
    for (I64 s = 0; s < d_state; ++s) a_log[d * d_state + s] = static_cast<float>(std::log(static_cast<double>(s + 1)));
  p.a_log = &params.add(prefix + ".a_log", ParamKind::other, std::move(a_log));
  p.d_skip = &params.add(prefix + ".d_skip", ParamKind::other, Tensor(Shape{1, d_inner, 1, 1}, 1.0f));
  p.bc = make_conv(params, prefix + ".bc", 2 * d_state, d_inner, 1, false, rng);
  p.dt = make_conv(params, prefix + ".dt", d_inner, d_inner, 1, false, rng);
  // Bias = softplus^-1(dt) with dt uniform in [1e-3, 1e-1].
  Tensor bias(Shape{1, d_inner, 1, 1});
  for (I64 d = 0; d < d_inner; ++d) {
    const double dt = rng.uniform(1e-3, 1e-1);
    bias[d] = static_cast<float>(dt + std::log(-std::expm1(-dt)));
  }
  p.dt.bias = &params.add(prefix + ".dt.b", ParamKind::bias, std::move(bias));
  return p;
}

SS2DWeights make_ss2d_weights(ParamSet& params, const std::string& prefix, I64 channels, I64 d_state, Rng& rng) {
  SS2DWeights w;
  w.channels = channels;
  w.d_inner = kSS2DExpansion * channels;
  w.in = make_conv(params, prefix + ".in", 2 * w.d_inner, channels, 1, false, rng);
  w.dw = make_conv(params, prefix + ".dw", w.d_inner, 1, 3, true, rng);
  for (std::size_t i = 0; i < w.directions.size(); ++i) {
    w.directions[i] = make_s6_params(params, prefix + ".dir" + std::to_string(i), w.d_inner, d_state, rng);
  }
  w.norm = make_layer_norm(params, prefix + ".norm", w.d_inner);
  w.out = make_conv(params, prefix + ".out", channels, w.d_inner, 1, true, rng);
  return w;
}

Var s6_forward(ParamBinder& bind, const S6Params& p, const Var& seq, ScanKernel kernel) {
  const Var delta = ops::softplus(conv(bind, p.dt, seq));
  const Var bc = conv(bind, p.bc, seq);
  const Var b = ops::slice_channels(bc, 0, p.d_state);
  const Var c = ops::slice_channels(bc, p.d_state, p.d_state);
  return selective_scan(seq, delta, bind(*p.a_log), b, c, bind(*p.d_skip), kernel);
}

Var ss2d_block(ParamBinder& bind, const SS2DWeights& w, const Var& x, ScanKernel kernel) {
  const Shape s = x.shape();
  if (s.c != w.channels) {
    throw DimensionError("ss2d_block: input axis C is " + std::to_string(s.c) + ", block expects " +
                         std::to_string(w.channels));
  }
  const Var projected = conv(bind, w.in, x);
  const Var signal = ops::slice_channels(projected, 0, w.d_inner);
  const Var gate = ops::slice_channels(projected, w.d_inner, w.d_inner);
  const Var local = ops::silu(conv(bind, w.dw, signal, {.stride = 1, .padding = 1, .groups = static_cast<int>(w.d_inner)}));
  const auto sequences = scan_expand(local);
  std::array<Var, 4> outputs;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    outputs[i] = s6_forward(bind, w.directions[i], sequences[i], kernel);
  }
  const Var merged = scan_merge(outputs, s.h, s.w);
  const Var gated = ops::mul(layer_norm(bind, w.norm, merged), ops::silu(gate));
  return conv(bind, w.out, gated);
}

std::vector<ScanBenchRow> bench_scan(I64 length, I64 d_state, I64 channels, int trials, int threads,
                                     std::uint64_t seed) {
  if (length < 1 || d_state < 1 || channels < 1 || trials < 1) {
    throw UsageError("bench_scan: length, d_state, channels and trials must be positive");
  }
  const int previous = parallel::num_threads();
  parallel::set_num_threads(threads);
  Rng rng(seed);
  double seq_ns = 0.0, par_ns = 0.0, worst = 0.0;
  for (int trial = 0; trial < trials; ++trial) {
    const I64 lanes = channels;
    std::vector<float> x(lanes * length), delta(lanes * length), a(channels * d_state), b(length * d_state),
        c(length * d_state), skip(channels);
    for (auto& v : x) v = static_cast<float>(rng.normal());
    for (auto& v : delta) v = static_cast<float>(rng.uniform(1e-3, 1e-1));
    for (I64 d = 0; d < channels; ++d)
      for (I64 s = 0; s < d_state; ++s) a[d * d_state + s] = -static_cast<float>(s + 1);
    for (auto& v : b) v = static_cast<float>(rng.normal());
    for (auto& v : c) v = static_cast<float>(rng.normal());
    for (auto& v : skip) v = static_cast<float>(rng.normal());
    scan::ScanProblem problem{1, channels, length, d_state, x.data(), delta.data(), a.data(), b.data(), c.data(),
                              skip.data()};
    std::vector<float> y_seq(lanes * length), y_par(lanes * length);
    auto t0 = std::chrono::steady_clock::now();
    scan::scan_sequential(problem, y_seq.data());
    auto t1 = std::chrono::steady_clock::now();
    scan::scan_parallel(problem, y_par.data());
    auto t2 = std::chrono::steady_clock::now();
    seq_ns += std::chrono::duration<double, std::nano>(t1 - t0).count();
    par_ns += std::chrono::duration<double, std::nano>(t2 - t1).count();
    for (std::size_t i = 0; i < y_seq.size(); ++i) {
      worst = std::max(worst, static_cast<double>(std::abs(y_seq[i] - y_par[i])));
    }
  }
  parallel::set_num_threads(previous);
  const double tokens = static_cast<double>(trials) * static_cast<double>(length);
  return {
      ScanBenchRow{"sequential", length, d_state, threads, seq_ns / tokens, 0.0},
      ScanBenchRow{"parallel", length, d_state, threads, par_ns / tokens, worst},
  };
}

}  // namespace rxm
