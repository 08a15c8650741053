#include "rxm/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "rxm/error.hpp"
#include "rxm/parallel.hpp"

namespace rxm::ops {

namespace {

using I64 = std::int64_t;

bool multi_lane() { return parallel::num_threads() > 1; }

Tensor elementwise(const Tensor& a, const Tensor& b, auto&& fn) {
  Tensor out(a.shape());
  const float* pa = a.ptr();
  const float* pb = b.ptr();
  float* po = out.ptr();
  for (I64 i = 0; i < a.numel(); ++i) po[i] = fn(pa[i], pb[i]);
  return out;
}

Tensor unary(const Tensor& a, auto&& fn) {
  Tensor out(a.shape());
  const float* pa = a.ptr();
  float* po = out.ptr();
  for (I64 i = 0; i < a.numel(); ++i) po[i] = fn(pa[i]);
  return out;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw DimensionError(message);
}

// Valid output-column range [lo, hi) for which in = out * stride + offset lies in [0, extent).
std::pair<I64, I64> valid_range(I64 out_extent, I64 in_extent, I64 stride, I64 offset) {
  I64 lo = 0;
  if (offset < 0) lo = (-offset + stride - 1) / stride;
  I64 hi = out_extent;
  const I64 last = in_extent - 1 - offset;
  if (last < 0) return {0, 0};
  hi = std::min(hi, last / stride + 1);
  return {lo, std::max(lo, hi)};
}

float sigmoid(float x) { return 1.0f / (1.0f + std::exp(-x)); }

// C (M x P) += op(A) * op(B). A is M x K (K x M when ta); B is K x P (P x K when tb).
void gemm_acc(bool ta, bool tb, I64 M, I64 P, I64 K, const float* A, const float* B, float* C) {
  std::vector<float> bt;
  if (tb) {
    bt.resize(static_cast<std::size_t>(K * P));
    for (I64 j = 0; j < P; ++j)
      for (I64 k = 0; k < K; ++k) bt[static_cast<std::size_t>(k * P + j)] = B[j * K + k];
    B = bt.data();
  }
  for (I64 i = 0; i < M; ++i) {
    float* crow = C + i * P;
    for (I64 k = 0; k < K; ++k) {
      const float aik = ta ? A[k * M + i] : A[i * K + k];
      const float* brow = B + k * P;
      for (I64 j = 0; j < P; ++j) crow[j] += aik * brow[j];
    }
  }
}

// Eight independent partial sums, then double: fixed order, vectorisable.
double dot(const float* a, const float* b, I64 n) {
  float lanes[8] = {};
  I64 i = 0;
  for (; i + 8 <= n; i += 8)
    for (int l = 0; l < 8; ++l) lanes[l] += a[i + l] * b[i + l];
  double acc = 0.0;
  for (int l = 0; l < 8; ++l) acc += lanes[l];
  for (; i < n; ++i) acc += static_cast<double>(a[i]) * b[i];
  return acc;
}

// Pointwise convolution: every (n, c) plane is one contiguous row of hw values.
Var conv1x1(const Var& x, const Var& weight, const Var& bias, I64 groups) {
  const Shape xs = x.shape();
  const I64 cout = weight.shape().n, cin = xs.c, cin_g = cin / groups, cout_g = cout / groups, hw = xs.spatial();
  Tensor out(Shape{xs.n, cout, xs.h, xs.w});
  const float* X = x.value().ptr();
  const float* Wt = weight.value().ptr();
  const float* B = bias.valid() ? bias.value().ptr() : nullptr;
  float* Y = out.ptr();
  const I64 planes = xs.n * cout;
#pragma omp parallel for schedule(static) if (multi_lane())
  for (I64 plane = 0; plane < planes; ++plane) {
    const I64 n = plane / cout, co = plane % cout, g = co / cout_g;
    float* y = Y + plane * hw;
    std::fill_n(y, hw, B ? B[co] : 0.0f);
    for (I64 cil = 0; cil < cin_g; ++cil) {
      const float wv = Wt[co * cin_g + cil];
      const float* xp = X + (n * cin + g * cin_g + cil) * hw;
      for (I64 i = 0; i < hw; ++i) y[i] += wv * xp[i];
    }
  }
  return derive(std::move(out), {&x, &weight, &bias}, [=](const Tensor& gy) {
    const float* GY = gy.ptr();
    const float* Xv = x.value().ptr();
    const float* Wv = weight.value().ptr();
    const I64 batch = xs.n;
    if (Tensor* gx = x.grad_sink()) {
      float* GX = gx->ptr();
      const I64 in_planes = batch * cin;
#pragma omp parallel for schedule(static) if (multi_lane())
      for (I64 plane = 0; plane < in_planes; ++plane) {
        const I64 n = plane / cin, ci = plane % cin, g = ci / cin_g, cil = ci % cin_g;
        float* gxp = GX + plane * hw;
        for (I64 col = 0; col < cout_g; ++col) {
          const I64 co = g * cout_g + col;
          const float wv = Wv[co * cin_g + cil];
          const float* gyp = GY + (n * cout + co) * hw;
          for (I64 i = 0; i < hw; ++i) gxp[i] += wv * gyp[i];
        }
      }
    }
    if (Tensor* gw = weight.grad_sink()) {
      float* GW = gw->ptr();
#pragma omp parallel for schedule(static) if (multi_lane())
      for (I64 co = 0; co < cout; ++co) {
        const I64 g = co / cout_g;
        for (I64 cil = 0; cil < cin_g; ++cil) {
          double acc = 0.0;
          for (I64 n = 0; n < batch; ++n) {
            acc += dot(GY + (n * cout + co) * hw, Xv + (n * cin + g * cin_g + cil) * hw, hw);
          }
          GW[co * cin_g + cil] += static_cast<float>(acc);
        }
      }
    }
    if (Tensor* gb = bias.grad_sink()) {
      for (I64 co = 0; co < cout; ++co) {
        double acc = 0.0;
        for (I64 n = 0; n < batch; ++n) {
          const float* gyp = GY + (n * cout + co) * hw;
          float lanes[8] = {};
          I64 i = 0;
          for (; i + 8 <= hw; i += 8)
            for (int l = 0; l < 8; ++l) lanes[l] += gyp[i + l];
          for (int l = 0; l < 8; ++l) acc += lanes[l];
          for (; i < hw; ++i) acc += gyp[i];
        }
        (*gb)[co] += static_cast<float>(acc);
      }
    }
  });
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor out = elementwise(a.value(), b.value(), [](float x, float y) { return x + y; });
  return derive(std::move(out), {&a, &b}, [a, b](const Tensor& g) {
    if (Tensor* ga = a.grad_sink()) ga->add_(g);
    if (Tensor* gb = b.grad_sink()) gb->add_(g);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor out = elementwise(a.value(), b.value(), [](float x, float y) { return x - y; });
  return derive(std::move(out), {&a, &b}, [a, b](const Tensor& g) {
    if (Tensor* ga = a.grad_sink()) ga->add_(g);
    if (Tensor* gb = b.grad_sink()) {
      for (I64 i = 0; i < g.numel(); ++i) (*gb)[i] -= g[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor out = elementwise(a.value(), b.value(), [](float x, float y) { return x * y; });
  return derive(std::move(out), {&a, &b}, [a, b](const Tensor& g) {
    if (Tensor* ga = a.grad_sink()) {
      const Tensor& bv = b.value();
      for (I64 i = 0; i < g.numel(); ++i) (*ga)[i] += g[i] * bv[i];
    }
    if (Tensor* gb = b.grad_sink()) {
      const Tensor& av = a.value();
      for (I64 i = 0; i < g.numel(); ++i) (*gb)[i] += g[i] * av[i];
    }
  });
}

Var scale(const Var& a, float factor) {
  Tensor out = unary(a.value(), [factor](float x) { return x * factor; });
  return derive(std::move(out), {&a}, [a, factor](const Tensor& g) {
    if (Tensor* ga = a.grad_sink()) {
      for (I64 i = 0; i < g.numel(); ++i) (*ga)[i] += g[i] * factor;
    }
  });
}

Var concat_channels(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_channels: no inputs");
  const Shape first = parts.front().shape();
  I64 channels = 0;
  for (const Var& p : parts) {
    const Shape s = p.shape();
    require(s.n == first.n, "concat_channels: mismatch on axis N");
    require(s.h == first.h, "concat_channels: mismatch on axis H");
    require(s.w == first.w, "concat_channels: mismatch on axis W");
    channels += s.c;
  }
  const Shape out_shape{first.n, channels, first.h, first.w};
  Tensor out(out_shape);
  const I64 hw = first.spatial();
  I64 c0 = 0;
  std::vector<I64> offsets;
  for (const Var& p : parts) {
    offsets.push_back(c0);
    const Tensor& v = p.value();
    for (I64 n = 0; n < first.n; ++n) {
      std::copy_n(v.ptr() + n * v.shape().c * hw, v.shape().c * hw, out.ptr() + (n * channels + c0) * hw);
    }
    c0 += v.shape().c;
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return derive(std::move(out), parts, [inputs, offsets, channels, hw](const Tensor& g) {
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      Tensor* gi = inputs[k].grad_sink();
      if (!gi) continue;
      const Shape s = gi->shape();
      for (I64 n = 0; n < s.n; ++n) {
        const float* src = g.ptr() + (n * channels + offsets[k]) * hw;
        float* dst = gi->ptr() + n * s.c * hw;
        for (I64 i = 0; i < s.c * hw; ++i) dst[i] += src[i];
      }
    }
  });
}

Var slice_channels(const Var& x, I64 begin, I64 count) {
  const Shape s = x.shape();
  require(begin >= 0 && count >= 0 && begin + count <= s.c,
          "slice_channels: range [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
              ") exceeds axis C of " + s.str());
  const I64 hw = s.spatial();
  Tensor out(Shape{s.n, count, s.h, s.w});
  for (I64 n = 0; n < s.n; ++n) {
    std::copy_n(x.value().ptr() + (n * s.c + begin) * hw, count * hw, out.ptr() + n * count * hw);
  }
  return derive(std::move(out), {&x}, [x, begin, count, hw](const Tensor& g) {
    Tensor* gx = x.grad_sink();
    if (!gx) return;
    const Shape s = gx->shape();
    for (I64 n = 0; n < s.n; ++n) {
      const float* src = g.ptr() + n * count * hw;
      float* dst = gx->ptr() + (n * s.c + begin) * hw;
      for (I64 i = 0; i < count * hw; ++i) dst[i] += src[i];
    }
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(shape);
  return derive(std::move(out), {&x}, [x](const Tensor& g) {
    if (Tensor* gx = x.grad_sink()) gx->add_(g.reshaped(gx->shape()));
  });
}

Var channel_mean(const Var& x) {
  const Shape s = x.shape();
  require(s.c >= 1, "channel_mean: axis C is empty");
  const I64 hw = s.spatial();
  Tensor out(Shape{s.n, 1, s.h, s.w});
  const float inv = 1.0f / static_cast<float>(s.c);
  for (I64 n = 0; n < s.n; ++n) {
    float* dst = out.ptr() + n * hw;
    for (I64 c = 0; c < s.c; ++c) {
      const float* src = x.value().ptr() + (n * s.c + c) * hw;
      for (I64 p = 0; p < hw; ++p) dst[p] += src[p];
    }
    for (I64 p = 0; p < hw; ++p) dst[p] *= inv;
  }
  return derive(std::move(out), {&x}, [x, inv, hw](const Tensor& g) {
    Tensor* gx = x.grad_sink();
    if (!gx) return;
    const Shape s = gx->shape();
    for (I64 n = 0; n < s.n; ++n)
      for (I64 c = 0; c < s.c; ++c) {
        float* dst = gx->ptr() + (n * s.c + c) * hw;
        const float* src = g.ptr() + n * hw;
        for (I64 p = 0; p < hw; ++p) dst[p] += src[p] * inv;
      }
  });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, Conv2dOptions opt) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (opt.stride < 1) throw DimensionError("conv2d: stride must be >= 1");
  if (opt.padding < 0) throw DimensionError("conv2d: padding must be >= 0");
  if (opt.groups < 1) throw DimensionError("conv2d: groups must be >= 1");
  const I64 groups = opt.groups;
  require(xs.c % groups == 0, "conv2d: input axis C (" + std::to_string(xs.c) + ") not divisible by groups " +
                                  std::to_string(groups));
  require(ws.n % groups == 0, "conv2d: weight axis N (Cout=" + std::to_string(ws.n) +
                                  ") not divisible by groups " + std::to_string(groups));
  require(ws.c == xs.c / groups, "conv2d: weight axis C is " + std::to_string(ws.c) + ", expected Cin/groups = " +
                                     std::to_string(xs.c / groups));
  if (bias.valid()) {
    require(bias.shape() == Shape{1, ws.n, 1, 1},
            "conv2d: bias shape " + bias.shape().str() + " does not match Cout " + std::to_string(ws.n));
  }
  const I64 s = opt.stride, p = opt.padding, kh_n = ws.h, kw_n = ws.w;
  const I64 oh_n = (xs.h + 2 * p - kh_n) / s + 1;
  const I64 ow_n = (xs.w + 2 * p - kw_n) / s + 1;
  require(xs.h + 2 * p >= kh_n && oh_n >= 1, "conv2d: kernel taller than padded input on axis H");
  require(xs.w + 2 * p >= kw_n && ow_n >= 1, "conv2d: kernel wider than padded input on axis W");

  if (kh_n == 1 && kw_n == 1 && s == 1 && p == 0) return conv1x1(x, weight, bias, groups);

  const I64 cout = ws.n, cin = xs.c, cin_g = cin / groups, cout_g = cout / groups;
  const I64 ih_n = xs.h, iw_n = xs.w;
  Tensor out(Shape{xs.n, cout, oh_n, ow_n});
  const float* X = x.value().ptr();
  const float* Wt = weight.value().ptr();
  const float* B = bias.valid() ? bias.value().ptr() : nullptr;
  float* Y = out.ptr();
  const I64 planes = xs.n * cout;

#pragma omp parallel for schedule(static) if (multi_lane())
  for (I64 plane = 0; plane < planes; ++plane) {
    const I64 n = plane / cout, co = plane % cout, g = co / cout_g;
    float* y = Y + plane * oh_n * ow_n;
    std::fill_n(y, oh_n * ow_n, B ? B[co] : 0.0f);
    for (I64 cil = 0; cil < cin_g; ++cil) {
      const float* xp = X + (n * cin + g * cin_g + cil) * ih_n * iw_n;
      for (I64 kh = 0; kh < kh_n; ++kh) {
        const auto [oh_lo, oh_hi] = valid_range(oh_n, ih_n, s, kh - p);
        for (I64 kw = 0; kw < kw_n; ++kw) {
          const float wv = Wt[((co * cin_g + cil) * kh_n + kh) * kw_n + kw];
          const auto [ow_lo, ow_hi] = valid_range(ow_n, iw_n, s, kw - p);
          for (I64 oh = oh_lo; oh < oh_hi; ++oh) {
            const float* xr = xp + (oh * s + kh - p) * iw_n + (kw - p);
            float* yr = y + oh * ow_n;
            if (s == 1) {
              for (I64 ow = ow_lo; ow < ow_hi; ++ow) yr[ow] += wv * xr[ow];
            } else {
              for (I64 ow = ow_lo; ow < ow_hi; ++ow) yr[ow] += wv * xr[ow * s];
            }
          }
        }
      }
    }
  }

  return derive(std::move(out), {&x, &weight, &bias}, [=](const Tensor& gy) {
    const float* GY = gy.ptr();
    const float* Xv = x.value().ptr();
    const float* Wv = weight.value().ptr();
    const I64 batch = xs.n;
    if (Tensor* gx = x.grad_sink()) {
      float* GX = gx->ptr();
      const I64 in_planes = batch * cin;
#pragma omp parallel for schedule(static) if (multi_lane())
      for (I64 plane = 0; plane < in_planes; ++plane) {
        const I64 n = plane / cin, ci = plane % cin, g = ci / cin_g, cil = ci % cin_g;
        float* gxp = GX + plane * ih_n * iw_n;
        for (I64 col = 0; col < cout_g; ++col) {
          const I64 co = g * cout_g + col;
          const float* gyp = GY + (n * cout + co) * oh_n * ow_n;
          for (I64 kh = 0; kh < kh_n; ++kh) {
            const auto [oh_lo, oh_hi] = valid_range(oh_n, ih_n, s, kh - p);
            for (I64 kw = 0; kw < kw_n; ++kw) {
              const float wv = Wv[((co * cin_g + cil) * kh_n + kh) * kw_n + kw];
              const auto [ow_lo, ow_hi] = valid_range(ow_n, iw_n, s, kw - p);
              for (I64 oh = oh_lo; oh < oh_hi; ++oh) {
                float* xr = gxp + (oh * s + kh - p) * iw_n + (kw - p);
                const float* yr = gyp + oh * ow_n;
                if (s == 1) {
                  for (I64 ow = ow_lo; ow < ow_hi; ++ow) xr[ow] += wv * yr[ow];
                } else {
                  for (I64 ow = ow_lo; ow < ow_hi; ++ow) xr[ow * s] += wv * yr[ow];
                }
              }
            }
          }
        }
      }
    }
    if (Tensor* gw = weight.grad_sink()) {
      float* GW = gw->ptr();
#pragma omp parallel for schedule(static) if (multi_lane())
      for (I64 co = 0; co < cout; ++co) {
        const I64 g = co / cout_g;
        for (I64 cil = 0; cil < cin_g; ++cil)
          for (I64 kh = 0; kh < kh_n; ++kh) {
            const auto [oh_lo, oh_hi] = valid_range(oh_n, ih_n, s, kh - p);
            for (I64 kw = 0; kw < kw_n; ++kw) {
              const auto [ow_lo, ow_hi] = valid_range(ow_n, iw_n, s, kw - p);
              double acc = 0.0;
              for (I64 n = 0; n < batch; ++n) {
                const float* xp = Xv + (n * cin + g * cin_g + cil) * ih_n * iw_n;
                const float* gyp = GY + (n * cout + co) * oh_n * ow_n;
                for (I64 oh = oh_lo; oh < oh_hi; ++oh) {
                  const float* xr = xp + (oh * s + kh - p) * iw_n + (kw - p);
                  const float* yr = gyp + oh * ow_n;
                  float row = 0.0f;
                  for (I64 ow = ow_lo; ow < ow_hi; ++ow) row += yr[ow] * xr[ow * s];
                  acc += row;
                }
              }
              GW[((co * cin_g + cil) * kh_n + kh) * kw_n + kw] += static_cast<float>(acc);
            }
          }
      }
    }
    if (Tensor* gb = bias.grad_sink()) {
      for (I64 co = 0; co < cout; ++co) {
        double acc = 0.0;
        for (I64 n = 0; n < batch; ++n) {
          const float* gyp = GY + (n * cout + co) * oh_n * ow_n;
          float row = 0.0f;
          for (I64 i = 0; i < oh_n * ow_n; ++i) row += gyp[i];
          acc += row;
        }
        (*gb)[co] += static_cast<float>(acc);
      }
    }
  });
}

Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias, ConvTransposeOptions opt) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (opt.stride < 1) throw DimensionError("conv_transpose2d: stride must be >= 1");
  if (opt.padding < 0) throw DimensionError("conv_transpose2d: padding must be >= 0");
  require(ws.n == xs.c, "conv_transpose2d: weight axis N (" + std::to_string(ws.n) + ") must equal input axis C (" +
                            std::to_string(xs.c) + ")");
  const I64 cin = xs.c, cout = ws.c, kh_n = ws.h, kw_n = ws.w, s = opt.stride, p = opt.padding;
  if (bias.valid()) {
    require(bias.shape() == Shape{1, cout, 1, 1},
            "conv_transpose2d: bias shape " + bias.shape().str() + " does not match Cout " + std::to_string(cout));
  }
  const I64 ih_n = xs.h, iw_n = xs.w;
  const I64 oh_n = (ih_n - 1) * s - 2 * p + kh_n;
  const I64 ow_n = (iw_n - 1) * s - 2 * p + kw_n;
  require(oh_n >= 1, "conv_transpose2d: empty output on axis H");
  require(ow_n >= 1, "conv_transpose2d: empty output on axis W");

  Tensor out(Shape{xs.n, cout, oh_n, ow_n});
  const float* X = x.value().ptr();
  const float* Wt = weight.value().ptr();
  const float* B = bias.valid() ? bias.value().ptr() : nullptr;
  float* Y = out.ptr();
  const I64 planes = xs.n * cout;

  // Output row oh receives input row ih where oh = ih * s + kh - p.
#pragma omp parallel for schedule(static) if (multi_lane())
  for (I64 plane = 0; plane < planes; ++plane) {
    const I64 n = plane / cout, co = plane % cout;
    float* y = Y + plane * oh_n * ow_n;
    std::fill_n(y, oh_n * ow_n, B ? B[co] : 0.0f);
    for (I64 ci = 0; ci < cin; ++ci) {
      const float* xp = X + (n * cin + ci) * ih_n * iw_n;
      for (I64 kh = 0; kh < kh_n; ++kh) {
        const auto [ih_lo, ih_hi] = valid_range(ih_n, oh_n, s, kh - p);
        for (I64 kw = 0; kw < kw_n; ++kw) {
          const float wv = Wt[((ci * cout + co) * kh_n + kh) * kw_n + kw];
          const auto [iw_lo, iw_hi] = valid_range(iw_n, ow_n, s, kw - p);
          for (I64 ih = ih_lo; ih < ih_hi; ++ih) {
            float* yr = y + (ih * s + kh - p) * ow_n + (kw - p);
            const float* xr = xp + ih * iw_n;
            for (I64 iw = iw_lo; iw < iw_hi; ++iw) yr[iw * s] += wv * xr[iw];
          }
        }
      }
    }
  }

  return derive(std::move(out), {&x, &weight, &bias}, [=](const Tensor& gy) {
    const float* GY = gy.ptr();
    const float* Xv = x.value().ptr();
    const float* Wv = weight.value().ptr();
    const I64 batch = xs.n;
    if (Tensor* gx = x.grad_sink()) {
      float* GX = gx->ptr();
      const I64 in_planes = batch * cin;
#pragma omp parallel for schedule(static) if (multi_lane())
      for (I64 plane = 0; plane < in_planes; ++plane) {
        const I64 n = plane / cin, ci = plane % cin;
        float* gxp = GX + plane * ih_n * iw_n;
        for (I64 co = 0; co < cout; ++co) {
          const float* gyp = GY + (n * cout + co) * oh_n * ow_n;
          for (I64 kh = 0; kh < kh_n; ++kh) {
            const auto [ih_lo, ih_hi] = valid_range(ih_n, oh_n, s, kh - p);
            for (I64 kw = 0; kw < kw_n; ++kw) {
              const float wv = Wv[((ci * cout + co) * kh_n + kh) * kw_n + kw];
              const auto [iw_lo, iw_hi] = valid_range(iw_n, ow_n, s, kw - p);
              for (I64 ih = ih_lo; ih < ih_hi; ++ih) {
                const float* yr = gyp + (ih * s + kh - p) * ow_n + (kw - p);
                float* xr = gxp + ih * iw_n;
                for (I64 iw = iw_lo; iw < iw_hi; ++iw) xr[iw] += wv * yr[iw * s];
              }
            }
          }
        }
      }
    }
    if (Tensor* gw = weight.grad_sink()) {
      float* GW = gw->ptr();
#pragma omp parallel for schedule(static) if (multi_lane())
      for (I64 ci = 0; ci < cin; ++ci) {
        for (I64 co = 0; co < cout; ++co)
          for (I64 kh = 0; kh < kh_n; ++kh) {
            const auto [ih_lo, ih_hi] = valid_range(ih_n, oh_n, s, kh - p);
            for (I64 kw = 0; kw < kw_n; ++kw) {
              const auto [iw_lo, iw_hi] = valid_range(iw_n, ow_n, s, kw - p);
              double acc = 0.0;
              for (I64 n = 0; n < batch; ++n) {
                const float* xp = Xv + (n * cin + ci) * ih_n * iw_n;
                const float* gyp = GY + (n * cout + co) * oh_n * ow_n;
                for (I64 ih = ih_lo; ih < ih_hi; ++ih) {
                  const float* yr = gyp + (ih * s + kh - p) * ow_n + (kw - p);
                  const float* xr = xp + ih * iw_n;
                  float row = 0.0f;
                  for (I64 iw = iw_lo; iw < iw_hi; ++iw) row += xr[iw] * yr[iw * s];
                  acc += row;
                }
              }
              GW[((ci * cout + co) * kh_n + kh) * kw_n + kw] += static_cast<float>(acc);
            }
          }
      }
    }
    if (Tensor* gb = bias.grad_sink()) {
      for (I64 co = 0; co < cout; ++co) {
        double acc = 0.0;
        for (I64 n = 0; n < batch; ++n) {
          const float* gyp = GY + (n * cout + co) * oh_n * ow_n;
          float row = 0.0f;
          for (I64 i = 0; i < oh_n * ow_n; ++i) row += gyp[i];
          acc += row;
        }
        (*gb)[co] += static_cast<float>(acc);
      }
    }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, float eps) {
  const Shape s = x.shape();
  if (s.c < 1) throw DimensionError("layer_norm: axis C is empty");
  require(gamma.shape() == Shape{1, s.c, 1, 1}, "layer_norm: gamma must be (1," + std::to_string(s.c) + ",1,1)");
  require(beta.shape() == Shape{1, s.c, 1, 1}, "layer_norm: beta must be (1," + std::to_string(s.c) + ",1,1)");
  const I64 hw = s.spatial(), C = s.c;
  Tensor xhat(s);
  Tensor rstd(Shape{s.n, 1, s.h, s.w});
  Tensor out(s);
  const float* X = x.value().ptr();
  const float* G = gamma.value().ptr();
  const float* Bt = beta.value().ptr();
  std::vector<float> mean(static_cast<std::size_t>(hw));
  std::vector<float> var(static_cast<std::size_t>(hw));
  const float inv_c = 1.0f / static_cast<float>(C);
  for (I64 n = 0; n < s.n; ++n) {
    std::fill(mean.begin(), mean.end(), 0.0f);
    std::fill(var.begin(), var.end(), 0.0f);
    for (I64 c = 0; c < C; ++c) {
      const float* xp = X + (n * C + c) * hw;
      for (I64 p = 0; p < hw; ++p) mean[p] += xp[p];
    }
    for (auto& m : mean) m *= inv_c;
    for (I64 c = 0; c < C; ++c) {
      const float* xp = X + (n * C + c) * hw;
      for (I64 p = 0; p < hw; ++p) {
        const float d = xp[p] - mean[p];
        var[p] += d * d;
      }
    }
    float* rs = rstd.ptr() + n * hw;
    for (I64 p = 0; p < hw; ++p) rs[p] = 1.0f / std::sqrt(var[p] * inv_c + eps);
    for (I64 c = 0; c < C; ++c) {
      const float* xp = X + (n * C + c) * hw;
      float* xh = xhat.ptr() + (n * C + c) * hw;
      float* yp = out.ptr() + (n * C + c) * hw;
      for (I64 p = 0; p < hw; ++p) {
        xh[p] = (xp[p] - mean[p]) * rs[p];
        yp[p] = xh[p] * G[c] + Bt[c];
      }
    }
  }
  return derive(std::move(out), {&x, &gamma, &beta},
                [x, gamma, beta, xhat = std::move(xhat), rstd = std::move(rstd), hw, C, inv_c](const Tensor& g) {
                  const I64 batch = g.shape().n;
                  if (Tensor* gg = gamma.grad_sink()) {
                    for (I64 c = 0; c < C; ++c) {
                      double acc = 0.0;
                      for (I64 n = 0; n < batch; ++n) {
                        const float* gp = g.ptr() + (n * C + c) * hw;
                        const float* xh = xhat.ptr() + (n * C + c) * hw;
                        for (I64 p = 0; p < hw; ++p) acc += static_cast<double>(gp[p]) * xh[p];
                      }
                      (*gg)[c] += static_cast<float>(acc);
                    }
                  }
                  if (Tensor* gb = beta.grad_sink()) {
                    for (I64 c = 0; c < C; ++c) {
                      double acc = 0.0;
                      for (I64 n = 0; n < batch; ++n) {
                        const float* gp = g.ptr() + (n * C + c) * hw;
                        for (I64 p = 0; p < hw; ++p) acc += gp[p];
                      }
                      (*gb)[c] += static_cast<float>(acc);
                    }
                  }
                  Tensor* gx = x.grad_sink();
                  if (!gx) return;
                  const float* G = gamma.value().ptr();
                  std::vector<float> m1(static_cast<std::size_t>(hw));
                  std::vector<float> m2(static_cast<std::size_t>(hw));
                  for (I64 n = 0; n < batch; ++n) {
                    std::fill(m1.begin(), m1.end(), 0.0f);
                    std::fill(m2.begin(), m2.end(), 0.0f);
                    for (I64 c = 0; c < C; ++c) {
                      const float* gp = g.ptr() + (n * C + c) * hw;
                      const float* xh = xhat.ptr() + (n * C + c) * hw;
                      for (I64 p = 0; p < hw; ++p) {
                        const float gh = gp[p] * G[c];
                        m1[p] += gh;
                        m2[p] += gh * xh[p];
                      }
                    }
                    const float* rs = rstd.ptr() + n * hw;
                    for (I64 c = 0; c < C; ++c) {
                      const float* gp = g.ptr() + (n * C + c) * hw;
                      const float* xh = xhat.ptr() + (n * C + c) * hw;
                      float* dst = gx->ptr() + (n * C + c) * hw;
                      for (I64 p = 0; p < hw; ++p) {
                        dst[p] += rs[p] * (gp[p] * G[c] - m1[p] * inv_c - xh[p] * m2[p] * inv_c);
                      }
                    }
                  }
                });
}

Var softmax(const Var& x, int axis) {
  const Shape s = x.shape();
  const I64 len = s[axis];
  I64 outer = 1, inner = 1;
  for (int a = 0; a < axis; ++a) outer *= s[a];
  for (int a = axis + 1; a < 4; ++a) inner *= s[a];
  Tensor out(s);
  const float* X = x.value().ptr();
  float* Y = out.ptr();
  for (I64 o = 0; o < outer; ++o) {
    for (I64 i = 0; i < inner; ++i) {
      const I64 base = o * len * inner + i;
      float mx = -INFINITY;
      for (I64 a = 0; a < len; ++a) mx = std::max(mx, X[base + a * inner]);
      float total = 0.0f;
      for (I64 a = 0; a < len; ++a) {
        const float e = std::exp(X[base + a * inner] - mx);
        Y[base + a * inner] = e;
        total += e;
      }
      const float inv = 1.0f / total;
      for (I64 a = 0; a < len; ++a) Y[base + a * inner] *= inv;
    }
  }
  Tensor saved = out;
  return derive(std::move(out), {&x}, [x, y = std::move(saved), outer, inner, len](const Tensor& g) {
    Tensor* gx = x.grad_sink();
    if (!gx) return;
    for (I64 o = 0; o < outer; ++o) {
      for (I64 i = 0; i < inner; ++i) {
        const I64 base = o * len * inner + i;
        float dot = 0.0f;
        for (I64 a = 0; a < len; ++a) dot += g[base + a * inner] * y[base + a * inner];
        for (I64 a = 0; a < len; ++a) {
          (*gx)[base + a * inner] += y[base + a * inner] * (g[base + a * inner] - dot);
        }
      }
    }
  });
}

Activation parse_activation(std::string_view name) {
  if (name == "silu") return Activation::silu;
  if (name == "gelu") return Activation::gelu;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

Var activation(const Var& x, Activation kind) {
  switch (kind) {
    case Activation::silu: return silu(x);
    case Activation::gelu: return gelu(x);
  }
  throw ConfigError("unknown activation kind");
}

Var silu(const Var& x) {
  Tensor out = unary(x.value(), [](float v) { return v * sigmoid(v); });
  return derive(std::move(out), {&x}, [x](const Tensor& g) {
    Tensor* gx = x.grad_sink();
    if (!gx) return;
    const Tensor& xv = x.value();
    for (I64 i = 0; i < g.numel(); ++i) {
      const float sg = sigmoid(xv[i]);
      (*gx)[i] += g[i] * sg * (1.0f + xv[i] * (1.0f - sg));
    }
  });
}

Var gelu(const Var& x) {
  constexpr float kInvSqrt2 = 0.70710678118654752f;
  Tensor out = unary(x.value(), [](float v) { return 0.5f * v * (1.0f + std::erf(v * kInvSqrt2)); });
  return derive(std::move(out), {&x}, [x](const Tensor& g) {
    Tensor* gx = x.grad_sink();
    if (!gx) return;
    constexpr float kInvSqrt2Pi = 0.39894228040143268f;
    const Tensor& xv = x.value();
    for (I64 i = 0; i < g.numel(); ++i) {
      const float v = xv[i];
      const float cdf = 0.5f * (1.0f + std::erf(v * kInvSqrt2));
      const float pdf = kInvSqrt2Pi * std::exp(-0.5f * v * v);
      (*gx)[i] += g[i] * (cdf + v * pdf);
    }
  });
}

Var softplus(const Var& x) {
  Tensor out = unary(x.value(), [](float v) { return v > 20.0f ? v : std::log1p(std::exp(v)); });
  return derive(std::move(out), {&x}, [x](const Tensor& g) {
    Tensor* gx = x.grad_sink();
    if (!gx) return;
    const Tensor& xv = x.value();
    for (I64 i = 0; i < g.numel(); ++i) (*gx)[i] += g[i] * sigmoid(xv[i]);
  });
}

Var batched_matmul(const Var& a, const Var& b, bool ta, bool tb) {
  const Shape as = a.shape(), bs = b.shape();
  require(as.n == bs.n, "batched_matmul: mismatch on axis N");
  require(as.c == bs.c, "batched_matmul: mismatch on axis C");
  const I64 M = ta ? as.w : as.h;
  const I64 K = ta ? as.h : as.w;
  const I64 Kb = tb ? bs.w : bs.h;
  const I64 P = tb ? bs.h : bs.w;
  require(K == Kb, "batched_matmul: inner dimensions differ (" + std::to_string(K) + " vs " + std::to_string(Kb) + ")");
  const I64 batches = as.n * as.c;
  const I64 a_size = as.spatial(), b_size = bs.spatial();
  Tensor out(Shape{as.n, as.c, M, P});
#pragma omp parallel for schedule(static) if (multi_lane())
  for (I64 bi = 0; bi < batches; ++bi) {
    gemm_acc(ta, tb, M, P, K, a.value().ptr() + bi * a_size, b.value().ptr() + bi * b_size, out.ptr() + bi * M * P);
  }
  return derive(std::move(out), {&a, &b}, [=](const Tensor& g) {
    const float* A = a.value().ptr();
    const float* B = b.value().ptr();
    if (Tensor* ga = a.grad_sink()) {
      for (I64 bi = 0; bi < batches; ++bi) {
        const float* G = g.ptr() + bi * M * P;
        float* GA = ga->ptr() + bi * a_size;
        const float* Bb = B + bi * b_size;
        if (!ta && !tb) gemm_acc(false, true, M, K, P, G, Bb, GA);
        else if (!ta && tb) gemm_acc(false, false, M, K, P, G, Bb, GA);
        else if (ta && !tb) gemm_acc(false, true, K, M, P, Bb, G, GA);
        else gemm_acc(true, true, K, M, P, Bb, G, GA);
      }
    }
    if (Tensor* gb = b.grad_sink()) {
      for (I64 bi = 0; bi < batches; ++bi) {
        const float* G = g.ptr() + bi * M * P;
        float* GB = gb->ptr() + bi * b_size;
        const float* Ab = A + bi * a_size;
        if (!ta && !tb) gemm_acc(true, false, K, P, M, Ab, G, GB);
        else if (!ta && tb) gemm_acc(true, false, P, K, M, G, Ab, GB);
        else if (ta && !tb) gemm_acc(false, false, K, P, M, Ab, G, GB);
        else gemm_acc(true, true, P, K, M, G, Ab, GB);
      }
    }
  });
}

Var div_channels(const Var& x, const Var& alpha, float min_abs) {
  const Shape s = x.shape();
  require(alpha.shape() == Shape{1, s.c, 1, 1}, "div_channels: alpha must be (1," + std::to_string(s.c) + ",1,1)");
  const I64 hw = s.spatial();
  std::vector<float> divisor(static_cast<std::size_t>(s.c));
  std::vector<bool> clamped(static_cast<std::size_t>(s.c));
  for (I64 c = 0; c < s.c; ++c) {
    const float a = alpha.value()[c];
    clamped[c] = std::abs(a) < min_abs;
    divisor[c] = clamped[c] ? (a < 0.0f ? -min_abs : min_abs) : a;
  }
  Tensor out(s);
  for (I64 n = 0; n < s.n; ++n)
    for (I64 c = 0; c < s.c; ++c) {
      const float inv = 1.0f / divisor[c];
      const float* xp = x.value().ptr() + (n * s.c + c) * hw;
      float* yp = out.ptr() + (n * s.c + c) * hw;
      for (I64 p = 0; p < hw; ++p) yp[p] = xp[p] * inv;
    }
  return derive(std::move(out), {&x, &alpha}, [x, alpha, divisor, clamped, hw](const Tensor& g) {
    const Shape s = g.shape();
    if (Tensor* gx = x.grad_sink()) {
      for (I64 n = 0; n < s.n; ++n)
        for (I64 c = 0; c < s.c; ++c) {
          const float inv = 1.0f / divisor[c];
          const float* gp = g.ptr() + (n * s.c + c) * hw;
          float* dst = gx->ptr() + (n * s.c + c) * hw;
          for (I64 p = 0; p < hw; ++p) dst[p] += gp[p] * inv;
        }
    }
    if (Tensor* ga = alpha.grad_sink()) {
      for (I64 c = 0; c < s.c; ++c) {
        if (clamped[c]) continue;
        double acc = 0.0;
        for (I64 n = 0; n < s.n; ++n) {
          const float* gp = g.ptr() + (n * s.c + c) * hw;
          const float* xp = x.value().ptr() + (n * s.c + c) * hw;
          for (I64 p = 0; p < hw; ++p) acc += static_cast<double>(gp[p]) * xp[p];
        }
        const double d = divisor[c];
        (*ga)[c] += static_cast<float>(-acc / (d * d));
      }
    }
  });
}

Var gather_spatial(const Var& x, std::shared_ptr<const std::vector<I64>> index, I64 out_h, I64 out_w) {
  const Shape s = x.shape();
  const I64 len = static_cast<I64>(index->size());
  require(out_h * out_w == len, "gather_spatial: output extent does not match index length");
  const I64 in_hw = s.spatial();
  for (I64 i : *index) require(i >= 0 && i < in_hw, "gather_spatial: index out of range");
  Tensor out(Shape{s.n, s.c, out_h, out_w});
  const I64 planes = s.n * s.c;
  const I64* idx = index->data();
  for (I64 plane = 0; plane < planes; ++plane) {
    const float* src = x.value().ptr() + plane * in_hw;
    float* dst = out.ptr() + plane * len;
    for (I64 i = 0; i < len; ++i) dst[i] = src[idx[i]];
  }
  return derive(std::move(out), {&x}, [x, index, len, in_hw, planes](const Tensor& g) {
    Tensor* gx = x.grad_sink();
    if (!gx) return;
    const I64* idx = index->data();
    for (I64 plane = 0; plane < planes; ++plane) {
      const float* src = g.ptr() + plane * len;
      float* dst = gx->ptr() + plane * in_hw;
      for (I64 i = 0; i < len; ++i) dst[idx[i]] += src[i];
    }
  });
}

Var sum(const Var& x) {
  double acc = 0.0;
  for (float v : x.value().data()) acc += v;
  Tensor out(Shape{1, 1, 1, 1}, static_cast<float>(acc));
  return derive(std::move(out), {&x}, [x](const Tensor& g) {
    Tensor* gx = x.grad_sink();
    if (!gx) return;
    const float gv = g[0];
    for (I64 i = 0; i < gx->numel(); ++i) (*gx)[i] += gv;
  });
}

Var mean_abs_error(const Var& pred, const Var& target) {
  require_same_shape(pred.shape(), target.shape(), "mean_abs_error");
  const I64 count = pred.value().numel();
  if (count == 0) throw DimensionError("mean_abs_error: empty tensors");
  double acc = 0.0;
  for (I64 i = 0; i < count; ++i) acc += std::abs(static_cast<double>(pred.value()[i]) - target.value()[i]);
  Tensor out(Shape{1, 1, 1, 1}, static_cast<float>(acc / static_cast<double>(count)));
  return derive(std::move(out), {&pred, &target}, [pred, target, count](const Tensor& g) {
    const float scale = g[0] / static_cast<float>(count);
    const Tensor& pv = pred.value();
    const Tensor& tv = target.value();
    auto sign = [](float d) { return d > 0.0f ? 1.0f : (d < 0.0f ? -1.0f : 0.0f); };
    if (Tensor* gp = pred.grad_sink()) {
      for (I64 i = 0; i < count; ++i) (*gp)[i] += scale * sign(pv[i] - tv[i]);
    }
    if (Tensor* gt = target.grad_sink()) {
      for (I64 i = 0; i < count; ++i) (*gt)[i] -= scale * sign(pv[i] - tv[i]);
    }
  });
}

}  // namespace rxm::ops
