#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "rxm/autodiff.hpp"

// Differentiable tensor ops over (N, C, H, W) values. Every op accepts an
// empty Var wherever an argument is documented as optional (e.g. bias).
namespace rxm::ops {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, float factor);

Var concat_channels(std::span<const Var> parts);
Var slice_channels(const Var& x, std::int64_t begin, std::int64_t count);
Var reshape(const Var& x, Shape shape);

// Per-pixel mean over channels: (N, C, H, W) -> (N, 1, H, W).
Var channel_mean(const Var& x);

struct Conv2dOptions {
  int stride = 1;
  int padding = 0;
  int groups = 1;
};

// Weight layout (Cout, Cin / groups, Kh, Kw); bias (1, Cout, 1, 1) or empty. Zero padding.
Var conv2d(const Var& x, const Var& weight, const Var& bias, Conv2dOptions options = {});

struct ConvTransposeOptions {
  int stride = 2;
  int padding = 0;
};

// Weight layout (Cin, Cout, Kh, Kw). Output extent (H - 1) * stride - 2 * padding + Kh.
Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias, ConvTransposeOptions options = {});

inline constexpr float kLayerNormEps = 1e-5f;

// Normalizes over the channel axis at each (n, h, w); gamma/beta are (1, C, 1, 1).
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, float eps = kLayerNormEps);

Var softmax(const Var& x, int axis);

enum class Activation { silu, gelu };
Activation parse_activation(std::string_view name);
Var activation(const Var& x, Activation kind);
Var silu(const Var& x);
Var gelu(const Var& x);
Var softplus(const Var& x);

// Batched over (N, C); matrices live in the (H, W) axes.
// Result (N, C, M, P) = op(a) (M x K) * op(b) (K x P).
Var batched_matmul(const Var& a, const Var& b, bool transpose_a, bool transpose_b);

// x[:, c] / alpha[c], with |alpha| clamped to at least min_abs (sign kept).
Var div_channels(const Var& x, const Var& alpha, float min_abs);

// out[n, c, i] = x[n, c, index[i]] over flattened spatial positions; out has
// out_h * out_w == index.size() positions.
Var gather_spatial(const Var& x, std::shared_ptr<const std::vector<std::int64_t>> index,
                   std::int64_t out_h, std::int64_t out_w);

// Scalar (1, 1, 1, 1) results.
Var sum(const Var& x);
Var mean_abs_error(const Var& pred, const Var& target);

}  // namespace rxm::ops
