#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rxm/autodiff.hpp"

namespace rxm {

// Builds an output from tensors bound as Vars. Parameters are reached via the binder.
using GraphFn = std::function<Var(ParamBinder& bind, std::span<const Var> inputs)>;

struct GradcheckOptions {
  double step = 1.0 / 128;
  // Coordinates probed per input tensor and across the whole parameter pool.
  std::int64_t max_input_coords = 96;
  std::int64_t max_param_coords = 96;
};

// Compares reverse-mode gradients of sum(seed * f(inputs, params)) with fourth-order
// central differences over a random sample of input and parameter coordinates. Returns
// the relative L2 error of the sampled gradient vector.
double gradcheck_case(const GraphFn& f, std::vector<Tensor> inputs, std::span<Param* const> params, Rng& rng,
                      const GradcheckOptions& options = {});

struct GradcheckEntry {
  std::string op;
  int cases = 0;
  double worst_relative_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return worst_relative_error <= tolerance; }
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  bool all_passed() const;
};

inline constexpr double kOpGradTolerance = 1e-3;
inline constexpr double kEndToEndGradTolerance = 5e-3;

// Every differentiable op and block, `cases` seeded random instances each.
GradcheckReport run_gradcheck_suite(std::uint64_t seed, int cases = 20);

}  // namespace rxm
