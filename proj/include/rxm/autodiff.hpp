#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "rxm/tensor.hpp"

namespace rxm {

// Role of a learnable tensor; drives initialization and the census tests.
enum class ParamKind { kernel, bias, norm_gain, norm_shift, other };

struct Param {
  std::string name;
  ParamKind kind = ParamKind::other;
  Tensor value;
  Tensor grad;
  // Set by Tape::backward when a gradient actually reached this parameter.
  bool has_grad = false;

  void zero_grad();
};

// Owns parameters in registration order. Addresses are stable for the set's lifetime.
class ParamSet {
 public:
  ParamSet() = default;
  ParamSet(ParamSet&&) = default;
  ParamSet& operator=(ParamSet&&) = default;
  ParamSet(const ParamSet&) = delete;
  ParamSet& operator=(const ParamSet&) = delete;

  Param& add(std::string name, ParamKind kind, Tensor value);
  Param* find(std::string_view name);
  const Param* find(std::string_view name) const;
  Param& get(std::string_view name);
  const Param& get(std::string_view name) const;

  const std::vector<std::unique_ptr<Param>>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::int64_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<std::unique_ptr<Param>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

class Tape;

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  Param* param = nullptr;
  std::function<void(const Tensor& grad_out)> backward;

  // Zero-initialized on first use.
  Tensor& grad_buffer();
};

using NodePtr = std::shared_ptr<Node>;

// Handle to a value produced by an op. Values recorded on a tape carry their
// backward rule; values without a tape are plain constants.
class Var {
 public:
  Var() = default;
  static Var constant(Tensor value);

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Tape* tape() const { return tape_; }
  bool valid() const { return static_cast<bool>(node_); }

  // Gradient accumulated by the last backward pass; zeros if unreached.
  Tensor grad() const;

  // Gradient sink for backward rules; nullptr when this value needs no gradient.
  Tensor* grad_sink() const;

 private:
  friend class Tape;
  Var(NodePtr node, Tape* tape) : node_(std::move(node)), tape_(tape) {}

  NodePtr node_;
  Tape* tape_ = nullptr;
};

// Records differentiable ops in execution order and runs reverse-mode accumulation once.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Param& param);
  Var input(Tensor value, bool requires_grad = false);

  // Accumulates d(sum(seed * output))/d(leaf) into every reachable Param and input.
  // The tape is consumed; a second call throws UsageError.
  void backward(const Var& output, const Tensor& seed);

  bool consumed() const { return consumed_; }
  std::size_t size() const { return nodes_.size(); }

  Var record(Tensor value, std::function<void(const Tensor&)> backward);

 private:
  std::vector<NodePtr> nodes_;
  bool consumed_ = false;
};

// Builds an op result. If no input requires a gradient the backward rule is
// dropped and the result is a constant.
Var derive(Tensor value, std::initializer_list<const Var*> inputs,
           std::function<void(const Tensor&)> backward);
Var derive(Tensor value, std::span<const Var> inputs, std::function<void(const Tensor&)> backward);

// Maps parameters to Vars for one forward pass. With a tape, each Param becomes
// a single leaf (so gradients accumulate once); without one, a constant.
class ParamBinder {
 public:
  explicit ParamBinder(Tape* tape = nullptr) : tape_(tape) {}
  Var operator()(Param& param);
  Tape* tape() const { return tape_; }

 private:
  Tape* tape_;
  std::unordered_map<const Param*, Var> cache_;
};

using ScalarFn = std::function<double(const Tensor&)>;

// Fourth-order central difference of f at x:
//   (8 (f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h.
// A power-of-two h keeps every probe point exact in float.
double central_difference(const std::function<double(float)>& f, float x, double h);

// central_difference along every element.
Tensor finite_diff_grad(const ScalarFn& f, const Tensor& x, double h);
// Same, restricted to the listed flat indices; returned in double precision.
std::vector<double> finite_diff_grad(const ScalarFn& f, const Tensor& x, double h,
                                     std::span<const std::int64_t> indices);

// sum(a * b) accumulated in double.
double weighted_sum(const Tensor& a, const Tensor& b);

}  // namespace rxm
