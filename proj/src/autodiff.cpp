#include "rxm/autodiff.hpp"

#include "rxm/error.hpp"

namespace rxm {

void Param::zero_grad() {
  if (grad.shape() != value.shape()) {
    grad = Tensor(value.shape());
  } else {
    grad.fill(0.0f);
  }
  has_grad = false;
}

Param& ParamSet::add(std::string name, ParamKind kind, Tensor value) {
  if (index_.contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  auto param = std::make_unique<Param>();
  param->name = name;
  param->kind = kind;
  param->grad = Tensor(value.shape());
  param->value = std::move(value);
  index_.emplace(std::move(name), params_.size());
  params_.push_back(std::move(param));
  return *params_.back();
}

Param* ParamSet::find(std::string_view name) {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : params_[it->second].get();
}

const Param* ParamSet::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : params_[it->second].get();
}

Param& ParamSet::get(std::string_view name) {
  Param* p = find(name);
  if (!p) throw UsageError("no parameter named '" + std::string(name) + "'");
  return *p;
}

const Param& ParamSet::get(std::string_view name) const {
  const Param* p = find(name);
  if (!p) throw UsageError("no parameter named '" + std::string(name) + "'");
  return *p;
}

std::int64_t ParamSet::scalar_count() const {
  std::int64_t total = 0;
  for (const auto& p : params_) total += p->value.numel();
  return total;
}

void ParamSet::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

Tensor& Node::grad_buffer() {
  if (grad.empty() && value.numel() > 0) grad = Tensor(value.shape());
  return grad;
}

Var Var::constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node), nullptr);
}

const Tensor& Var::value() const {
  if (!node_) throw UsageError("access to an empty Var");
  return node_->value;
}

Tensor Var::grad() const {
  if (!node_) throw UsageError("access to an empty Var");
  if (node_->grad.empty()) return Tensor(node_->value.shape());
  return node_->grad;
}

Tensor* Var::grad_sink() const {
  if (!node_ || !node_->requires_grad) return nullptr;
  return &node_->grad_buffer();
}

Var Tape::leaf(Param& param) {
  if (consumed_) throw UsageError("tape already consumed by backward");
  auto node = std::make_shared<Node>();
  node->value = param.value;
  node->requires_grad = true;
  node->param = &param;
  nodes_.push_back(node);
  return Var(std::move(node), this);
}

Var Tape::input(Tensor value, bool requires_grad) {
  if (consumed_) throw UsageError("tape already consumed by backward");
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  if (requires_grad) nodes_.push_back(node);
  return Var(std::move(node), requires_grad ? this : nullptr);
}

Var Tape::record(Tensor value, std::function<void(const Tensor&)> backward) {
  if (consumed_) throw UsageError("tape already consumed by backward");
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  node->backward = std::move(backward);
  nodes_.push_back(node);
  return Var(std::move(node), this);
}

void Tape::backward(const Var& output, const Tensor& seed) {
  if (consumed_) throw UsageError("backward called twice on the same tape");
  if (output.tape() != this) throw UsageError("backward: output was not recorded on this tape");
  require_same_shape(seed.shape(), output.shape(), "backward seed");
  consumed_ = true;
  output.node_->grad_buffer().add_(seed);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& node = **it;
    if (node.grad.empty()) continue;
    if (node.backward) node.backward(node.grad);
    if (node.param) {
      node.param->grad.add_(node.grad);
      node.param->has_grad = true;
    }
  }
  for (auto& node : nodes_) node->backward = nullptr;
  nodes_.clear();
}

namespace {

Tape* common_tape(std::span<const Var* const> inputs) {
  Tape* tape = nullptr;
  for (const Var* v : inputs) {
    if (!v->requires_grad()) continue;
    if (tape && v->tape() != tape) throw UsageError("op mixes values from different tapes");
    tape = v->tape();
  }
  return tape;
}

}  // namespace

Var derive(Tensor value, std::initializer_list<const Var*> inputs,
           std::function<void(const Tensor&)> backward) {
  Tape* tape = common_tape(std::span<const Var* const>(inputs.begin(), inputs.size()));
  if (!tape) return Var::constant(std::move(value));
  return tape->record(std::move(value), std::move(backward));
}

Var derive(Tensor value, std::span<const Var> inputs, std::function<void(const Tensor&)> backward) {
  std::vector<const Var*> ptrs;
  ptrs.reserve(inputs.size());
  for (const Var& v : inputs) ptrs.push_back(&v);
  Tape* tape = common_tape(ptrs);
  if (!tape) return Var::constant(std::move(value));
  return tape->record(std::move(value), std::move(backward));
}

Var ParamBinder::operator()(Param& param) {
  auto it = cache_.find(&param);
  if (it != cache_.end()) return it->second;
  Var v = tape_ ? tape_->leaf(param) : Var::constant(param.value);
  cache_.emplace(&param, v);
  return v;
}

Tensor finite_diff_grad(const ScalarFn& f, const Tensor& x, double h) {
  std::vector<std::int64_t> all(static_cast<std::size_t>(x.numel()));
  for (std::int64_t i = 0; i < x.numel(); ++i) all[static_cast<std::size_t>(i)] = i;
  const auto g = finite_diff_grad(f, x, h, all);
  Tensor out(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) out[i] = static_cast<float>(g[static_cast<std::size_t>(i)]);
  return out;
}

double central_difference(const std::function<double(float)>& f, float x, double h) {
  // Offsets are taken as actually represented in float.
  const float p1 = static_cast<float>(x + h), m1 = static_cast<float>(x - h);
  const float p2 = static_cast<float>(x + 2 * h), m2 = static_cast<float>(x - 2 * h);
  const double near = (f(p1) - f(m1)) / (static_cast<double>(p1) - m1);
  const double far = (f(p2) - f(m2)) / (static_cast<double>(p2) - m2);
  return (4.0 * near - far) / 3.0;
}

std::vector<double> finite_diff_grad(const ScalarFn& f, const Tensor& x, double h,
                                     std::span<const std::int64_t> indices) {
  std::vector<double> grad;
  grad.reserve(indices.size());
  Tensor probe = x;
  for (std::int64_t i : indices) {
    const float original = probe[i];
    grad.push_back(central_difference(
        [&](float v) {
          probe[i] = v;
          return f(probe);
        },
        original, h));
    probe[i] = original;
  }
  return grad;
}

double weighted_sum(const Tensor& a, const Tensor& b) {
  require_same_shape(a.shape(), b.shape(), "weighted_sum");
  double acc = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) acc += static_cast<double>(a[i]) * b[i];
  return acc;
}

}  // namespace rxm
