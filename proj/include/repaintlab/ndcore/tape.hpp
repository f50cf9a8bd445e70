#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <type_traits>
#include <vector>

#include "repaintlab/ndcore/ndarray.hpp"

namespace repaintlab::nd {

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const NdArray<T>& value() const { return tape->value(*this); }
  const Shape& shape() const { return value().shape(); }
};

template <typename T>
using GradientMap = std::map<std::string, NdArray<T>>;

/// Records primitive operations in evaluation order so that the gradient of a
/// scalar loss can be propagated back to every parameter node.
///
/// A tape built with `record = false` only evaluates; no backward closures or
/// saved activations are kept.
template <typename T>
class Tape {
 public:
  /// Receives the gradient flowing into a node's output.
  using Backward = std::function<void(Tape&, const NdArray<T>&)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return record_; }

  Var<T> constant(NdArray<T> value) {
    Node node;
    node.owned = std::move(value);
    return add(std::move(node));
  }

  /// Binds an externally owned parameter. The array must outlive the tape.
  Var<T> parameter(const std::string& name, const NdArray<T>& value) {
    Node node;
    node.external = &value;
    node.requires_grad = record_;
    node.name = name;
    const auto v = add(std::move(node));
    param_ids_[name] = v.id;
    return v;
  }

  /// Records the result of an op. `backward` is dropped when no input needs a gradient.
  Var<T> push(NdArray<T> value, std::initializer_list<Var<T>> inputs, Backward backward) {
    Node node;
    node.owned = std::move(value);
    if (record_) {
      for (const auto& in : inputs) node.requires_grad = node.requires_grad || nodes_[in.id].requires_grad;
      if (node.requires_grad) node.backward = std::move(backward);
    }
    return add(std::move(node));
  }

  bool requires_grad(Var<T> v) const { return nodes_.at(v.id).requires_grad; }

  const NdArray<T>& value(Var<T> v) const {
    const auto& node = nodes_.at(v.id);
    return node.external ? *node.external : node.owned;
  }

  /// Adds `grad` into the gradient slot of `v` (fan-out accumulates).
  void accumulate(Var<T> v, const NdArray<T>& grad) {
    auto& node = nodes_[v.id];
    if (!node.requires_grad) return;
    if (node.grad.empty()) {
      node.grad = grad;
      return;
    }
    T* dst = node.grad.data();
    const T* src = grad.data();
    for (std::size_t i = 0; i < node.grad.size(); ++i) dst[i] += src[i];
  }
  void accumulate(Var<T> v, NdArray<T>&& grad) {
    auto& node = nodes_[v.id];
    if (!node.requires_grad) return;
    if (node.grad.empty()) {
      node.grad = std::move(grad);
      return;
    }
    accumulate(v, static_cast<const NdArray<T>&>(grad));
  }

  /// Runs reverse accumulation from a scalar loss.
  void backward(Var<T> loss) {
    if (!record_) throw Error("backward: tape was created without gradient recording");
    const auto& lv = value(loss);
    if (lv.size() != 1) throw ShapeError("backward", "loss", "loss must be scalar, got " + shape_str(lv.shape()));
    for (auto& node : nodes_) node.grad = NdArray<T>();
    nodes_[loss.id].grad = NdArray<T>(lv.shape(), T(1));
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& node = nodes_[i];
      if (!node.backward || node.grad.empty()) continue;
      NdArray<T> g = std::move(node.grad);
      node.backward(*this, g);
      node.grad = std::move(g);
      if (!node.external) node.backward = nullptr;  // release saved activations
    }
  }

  /// Gradient of the last backward() for `v`; zeros if no gradient reached it.
  NdArray<T> grad(Var<T> v) const {
    const auto& node = nodes_.at(v.id);
    if (node.grad.empty()) return NdArray<T>(value(v).shape());
    return node.grad;
  }

  bool has_parameter(const std::string& name) const { return param_ids_.count(name) != 0; }
  Var<T> parameter_var(const std::string& name) const {
    const auto it = param_ids_.find(name);
    if (it == param_ids_.end()) throw Error("parameter '" + name + "' is not on the tape");
    return Var<T>{const_cast<Tape*>(this), it->second};
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    NdArray<T> owned;
    const NdArray<T>* external = nullptr;
    NdArray<T> grad;
    Backward backward;
    bool requires_grad = false;
    std::string name;
  };

  Var<T> add(Node node) {
    nodes_.push_back(std::move(node));
    return Var<T>{this, nodes_.size() - 1};
  }

  bool record_;
  std::vector<Node> nodes_;
  std::map<std::string, std::size_t> param_ids_;
};

/// Gradient of a scalar loss with respect to each named parameter.
/// Throws if the loss is not scalar or a name was never bound on the tape.
template <typename T>
GradientMap<T> backprop(Var<T> loss, const std::vector<std::string>& params) {
  auto& tape = *loss.tape;
  std::vector<Var<T>> vars;
  vars.reserve(params.size());
  for (const auto& name : params) vars.push_back(tape.parameter_var(name));
  tape.backward(loss);
  GradientMap<T> out;
  for (std::size_t i = 0; i < params.size(); ++i) out.emplace(params[i], tape.grad(vars[i]));
  return out;
}

namespace ops {

template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, T factor);
/// x [N,C,H,W] + e [N,C] broadcast over the spatial axes.
template <typename T> Var<T> add_channel(Var<T> x, Var<T> e);
template <typename T> Var<T> silu(Var<T> x);
template <typename T> Var<T> sigmoid(Var<T> x);
template <typename T> Var<T> square(Var<T> x);
template <typename T> Var<T> sum(Var<T> x);
template <typename T> Var<T> mean(Var<T> x);
/// mean((a - target)^2) against a constant target.
template <typename T> Var<T> mse(Var<T> a, const NdArray<T>& target);
/// Elementwise f(x) where the caller supplies f(x) and f'(x).
template <typename T> Var<T> pointwise(Var<T> x, NdArray<T> values, NdArray<T> derivatives);

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> kernel, std::type_identity_t<const Var<T>*> bias, std::size_t stride, std::size_t padding);
template <typename T>
Var<T> group_norm(Var<T> x, std::size_t groups, Var<T> gain, Var<T> bias, T eps);
template <typename T>
Var<T> self_attention(Var<T> x, Var<T> qkv_weight, Var<T> qkv_bias, Var<T> out_weight, Var<T> out_bias,
                      std::size_t heads);
template <typename T> Var<T> linear(Var<T> x, Var<T> weight, std::type_identity_t<const Var<T>*> bias);

template <typename T> Var<T> concat_channels(Var<T> a, Var<T> b);
template <typename T> Var<T> channel_slice(Var<T> x, std::size_t begin, std::size_t count);
template <typename T> Var<T> upsample_nearest2x(Var<T> x);
/// [N,C,H,W] -> [N,C]
template <typename T> Var<T> global_avg_pool(Var<T> x);
/// Mean softmax cross-entropy of logits [N,K] against integer labels.
template <typename T> Var<T> cross_entropy(Var<T> logits, const std::vector<int>& labels);

}  // namespace ops

}  // namespace repaintlab::nd
