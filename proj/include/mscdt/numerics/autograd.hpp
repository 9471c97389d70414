#pragma once

#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mscdt/numerics/tensor.hpp"

namespace mscdt {

template <typename T>
class Parameter;

/// One value in the computation graph. Interior nodes own a backward
/// closure that pushes `grad` into their inputs.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
  Parameter<T>* parameter = nullptr;
  bool requires_grad = false;
  std::string_view op = "leaf";

  bool has_grad() const {
    return grad.size() == value.size() && grad.shape() == value.shape();
  }
  /// Gradient buffer, zero-allocated on first touch.
  Tensor<T>& grad_buffer() {
    if (!has_grad()) grad = Tensor<T>(value.shape());
    return grad;
  }
  void accumulate(const Tensor<T>& g) {
    auto& buf = grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
  }
};

/// Handle to a graph node. Cheap to copy.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var constant(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    return Var(std::move(n));
  }
  /// A gradient-carrying leaf not tied to a Parameter (tests, probes).
  static Var leaf(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = true;
    return Var(std::move(n));
  }

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  /// Gradient after backward(); zeros if the node was never reached.
  const Tensor<T>& grad() const { return node_->grad_buffer(); }
  Node<T>& node() const { return *node_; }
  const std::shared_ptr<Node<T>>& ptr() const noexcept { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Named trainable tensor. `var()` hands out a fresh leaf holding a copy of
/// the current value; backward() routes the leaf gradient back here.
template <typename T>
class Parameter {
 public:
  Parameter(std::string name, Tensor<T> init)
      : value(std::move(init)), grad(value.shape()), name_(std::move(name)) {}

  const std::string& name() const noexcept { return name_; }
  void zero_grad() { grad.fill(T{0}); }

  Var<T> var() {
    auto n = std::make_shared<Node<T>>();
    n->value = value;
    n->requires_grad = true;
    n->parameter = this;
    return Var<T>(std::move(n));
  }

  Tensor<T> value;
  Tensor<T> grad;

 private:
  std::string name_;
};

/// Per-graph gradient accumulator used when several graphs run
/// concurrently; merged into Parameter::grad in a caller-fixed order.
template <typename T>
class Gradients {
 public:
  void add(Parameter<T>* p, const Tensor<T>& g) {
    auto [it, inserted] = grads_.try_emplace(p, g);
    if (!inserted) {
      auto& dst = it->second;
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }
  }
  void apply() const {
    for (const auto& [p, g] : grads_) {
      for (std::size_t i = 0; i < g.size(); ++i) p->grad[i] += g[i];
    }
  }
  const Tensor<T>* find(const Parameter<T>* p) const {
    auto it = grads_.find(const_cast<Parameter<T>*>(p));
    return it == grads_.end() ? nullptr : &it->second;
  }

 private:
  std::unordered_map<Parameter<T>*, Tensor<T>> grads_;
};

/// Ordered, name-unique collection of parameters. Addresses are stable for
/// the store's lifetime.
template <typename T>
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) noexcept = default;
  ParameterStore& operator=(ParameterStore&&) noexcept = default;

  Parameter<T>* add(std::string name, Tensor<T> init) {
    if (index_.contains(name)) {
      throw std::invalid_argument("duplicate parameter name: " + name);
    }
    index_.emplace(name, params_.size());
    params_.push_back(
        std::make_unique<Parameter<T>>(std::move(name), std::move(init)));
    return params_.back().get();
  }

  Parameter<T>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
  }

  std::size_t size() const noexcept { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) const { return *params_[i]; }

  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }
  std::size_t element_count() const {
    std::size_t n = 0;
    for (auto& p : params_) n += p->value.size();
    return n;
  }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Reverse sweep from a scalar root. Parameter leaves accumulate into
/// `sink` when given, otherwise straight into Parameter::grad.
template <typename T>
void backward(const Var<T>& root, Gradients<T>* sink = nullptr);

/// Builds an op result; rejects non-finite outputs and records the
/// backward closure only when some input carries gradient.
template <typename T>
Var<T> make_op(std::string_view op, Tensor<T> value,
               std::vector<Var<T>> inputs,
               std::function<void(Node<T>&)> backward_fn);

}  // namespace mscdt
