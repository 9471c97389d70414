#include "mscdt/numerics/autograd.hpp"

#include <sstream>
#include <unordered_set>

namespace mscdt {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
Var<T> make_op(std::string_view op, Tensor<T> value,
               std::vector<Var<T>> inputs,
               std::function<void(Node<T>&)> backward_fn) {
  if (!value.all_finite()) {
    throw NonFiniteError("non-finite value produced by op '" +
                         std::string(op) + "' with shape " +
                         shape_string(value.shape()));
  }
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->op = op;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (any) {
    n->requires_grad = true;
    n->inputs.reserve(inputs.size());
    for (auto& in : inputs) n->inputs.push_back(in.ptr());
    n->backward = std::move(backward_fn);
  }
  return Var<T>(std::move(n));
}

template <typename T>
void backward(const Var<T>& root, Gradients<T>* sink) {
  if (!root.requires_grad()) return;
  if (root.value().size() != 1) {
    throw ShapeError("backward() needs a scalar root, got " +
                     shape_string(root.shape()));
  }

  // Iterative post-order DFS; reversed it is a valid reverse-mode schedule.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.ptr().get(), 0);
  seen.insert(root.ptr().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node().grad_buffer()[0] += T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>& node = **it;
    if (!node.has_grad()) continue;
    if (node.backward) node.backward(node);
    if (node.parameter != nullptr) {
      if (sink != nullptr) {
        sink->add(node.parameter, node.grad);
      } else {
        auto& dst = node.parameter->grad;
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += node.grad[i];
      }
    }
  }
}

template Var<float> make_op(std::string_view, Tensor<float>,
                            std::vector<Var<float>>,
                            std::function<void(Node<float>&)>);
template Var<double> make_op(std::string_view, Tensor<double>,
                             std::vector<Var<double>>,
                             std::function<void(Node<double>&)>);
template void backward(const Var<float>&, Gradients<float>*);
template void backward(const Var<double>&, Gradients<double>*);

}  // namespace mscdt
