#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dpt/numerics/array.hpp"

namespace dpt::ad {

// One value in a per-step computation graph. Graphs are acyclic by
// construction: a node only references nodes that existed before it.
template <typename T>
struct Node {
  Array<T> value;
  Array<T> grad;  // allocated on first accumulation
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  bool requires_grad = false;

  Array<T>& grad_buffer() {
    if (grad.size() != value.size()) grad = Array<T>(value.shape());
    return grad;
  }
  bool has_grad() const { return grad.size() == value.size() && !value.empty(); }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var constant(Array<T> value);
  static Var leaf(Array<T> value, bool requires_grad);

  bool defined() const { return node_ != nullptr; }
  const Array<T>& value() const { return node_->value; }
  // Only for leaves (parameters, grad-check perturbation).
  Array<T>& mutable_value() { return node_->value; }
  const Array<T>& grad() const { return node_->grad; }
  Array<T>& grad_buffer() { return node_->grad_buffer(); }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(int axis) const { return node_->value.dim(axis); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const std::shared_ptr<Node<T>>& node() const { return node_; }

  // Scalar value of a size-1 array.
  T item() const { return node_->value[0]; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Evaluation scopes disable graph recording entirely.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Builds a result node. The backward closure receives the result node and
// accumulates into `self.parents[i]->grad_buffer()` for parents that require
// gradients.
template <typename T>
Var<T> make_result(Array<T> value, std::vector<Var<T>> parents,
                   std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  bool any = false;
  if (grad_enabled()) {
    for (const auto& p : parents) any = any || p.requires_grad();
  }
  if (any) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.node());
    node->backward_fn = std::move(backward);
  }
  return Var<T>(std::move(node));
}

// Reverse-mode sweep from a scalar loss. Throws UsageError if `loss` is not
// a single value. Interior gradients are released once propagated, so only
// leaves hold gradients afterwards.
template <typename T>
void backward(const Var<T>& loss);

template <typename T>
struct Parameter {
  std::string name;
  Var<T> var;
  bool trainable = true;
};

// Ordered, uniquely named parameter registry.
template <typename T>
class ParameterSet {
 public:
  Var<T> add(const std::string& name, Array<T> init, bool trainable = true);
  const Parameter<T>& get(const std::string& name) const;
  Parameter<T>& get(const std::string& name);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<Parameter<T>>& items() { return items_; }
  const std::vector<Parameter<T>>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  std::size_t scalar_count() const;

  // Allocates and zeroes every gradient buffer, so parameters the loss does
  // not reach report zero gradient after backward.
  void zero_grad();

 private:
  std::vector<Parameter<T>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

extern template class Var<float>;
extern template class Var<double>;
extern template void backward<float>(const Var<float>&);
extern template void backward<double>(const Var<double>&);
extern template class ParameterSet<float>;
extern template class ParameterSet<double>;

}  // namespace dpt::ad
