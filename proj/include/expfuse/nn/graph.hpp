#pragma once

#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "expfuse/nn/tensor.hpp"

namespace expfuse::nn {

template <class T>
struct Parameter {
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;
};

// Named parameters of one model. Node-based storage keeps Parameter addresses
// stable across insertions and moves, so layers may hold raw pointers.
template <class T>
class ParamStore {
 public:
  using Map = std::map<std::string, Parameter<T>>;

  Parameter<T>& add(const std::string& name, Shape shape) {
    auto [it, inserted] = params_.try_emplace(name);
    require(inserted, "duplicate parameter name: " + name);
    it->second.value = Tensor<T>(shape);
    it->second.grad = Tensor<T>(shape);
    return it->second;
  }

  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  Parameter<T>& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ValidationError("unknown parameter: " + name);
    return it->second;
  }
  const Parameter<T>& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ValidationError("unknown parameter: " + name);
    return it->second;
  }

  typename Map::iterator begin() { return params_.begin(); }
  typename Map::iterator end() { return params_.end(); }
  typename Map::const_iterator begin() const { return params_.begin(); }
  typename Map::const_iterator end() const { return params_.end(); }
  std::size_t size() const noexcept { return params_.size(); }

  std::size_t numel() const {
    std::size_t total = 0;
    for (const auto& [_, p] : params_) total += p.value.size();
    return total;
  }

  void zero_grad() {
    for (auto& [_, p] : params_) p.grad.fill(T(0));
  }

  void set_trainable(bool trainable) {
    for (auto& [_, p] : params_) p.trainable = trainable;
  }

 private:
  Map params_;
};

struct Var {
  int id = -1;
  bool valid() const noexcept { return id >= 0; }
};

// Define-by-run reverse-mode tape. Nodes are appended in evaluation order, so
// reverse insertion order is a valid topological order for backward().
// Gradients of parameter nodes accumulate directly into Parameter::grad.
template <class T>
class Graph {
 public:
  using Backward = std::function<void(Graph&, int self)>;

  Graph() = default;
  // With grad_enabled=false no node records a backward closure (inference).
  explicit Graph(bool grad_enabled) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor<T> value) { return push_leaf(std::move(value), false); }

  // Leaf that collects a gradient (used for inputs under gradient checks).
  Var input(Tensor<T> value) { return push_leaf(std::move(value), true); }

  Var param(Parameter<T>& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var{it->second};
    Node node;
    node.param = &p;
    node.requires_grad = p.trainable && grad_enabled_;
    nodes_.push_back(std::move(node));
    const int id = static_cast<int>(nodes_.size()) - 1;
    param_nodes_[&p] = id;
    return Var{id};
  }

  const Tensor<T>& value(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.param ? n.param->value : n.value;
  }
  const Shape& shape(Var v) const { return value(v).shape(); }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  T item(Var v) const {
    const auto& t = value(v);
    require(t.size() == 1, "item(): tensor is not a scalar");
    return t[0];
  }

  // Gradient of a non-parameter node after backward(); empty if it received none.
  const Tensor<T>& grad(Var v) const { return nodes_.at(v.id).grad; }

  // Mutable gradient buffer, zero-allocated on first use.
  Tensor<T>& grad_buffer(Var v) {
    Node& n = nodes_.at(v.id);
    Tensor<T>& g = n.param ? n.param->grad : n.grad;
    const Shape& s = n.param ? n.param->value.shape() : n.value.shape();
    if (g.shape() != s) g = Tensor<T>(s);
    return g;
  }

  Var push(Tensor<T> value, std::initializer_list<Var> inputs, Backward backward) {
    bool needs = false;
    for (Var in : inputs)
      if (in.valid()) needs = needs || nodes_.at(in.id).requires_grad;
    Node node;
    node.value = std::move(value);
    node.requires_grad = needs;
    if (needs) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  void backward(Var loss) {
    require(value(loss).size() == 1, "backward() needs a scalar loss");
    if (!requires_grad(loss)) return;
    grad_buffer(loss).fill(T(1));
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
      n.backward(*this, i);
    }
  }

  std::size_t node_count() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Parameter<T>* param = nullptr;
    Tensor<T> grad;
    bool requires_grad = false;
    Backward backward;
  };

  Var push_leaf(Tensor<T> value, bool requires_grad) {
    Node node;
    node.value = std::move(value);
    node.requires_grad = requires_grad && grad_enabled_;
    nodes_.push_back(std::move(node));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  bool grad_enabled_ = true;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<T>*, int> param_nodes_;
};

}  // namespace expfuse::nn
