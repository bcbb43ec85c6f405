#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "sketchhash/tensor.hpp"

namespace sketchhash {

class Graph;

/// Handle to a node recorded on a Graph.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  bool valid() const { return graph_ != nullptr; }
  Graph& graph() const;
  std::size_t id() const { return id_; }

  const Tensor& value() const;
  Tensor grad() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Tape for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the tape is already a
/// topological order; backward() walks it once from the output down.
class Graph {
 public:
  /// Receives the gradient and forward value of the node being processed and
  /// accumulates into its parents via grad_target().
  using Backward = std::function<void(Graph&, const Tensor& grad, const Tensor& value)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);
  Var record(Tensor value, std::span<const Var> parents, Backward backward);
  Var record(Tensor value, std::initializer_list<Var> parents, Backward backward) {
    return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
                  std::move(backward));
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  /// Gradient after backward(); a zero tensor for nodes gradient never reached.
  Tensor grad(std::size_t id) const;
  bool needs_grad(const Var& v) const { return nodes_.at(v.id()).needs_grad; }

  /// Gradient buffer of `v` to accumulate into, or nullptr when `v` does not
  /// lead to any variable.
  Tensor* grad_target(const Var& v);

  /// Seeds d(output)/d(output) = 1 and propagates. `output` must be a scalar
  /// node of this graph; a graph can be differentiated once.
  void backward(const Var& output);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    Backward backward;
  };

  void check_owned(const Var& v) const;

  std::vector<Node> nodes_;
  bool differentiated_ = false;
};

inline Graph& Var::graph() const {
  if (graph_ == nullptr) throw Error("use of an unbound Var");
  return *graph_;
}
inline const Tensor& Var::value() const { return graph().value(id_); }
inline Tensor Var::grad() const { return graph().grad(id_); }

/// Named parameter tensors; ordered so iteration is deterministic.
using Params = std::map<std::string, Tensor>;

/// Parameters bound as variables of one graph.
class Binding {
 public:
  /// Binds every tensor as a variable, or as a constant when `trainable` is
  /// false (inference: no gradient buffers, no saved backward state).
  Binding(Graph& graph, const Params& params, bool trainable = true);

  Var operator[](const std::string& name) const;
  bool contains(const std::string& name) const { return vars_.count(name) != 0; }

  /// Gradient of every bound parameter; zeros where backward never reached.
  Params gradients() const;

 private:
  std::map<std::string, Var> vars_;
};

}  // namespace sketchhash
