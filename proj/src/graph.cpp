#include "sketchhash/graph.hpp"

#include <sstream>

namespace sketchhash {

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "x" : "") << shape[i];
  out << ']';
  return out.str();
}

Var Graph::constant(Tensor value) {
  nodes_.push_back({std::move(value), {}, false, {}});
  return {this, nodes_.size() - 1};
}

Var Graph::variable(Tensor value) {
  nodes_.push_back({std::move(value), {}, true, {}});
  return {this, nodes_.size() - 1};
}

Var Graph::record(Tensor value, std::span<const Var> parents, Backward backward) {
  bool needs = false;
  for (const auto& p : parents) {
    check_owned(p);
    needs = needs || nodes_[p.id()].needs_grad;
  }
  nodes_.push_back({std::move(value), {}, needs, needs ? std::move(backward) : Backward{}});
  return {this, nodes_.size() - 1};
}

void Graph::check_owned(const Var& v) const {
  if (v.valid() && &v.graph() == this && v.id() < nodes_.size()) return;
  throw Error("Var does not belong to this graph");
}

Tensor Graph::grad(std::size_t id) const {
  const auto& node = nodes_.at(id);
  if (node.grad.size() == node.value.size() && node.grad.size() > 0) return node.grad;
  return Tensor(node.value.shape());
}

Tensor* Graph::grad_target(const Var& v) {
  auto& node = nodes_.at(v.id());
  if (!node.needs_grad) return nullptr;
  if (node.grad.size() != node.value.size() || node.grad.shape() != node.value.shape()) {
    node.grad = Tensor(node.value.shape());
  }
  return &node.grad;
}

void Graph::backward(const Var& output) {
  if (nodes_.empty()) throw Error("backward called before any forward computation");
  check_owned(output);
  if (differentiated_) throw Error("backward already ran on this graph");
  if (output.value().size() != 1) {
    throw ShapeError("backward needs a scalar output, got " + shape_string(output.shape()));
  }
  differentiated_ = true;
  Tensor* seed = grad_target(output);
  if (seed == nullptr) return;  // output does not depend on any variable
  seed->flat().setOnes();
  for (std::size_t id = output.id() + 1; id-- > 0;) {
    auto& node = nodes_[id];
    if (!node.backward || node.grad.size() == 0) continue;
    node.backward(*this, node.grad, node.value);
  }
}

Binding::Binding(Graph& graph, const Params& params, bool trainable) {
  for (const auto& [name, value] : params) {
    vars_.emplace(name, trainable ? graph.variable(value) : graph.constant(value));
  }
}

Var Binding::operator[](const std::string& name) const {
  const auto it = vars_.find(name);
  if (it == vars_.end()) throw Error("parameter '" + name + "' is not bound");
  return it->second;
}

Params Binding::gradients() const {
  Params out;
  for (const auto& [name, var] : vars_) out.emplace(name, var.grad());
  return out;
}

}  // namespace sketchhash
