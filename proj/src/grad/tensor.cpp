#include "deepap/grad/tensor.h"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "deepap/errors.h"

namespace deepap::grad {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

std::shared_ptr<Node> make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  for (auto e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape));
  }
  if (values.size() != shape_size(shape)) {
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                     shape_string(shape));
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError("non-finite value in leaf tensor");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return node;
}

}  // namespace

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  return Tensor(make_leaf(std::move(shape), std::move(values), false));
}

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  return Tensor(make_leaf(std::move(shape), std::move(values), true));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> v(shape_size(shape), value);
  return Tensor(make_leaf(std::move(shape), std::move(v), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(make_leaf({1}, {value}, requires_grad));
}

std::span<double> Tensor::mutable_values() {
  if (!is_leaf()) throw std::logic_error(std::string("cannot mutate recorded result of ") + op());
  return node_->value;
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

Tensor Tensor::clone() const {
  return Tensor(make_leaf(node_->shape, node_->value, node_->requires_grad));
}

Tensor Tensor::detach() const { return Tensor(make_leaf(node_->shape, node_->value, false)); }

std::vector<double> GradientMap::of(const Tensor& leaf) const {
  auto it = grads_.find(leaf.node().get());
  if (it == grads_.end()) return std::vector<double>(leaf.size(), 0.0);
  return it->second;
}

GradientMap backward(const Tensor& root) {
  if (!root.defined() || root.size() != 1) {
    throw ShapeError("backward requires a scalar root, got " +
                     (root.defined() ? shape_string(root.shape()) : std::string("undefined")));
  }
  GradientMap result;
  if (!root.requires_grad()) return result;

  // Iterative post-order DFS gives a topological order without recursion
  // depth limits on long recurrent graphs.
  std::vector<Node*> order;
  std::unordered_set<const Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  std::unordered_map<const Node*, std::vector<double>> grads;
  grads[root.node().get()] = {1.0};
  std::vector<std::vector<double>*> parent_grads;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    auto found = grads.find(node);
    if (found == grads.end()) continue;
    if (node->parents.empty()) {
      result.grads_.emplace(node, std::move(found->second));
      grads.erase(found);
      continue;
    }
    parent_grads.assign(node->parents.size(), nullptr);
    for (std::size_t p = 0; p < node->parents.size(); ++p) {
      Node* parent = node->parents[p].get();
      if (!parent->requires_grad) continue;
      auto& slot = grads[parent];
      if (slot.empty()) slot.assign(parent->value.size(), 0.0);
      parent_grads[p] = &slot;
    }
    // The map may rehash while slots are created above, so look up again.
    const std::vector<double> grad_out = std::move(grads[node]);
    grads.erase(node);
    // Pointers into `grads` stay valid: no insertions happen during the call.
    node->backward(*node, grad_out, parent_grads);
  }
  return result;
}

std::vector<std::vector<double>> gradients(const Tensor& root, std::span<const Tensor> leaves) {
  const GradientMap map = backward(root);
  std::vector<std::vector<double>> out;
  out.reserve(leaves.size());
  for (const auto& leaf : leaves) out.push_back(map.of(leaf));
  return out;
}

Tensor make_result(const char* op, Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                   BackwardFn backward_fn) {
  for (double v : value) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
  }
  auto node = std::make_shared<Node>();
  node->op = op;
  node->shape = std::move(shape);
  node->value = std::move(value);
  const bool any = std::any_of(parents.begin(), parents.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (any) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

}  // namespace deepap::grad
