#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace deepap::grad {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

struct Node;

// Receives the gradient of the root w.r.t. a node's output and accumulates
// into each parent's gradient buffer. Entries of `parent_grads` are null for
// parents that do not require a gradient.
using BackwardFn = std::function<void(const Node& self, std::span<const double> grad_out,
                                      std::span<std::vector<double>*> parent_grads)>;

// One recorded value in a define-by-run graph. Parents are held by shared
// ownership so a root keeps its whole graph alive; there are no back links.
struct Node {
  const char* op = "leaf";
  Shape shape;
  std::vector<double> value;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
};

// Shared handle to a graph node. Copies alias the same storage; deep copies go
// through clone().
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor parameter(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->value.size(); }
  std::span<const double> values() const { return node_->value; }
  // Only leaves may be written in place; recorded results are immutable.
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t flat_index) const { return node_->value.at(flat_index); }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->parents.empty() && !node_->backward; }
  const char* op() const { return node_->op; }

  // Independent leaf with copied values and the same requires_grad flag.
  Tensor clone() const;
  // Leaf that shares nothing with the graph; never requires a gradient.
  Tensor detach() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Gradients of a scalar root keyed by leaf identity.
class GradientMap {
 public:
  // Zero-filled when the leaf did not participate in the root.
  std::vector<double> of(const Tensor& leaf) const;
  bool contains(const Tensor& leaf) const { return grads_.count(leaf.node().get()) > 0; }
  std::size_t size() const { return grads_.size(); }

 private:
  friend GradientMap backward(const Tensor& root);
  std::unordered_map<const Node*, std::vector<double>> grads_;
};

// Reverse-mode sweep from a scalar root over every node that requires a
// gradient. Each node is visited once; a leaf reached along several paths
// receives the sum of the path contributions.
GradientMap backward(const Tensor& root);

// Convenience wrapper returning gradients for `leaves` in order.
std::vector<std::vector<double>> gradients(const Tensor& root, std::span<const Tensor> leaves);

// Construct a recorded node. Throws NumericError naming `op` when any output
// value is non-finite. When no parent requires a gradient the parents and the
// backward closure are dropped.
Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                   std::vector<Tensor> parents, BackwardFn backward);

}  // namespace deepap::grad
