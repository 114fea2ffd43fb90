#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ilaprop {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Extents of a [batch, channels, height, width] feature map.
struct Dims4 {
  std::size_t b = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t plane() const { return h * w; }
  std::size_t size() const { return b * c * h * w; }
  bool operator==(const Dims4&) const = default;
};

namespace detail {

// One value in the dynamic operation graph. Nodes created by differentiable
// operations keep their inputs alive and carry a closure that pushes the
// node's gradient into the inputs' gradients.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::string op;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
  bool interior = false;
  bool released = false;

  bool is_leaf() const { return !interior; }
  std::vector<double>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

/// Handle to a dense tensor taking part in reverse-mode differentiation.
///
/// Copies share the same storage; use clone() for a deep copy. Tensors are
/// single-owner for mutation: nothing here is synchronized.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t numel() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  /// Interprets the tensor as [B,C,H,W]; throws if the rank is not 4.
  Dims4 dims4() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t b, std::size_t c, std::size_t h, std::size_t w) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Same storage values, cut from the graph.
  Tensor detach() const;
  Tensor clone() const;

  const std::string& op_name() const;

  // Graph plumbing for operation implementations.
  static Tensor make_result(Shape shape, std::vector<double> value,
                            std::string op,
                            std::vector<Tensor> inputs,
                            std::function<void(detail::Node&)> backward);
  std::shared_ptr<detail::Node> node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  detail::Node& checked() const;
  std::shared_ptr<detail::Node> node_;
};

/// Nodes reachable from a scalar root in topological order (inputs first),
/// plus the leaves that will receive gradients. A graph can be replayed at
/// most once: backward() consumes it.
class OpGraph {
 public:
  static OpGraph from_root(const Tensor& root);

  const std::vector<std::shared_ptr<detail::Node>>& nodes() const { return nodes_; }
  std::vector<Tensor> leaves() const;
  const Tensor& root() const { return root_; }
  bool consumed() const { return consumed_; }

 private:
  friend void backward(OpGraph& graph, double seed);
  Tensor root_;
  std::vector<std::shared_ptr<detail::Node>> nodes_;
  bool consumed_ = false;
};

/// Accumulates d(root)/d(leaf) * seed into every requires_grad leaf.
/// Throws if the root is not a scalar or the graph was already replayed.
void backward(OpGraph& graph, double seed = 1.0);
void backward(const Tensor& root, double seed = 1.0);

void zero_grads(std::span<Tensor> tensors);

/// While alive, operations on this thread record no graph (evaluation mode).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool active();

 private:
  bool previous_;
};

}  // namespace ilaprop
