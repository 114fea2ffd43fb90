#include "ilaprop/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace ilaprop {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

thread_local bool no_grad_active = false;

std::shared_ptr<detail::Node> new_node(Shape shape, std::vector<double> value,
                                       bool requires_grad) {
  if (numel(shape) != value.size()) {
    throw std::invalid_argument("tensor data length " + std::to_string(value.size()) +
                                " does not match shape " + to_string(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  node->op = "leaf";
  return node;
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = ilaprop::numel(shape);
  return Tensor(new_node(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  return Tensor(new_node(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(new_node({1}, {value}, requires_grad));
}

detail::Node& Tensor::checked() const {
  if (!node_) throw std::logic_error("use of an undefined tensor");
  return *node_;
}

const Shape& Tensor::shape() const { return checked().shape; }
std::size_t Tensor::numel() const { return checked().value.size(); }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw std::out_of_range("axis " + std::to_string(axis) + " out of range for shape " +
                            to_string(s));
  }
  return s[axis];
}

Dims4 Tensor::dims4() const {
  const auto& s = shape();
  if (s.size() != 4) {
    throw std::invalid_argument("expected a [B,C,H,W] tensor, got shape " + to_string(s));
  }
  return {s[0], s[1], s[2], s[3]};
}

std::span<const double> Tensor::data() const { return checked().value; }
std::span<double> Tensor::mutable_data() { return checked().value; }

double Tensor::item() const {
  const auto& n = checked();
  if (n.value.size() != 1) {
    throw std::invalid_argument("item() on a tensor of shape " + to_string(n.shape));
  }
  return n.value[0];
}

double Tensor::at(std::size_t b, std::size_t c, std::size_t h, std::size_t w) const {
  auto d = dims4();
  return checked().value[((b * d.c + c) * d.h + h) * d.w + w];
}

bool Tensor::requires_grad() const { return checked().requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  auto& n = checked();
  if (!n.is_leaf()) throw std::logic_error("requires_grad can only be set on leaves");
  n.requires_grad = flag;
}

bool Tensor::has_grad() const {
  const auto& n = checked();
  return n.grad.size() == n.value.size() && !n.value.empty();
}

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw std::logic_error("tensor has no gradient");
  return checked().grad;
}

std::span<double> Tensor::mutable_grad() { return checked().ensure_grad(); }

void Tensor::zero_grad() {
  auto& n = checked();
  if (!n.grad.empty()) std::fill(n.grad.begin(), n.grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  const auto& n = checked();
  return Tensor(new_node(n.shape, n.value, false));
}

Tensor Tensor::clone() const {
  const auto& n = checked();
  auto copy = new_node(n.shape, n.value, n.requires_grad && n.is_leaf());
  return Tensor(copy);
}

const std::string& Tensor::op_name() const { return checked().op; }

Tensor Tensor::make_result(Shape shape, std::vector<double> value, std::string op,
                           std::vector<Tensor> inputs,
                           std::function<void(detail::Node&)> backward_fn) {
  bool any_grad = false;
  if (!no_grad_active) {
    for (const auto& t : inputs) any_grad = any_grad || t.requires_grad();
  }
  auto node = new_node(std::move(shape), std::move(value), any_grad);
  node->op = std::move(op);
  if (any_grad) {
    for (auto& t : inputs) {
      if (t.checked().released) {
        throw std::logic_error("operation '" + node->op +
                               "' consumes a tensor whose graph was already replayed");
      }
      node->inputs.push_back(t.node_);
    }
    node->backward = std::move(backward_fn);
    node->interior = true;
  }
  return Tensor(node);
}

OpGraph OpGraph::from_root(const Tensor& root) {
  OpGraph g;
  g.root_ = root;
  auto start = root.node();
  if (!start) throw std::logic_error("backward on an undefined tensor");

  // Iterative post-order DFS.
  std::unordered_set<const detail::Node*> seen;
  std::vector<std::pair<std::shared_ptr<detail::Node>, std::size_t>> stack;
  stack.emplace_back(start, 0);
  seen.insert(start.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (node->released) {
      throw std::logic_error("graph through '" + node->op + "' was already replayed");
    }
    if (next < node->inputs.size()) {
      auto child = node->inputs[next++];
      if (child->requires_grad && seen.insert(child.get()).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      g.nodes_.push_back(node);
      stack.pop_back();
    }
  }
  return g;
}

std::vector<Tensor> OpGraph::leaves() const {
  std::vector<Tensor> out;
  for (const auto& n : nodes_) {
    if (n->is_leaf() && n->requires_grad) out.emplace_back(n);
  }
  return out;
}

void backward(OpGraph& graph, double seed) {
  if (graph.consumed_) throw std::logic_error("backward replayed on a consumed graph");
  auto root = graph.root_.node();
  if (root->value.size() != 1) {
    throw std::invalid_argument("backward requires a scalar root, got shape " +
                                to_string(root->shape));
  }
  if (!root->requires_grad) {
    graph.consumed_ = true;
    return;
  }
  for (auto& n : graph.nodes_) {
    if (!n->is_leaf()) n->grad.assign(n->value.size(), 0.0);
  }
  root->ensure_grad()[0] += seed;
  for (auto it = graph.nodes_.rbegin(); it != graph.nodes_.rend(); ++it) {
    auto& n = **it;
    if (n.is_leaf()) continue;
    for (auto& in : n.inputs) {
      if (in->requires_grad) in->ensure_grad();
    }
    n.backward(n);
  }
  // Release interior state so the graph cannot be replayed.
  for (auto& n : graph.nodes_) {
    if (n->is_leaf()) continue;
    n->backward = nullptr;
    n->inputs.clear();
    n->grad.clear();
    n->grad.shrink_to_fit();
    n->released = true;
  }
  graph.consumed_ = true;
}

void backward(const Tensor& root, double seed) {
  auto graph = OpGraph::from_root(root);
  backward(graph, seed);
}

void zero_grads(std::span<Tensor> tensors) {
  for (auto& t : tensors) t.zero_grad();
}

NoGradGuard::NoGradGuard() : previous_(no_grad_active) { no_grad_active = true; }
NoGradGuard::~NoGradGuard() { no_grad_active = previous_; }
bool NoGradGuard::active() { return no_grad_active; }

}  // namespace ilaprop
