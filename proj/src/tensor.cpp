#include "kilnnet/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "kilnnet/error.hpp"

namespace kiln {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  Tensor::BackwardFn backward;
};

}  // namespace detail

namespace {
thread_local bool t_grad_enabled = true;
}

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  if (element_count(shape) != values.size()) {
    fail(ErrorKind::shape, "shape " + to_string(shape) + " holds " +
                               std::to_string(element_count(shape)) + " elements, got " +
                               std::to_string(values.size()));
  }
  if (std::find(shape.begin(), shape.end(), std::size_t{0}) != shape.end()) {
    fail(ErrorKind::shape, "zero-sized dimension in " + to_string(shape));
  }
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->values = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return full(shape, 0.0, requires_grad);
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  return Tensor(shape, std::vector<double>(element_count(shape), value), requires_grad);
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::from_op(Shape shape, std::vector<double> values,
                       const std::vector<Tensor>& parents, BackwardFn backward) {
  Tensor out(std::move(shape), std::move(values));
  if (!t_grad_enabled) return out;
  const bool any = std::any_of(parents.begin(), parents.end(),
                               [](const Tensor& p) { return p.defined() && p.requires_grad(); });
  if (!any) return out;
  out.node_->requires_grad = true;
  for (const auto& p : parents) {
    if (p.defined() && p.requires_grad()) out.node_->parents.push_back(p.node_);
  }
  out.node_->backward = std::move(backward);
  return out;
}

detail::Node& Tensor::node() const {
  if (!node_) fail(ErrorKind::shape, "use of an undefined tensor");
  return *node_;
}

const Shape& Tensor::shape() const { return node().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    fail(ErrorKind::shape, "axis " + std::to_string(axis) + " out of range for " + to_string(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return node().values.size(); }

std::span<const double> Tensor::values() const { return node().values; }

std::span<double> Tensor::mutable_values() const { return node().values; }

double Tensor::item() const {
  if (numel() != 1) fail(ErrorKind::shape, "item() on " + to_string(shape()));
  return node().values[0];
}

bool Tensor::requires_grad() const { return node().requires_grad; }

bool Tensor::has_grad() const { return !node().grad.empty(); }

std::span<const double> Tensor::grad() const { return node().grad; }

std::span<double> Tensor::mutable_grad() const {
  auto& n = node();
  if (n.grad.empty()) n.grad.assign(n.values.size(), 0.0);
  return n.grad;
}

void Tensor::zero_grad() const {
  auto& g = node().grad;
  std::fill(g.begin(), g.end(), 0.0);
}

void Tensor::backward() {
  auto& root = node();
  if (root.values.size() != 1) {
    fail(ErrorKind::shape, "backward() needs a single-element tensor, got " + to_string(root.shape));
  }
  if (!root.requires_grad) return;

  // Iterative post-order DFS; reversed it is a topological order from the root.
  // The order holds owning pointers because propagation releases the tape.
  std::vector<std::shared_ptr<detail::Node>> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<std::shared_ptr<detail::Node>, std::size_t>> stack;
  stack.emplace_back(node_, 0);
  visited.insert(&root);
  while (!stack.empty()) {
    auto& top = stack.back();
    if (top.second < top.first->parents.size()) {
      std::shared_ptr<detail::Node> p = top.first->parents[top.second++];
      if (visited.insert(p.get()).second) stack.emplace_back(std::move(p), 0);
    } else {
      order.push_back(std::move(top.first));
      stack.pop_back();
    }
  }

  mutable_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = it->get();
    if (!n->backward || n->grad.empty()) continue;
    n->backward(n->grad);
    // Interior gradients and closures are not needed once propagated; dropping
    // them releases the tape as the pass proceeds.
    std::vector<double>().swap(n->grad);
    n->backward = nullptr;
    n->parents.clear();
  }
}

Tensor Tensor::detach() const {
  return Tensor(node().shape, node().values);
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

}  // namespace kiln
