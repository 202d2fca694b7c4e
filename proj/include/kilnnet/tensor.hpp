#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace kiln {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {
struct Node;
}

/// Dense row-major array of doubles that can take part in a reverse-mode
/// gradient tape. Copies are shallow handles: two copies refer to the same
/// values and gradient buffer.
class Tensor {
 public:
  /// Propagates the output gradient into the operands captured by the closure.
  using BackwardFn = std::function<void(std::span<const double> out_grad)>;

  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor scalar(double value);

  /// Result of an operation. Records parents and the backward closure on the
  /// tape unless gradients are disabled or no parent requires a gradient.
  static Tensor from_op(Shape shape, std::vector<double> values,
                        const std::vector<Tensor>& parents, BackwardFn backward);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  /// Direct write access for initialisers and optimisers. Must not be used on
  /// a tensor whose tape is still awaiting backward().
  std::span<double> mutable_values() const;
  double item() const;

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  /// Gradient buffer, allocated as zeros on first access.
  std::span<double> mutable_grad() const;
  void zero_grad() const;

  /// Reverse pass from a single-element tensor, seeded with 1.
  void backward();

  /// Same values, no tape history, no gradient requirement.
  Tensor detach() const;

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  detail::Node& node() const;

  std::shared_ptr<detail::Node> node_;
};

bool grad_enabled();

/// Disables tape recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace kiln
