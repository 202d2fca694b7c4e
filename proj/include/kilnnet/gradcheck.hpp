#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "kilnnet/architecture.hpp"
#include "kilnnet/tensor.hpp"

namespace kiln {

struct CoordinateCheck {
  std::size_t leaf = 0;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_leaf = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  /// Coordinates left out because x+eps or x-eps crossed a ReLU or max-pool
  /// kink; the function is not differentiable across such an interval.
  std::size_t skipped_kinks = 0;
  /// Every compared coordinate, in leaf then index order.
  std::vector<CoordinateCheck> coordinates;
};

struct GradCheckOptions {
  double eps = 1e-5;
  /// 0 checks every coordinate; otherwise a seeded sample per leaf.
  std::size_t max_coords_per_leaf = 0;
  std::uint64_t seed = 0;
  bool skip_kinks = true;
};

/// |a - b| / max(|a|, |b|, 1e-8).
double relative_error(double analytic, double numeric);

/// Compares the reverse-mode gradient of a scalar function at `point` with
/// central finite differences. Throws a numeric error on non-finite values.
GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& function,
                           const Tensor& point, double eps = 1e-5);

/// Same comparison with respect to existing leaf tensors (for example network
/// parameters). Leaves are perturbed in place and restored; `function` must
/// rebuild its graph on every call.
GradCheckResult grad_check_leaves(const std::function<Tensor()>& function,
                                  std::span<Tensor> leaves, const GradCheckOptions& options = {});

struct OpGradReport {
  std::string op;
  std::size_t trials = 0;
  GradCheckResult worst;
};

/// Randomised gradient checks for every layer operation. Each trial draws
/// small random shapes and inputs, keeps ReLU inputs and pooling maxima away
/// from their kinks, and reduces the op output to a scalar with a fixed random
/// projection.
std::vector<OpGradReport> op_gradient_suite(std::size_t trials, std::uint64_t seed,
                                            double eps = 1e-5);

/// Gradient of the mean cross-entropy of a full network (dropout off) with
/// respect to a seeded sample of every parameter.
GradCheckResult network_gradient_check(const NetworkConfig& config, std::uint64_t seed,
                                       std::size_t batch, std::size_t coords_per_leaf,
                                       Mode mode = Mode::train, double eps = 1e-5);

}  // namespace kiln
