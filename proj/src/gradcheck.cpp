#include "kilnnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "kilnnet/error.hpp"
#include "kilnnet/hash.hpp"
#include "kilnnet/ops.hpp"

namespace kiln {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

namespace {

double checked_value(const Tensor& t) {
  if (t.numel() != 1) fail(ErrorKind::shape, "grad_check needs a scalar-valued function");
  const double v = t.item();
  if (!std::isfinite(v)) fail(ErrorKind::numeric, "grad_check function returned a non-finite value");
  return v;
}

}  // namespace

GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& function,
                           const Tensor& point, double eps) {
  std::vector<Tensor> leaves{Tensor(point.shape(), std::vector<double>(point.values().begin(),
                                                                       point.values().end()),
                                    true)};
  const Tensor x = leaves[0];
  return grad_check_leaves([&] { return function(x); }, leaves, GradCheckOptions{eps, 0, 0, true});
}

GradCheckResult grad_check_leaves(const std::function<Tensor()>& function,
                                  std::span<Tensor> leaves, const GradCheckOptions& options) {
  for (auto& leaf : leaves) {
    if (!leaf.requires_grad()) fail(ErrorKind::config, "grad_check leaf does not require grad");
    leaf.zero_grad();
  }
  {
    Tensor y = function();
    checked_value(y);
    y.backward();
  }

  GradCheckResult result;
  std::uint64_t base_fingerprint = 0;
  {
    NoGradGuard no_grad;
    DecisionTrace trace;
    checked_value(function());
    base_fingerprint = trace.fingerprint();
  }
  std::mt19937_64 rng(options.seed);
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor& leaf = leaves[li];
    const std::size_t count = leaf.numel();
    std::vector<double> analytic(count, 0.0);
    if (leaf.has_grad()) {
      const auto g = leaf.grad();
      std::copy(g.begin(), g.end(), analytic.begin());
    }
    for (double a : analytic) {
      if (!std::isfinite(a)) fail(ErrorKind::numeric, "non-finite analytic gradient");
    }

    std::vector<std::size_t> coords(count);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords_per_leaf != 0 && options.max_coords_per_leaf < count) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_leaf);
      std::sort(coords.begin(), coords.end());
    }

    NoGradGuard no_grad;
    DecisionTrace trace;
    auto values = leaf.mutable_values();
    for (std::size_t i : coords) {
      const double saved = values[i];
      values[i] = saved + options.eps;
      trace.reset();
      const double plus = checked_value(function());
      const bool plus_smooth = trace.fingerprint() == base_fingerprint;
      values[i] = saved - options.eps;
      trace.reset();
      const double minus = checked_value(function());
      const bool minus_smooth = trace.fingerprint() == base_fingerprint;
      values[i] = saved;
      if (options.skip_kinks && !(plus_smooth && minus_smooth)) {
        ++result.skipped_kinks;
        continue;
      }
      const double numeric = (plus - minus) / (2.0 * options.eps);
      const double err = relative_error(analytic[i], numeric);
      result.coordinates.push_back({li, i, analytic[i], numeric, err});
      ++result.checked;
      if (result.checked == 1 || err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_leaf = li;
        result.worst_index = i;
        result.worst_analytic = analytic[i];
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

namespace {

using Rng = std::mt19937_64;

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

Tensor random_tensor(const Shape& shape, Rng& rng, bool requires_grad, double lo = -1.0,
                     double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(element_count(shape));
  for (double& x : v) x = u(rng);
  return Tensor(shape, std::move(v), requires_grad);
}

// Magnitudes in [0.05, 1] with random sign: at least 0.05 away from the kink.
Tensor off_kink_tensor(const Shape& shape, Rng& rng) {
  std::uniform_real_distribution<double> mag(0.05, 1.0);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(element_count(shape));
  for (double& x : v) x = sign(rng) ? mag(rng) : -mag(rng);
  return Tensor(shape, std::move(v), true);
}

// Distinct values spaced at least 0.05 apart so no window has a near tie.
Tensor distinct_tensor(const Shape& shape, Rng& rng) {
  std::vector<double> v(element_count(shape));
  std::uniform_real_distribution<double> jitter(0.0, 0.05);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.1 * static_cast<double>(i) + jitter(rng);
  std::shuffle(v.begin(), v.end(), rng);
  return Tensor(shape, std::move(v), true);
}

Tensor project(const Tensor& out, const Tensor& weights) { return sum(mul(out, weights)); }

struct Trial {
  std::vector<Tensor> leaves;
  std::function<Tensor()> function;
};

using TrialMaker = std::function<Trial(Rng&)>;

// Wraps an op so that its output is reduced with a projection drawn once per
// trial, after the op has produced its output shape.
Trial projected(std::vector<Tensor> leaves, std::function<Tensor()> op, Rng& rng) {
  Shape out_shape;
  {
    NoGradGuard no_grad;
    out_shape = op().shape();
  }
  Tensor weights = random_tensor(out_shape, rng, false);
  return {std::move(leaves), [op = std::move(op), weights] { return project(op(), weights); }};
}

Shape image_shape(Rng& rng, std::size_t min_hw = 1, std::size_t max_hw = 5) {
  return {pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, min_hw, max_hw), pick(rng, min_hw, max_hw)};
}

std::vector<std::pair<std::string, TrialMaker>> op_trials() {
  std::vector<std::pair<std::string, TrialMaker>> ops;

  ops.emplace_back("conv2d", [](Rng& rng) {
    ConvSpec spec;
    spec.in_channels = pick(rng, 1, 3);
    spec.out_channels = pick(rng, 1, 3);
    spec.kernel_h = pick(rng, 1, 3);
    spec.kernel_w = pick(rng, 1, 3);
    spec.stride = pick(rng, 1, 2);
    spec.pad_h = pick(rng, 0, spec.kernel_h / 2);
    spec.pad_w = pick(rng, 0, spec.kernel_w / 2);
    spec.has_bias = pick(rng, 0, 1) == 1;
    Tensor x = random_tensor({pick(rng, 1, 2), spec.in_channels, pick(rng, spec.kernel_h, 5),
                              pick(rng, spec.kernel_w, 5)},
                             rng, true);
    Tensor w = random_tensor(spec.weight_shape(), rng, true);
    Tensor b = spec.has_bias ? random_tensor({spec.out_channels}, rng, true) : Tensor();
    std::vector<Tensor> leaves{x, w};
    if (spec.has_bias) leaves.push_back(b);
    return projected(leaves, [=] { return conv2d(x, w, b, spec); }, rng);
  });

  ops.emplace_back("maxpool2d", [](Rng& rng) {
    const std::size_t window = pick(rng, 2, 3);
    const std::size_t stride = pick(rng, 1, 2);
    Tensor x = distinct_tensor(image_shape(rng, window, 5), rng);
    return projected({x}, [=] { return maxpool2d(x, window, stride); }, rng);
  });

  ops.emplace_back("avgpool2d_same", [](Rng& rng) {
    const std::size_t window = 2 * pick(rng, 0, 2) + 1;
    Tensor x = random_tensor(image_shape(rng), rng, true);
    return projected({x}, [=] { return avgpool2d_same(x, window); }, rng);
  });

  ops.emplace_back("global_avgpool", [](Rng& rng) {
    Tensor x = random_tensor(image_shape(rng), rng, true);
    return projected({x}, [=] { return global_avgpool(x); }, rng);
  });

  ops.emplace_back("relu", [](Rng& rng) {
    Tensor x = off_kink_tensor(image_shape(rng), rng);
    return projected({x}, [=] { return relu(x); }, rng);
  });

  ops.emplace_back("batchnorm_train", [](Rng& rng) {
    Shape shape = image_shape(rng, 2, 4);
    Tensor x = random_tensor(shape, rng, true, -2.0, 2.0);
    Tensor gamma = random_tensor({shape[1]}, rng, true, 0.5, 1.5);
    Tensor beta = random_tensor({shape[1]}, rng, true);
    auto state = std::make_shared<BatchNormState>(shape[1]);
    return projected({x, gamma, beta},
                     [=] { return batchnorm(x, gamma, beta, *state, Mode::train); }, rng);
  });

  ops.emplace_back("batchnorm_eval", [](Rng& rng) {
    Shape shape = image_shape(rng);
    Tensor x = random_tensor(shape, rng, true);
    Tensor gamma = random_tensor({shape[1]}, rng, true, 0.5, 1.5);
    Tensor beta = random_tensor({shape[1]}, rng, true);
    auto state = std::make_shared<BatchNormState>(shape[1]);
    std::uniform_real_distribution<double> u(0.1, 2.0);
    for (std::size_t c = 0; c < shape[1]; ++c) {
      state->running_mean[c] = u(rng) - 1.0;
      state->running_var[c] = u(rng);
    }
    return projected({x, gamma, beta},
                     [=] { return batchnorm(x, gamma, beta, *state, Mode::eval); }, rng);
  });

  ops.emplace_back("concat_channels", [](Rng& rng) {
    const Shape base = image_shape(rng);
    std::vector<Tensor> parts;
    const std::size_t count = pick(rng, 1, 3);
    for (std::size_t i = 0; i < count; ++i) {
      parts.push_back(random_tensor({base[0], pick(rng, 1, 3), base[2], base[3]}, rng, true));
    }
    return projected(parts, [=] { return concat_channels(parts); }, rng);
  });

  ops.emplace_back("slice_channels", [](Rng& rng) {
    Shape shape = image_shape(rng);
    shape[1] = pick(rng, 2, 4);
    const std::size_t begin = pick(rng, 0, shape[1] - 1);
    const std::size_t end = pick(rng, begin + 1, shape[1]);
    Tensor x = random_tensor(shape, rng, true);
    return projected({x}, [=] { return slice_channels(x, begin, end); }, rng);
  });

  ops.emplace_back("residual_add_scaled", [](Rng& rng) {
    const Shape shape = image_shape(rng);
    Tensor trunk = random_tensor(shape, rng, true);
    Tensor branch = random_tensor(shape, rng, true);
    const double scale = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
    return projected({trunk, branch}, [=] { return residual_add_scaled(trunk, branch, scale); },
                     rng);
  });

  ops.emplace_back("linear", [](Rng& rng) {
    const std::size_t n = pick(rng, 1, 3), f = pick(rng, 1, 5), k = pick(rng, 1, 4);
    Tensor x = random_tensor({n, f}, rng, true);
    Tensor w = random_tensor({k, f}, rng, true);
    Tensor b = random_tensor({k}, rng, true);
    return projected({x, w, b}, [=] { return linear(x, w, b); }, rng);
  });

  ops.emplace_back("softmax_cross_entropy", [](Rng& rng) {
    const std::size_t n = pick(rng, 1, 4), k = pick(rng, 2, 6);
    Tensor logits = random_tensor({n, k}, rng, true, -3.0, 3.0);
    std::vector<int> labels(n);
    for (int& l : labels) l = static_cast<int>(pick(rng, 0, k - 1));
    return Trial{{logits}, [=] { return softmax_cross_entropy(logits, labels); }};
  });

  ops.emplace_back("dropout", [](Rng& rng) {
    Tensor x = random_tensor(image_shape(rng), rng, true);
    const std::uint64_t mask_seed = rng();
    const double rate = std::uniform_real_distribution<double>(0.1, 0.6)(rng);
    return projected({x}, [=] {
      Rng mask_rng(mask_seed);
      return dropout(x, rate, mask_rng);
    }, rng);
  });

  ops.emplace_back("add", [](Rng& rng) {
    const Shape shape = image_shape(rng);
    Tensor a = random_tensor(shape, rng, true);
    Tensor b = random_tensor(shape, rng, true);
    return projected({a, b}, [=] { return add(a, b); }, rng);
  });

  ops.emplace_back("mul", [](Rng& rng) {
    const Shape shape = image_shape(rng);
    Tensor a = random_tensor(shape, rng, true);
    Tensor b = random_tensor(shape, rng, true);
    return projected({a, b}, [=] { return mul(a, b); }, rng);
  });

  ops.emplace_back("sum", [](Rng& rng) {
    Tensor x = random_tensor(image_shape(rng), rng, true);
    return Trial{{x}, [=] { return sum(x); }};
  });

  return ops;
}

}  // namespace

std::vector<OpGradReport> op_gradient_suite(std::size_t trials, std::uint64_t seed, double eps) {
  std::vector<OpGradReport> reports;
  for (auto& [name, make] : op_trials()) {
    OpGradReport report;
    report.op = name;
    Rng rng(fnv1a64(name, seed));
    for (std::size_t t = 0; t < trials; ++t) {
      Trial trial = make(rng);
      GradCheckResult r = grad_check_leaves(trial.function, trial.leaves,
                                            GradCheckOptions{eps, 0, 0, true});
      r.coordinates.clear();
      const std::size_t checked = report.worst.checked + r.checked;
      const std::size_t skipped = report.worst.skipped_kinks + r.skipped_kinks;
      if (t == 0 || r.max_rel_error > report.worst.max_rel_error) report.worst = r;
      report.worst.checked = checked;
      report.worst.skipped_kinks = skipped;
      ++report.trials;
    }
    reports.push_back(std::move(report));
  }
  return reports;
}

GradCheckResult network_gradient_check(const NetworkConfig& config, std::uint64_t seed,
                                       std::size_t batch, std::size_t coords_per_leaf,
                                       Mode mode, double eps) {
  NetworkConfig cfg = config;
  cfg.dropout = 0.0;
  Network network = build_network(cfg, seed);
  Rng rng(seed + 1);
  const std::size_t s = static_cast<std::size_t>(cfg.input_size);
  Tensor chips = random_tensor({batch, 3, s, s}, rng, false, 0.0, 1.0);
  std::vector<int> labels(batch);
  for (int& l : labels) l = static_cast<int>(pick(rng, 0, static_cast<std::size_t>(cfg.num_classes) - 1));

  std::vector<Tensor> leaves;
  for (const auto& p : network.parameters()) leaves.push_back(p.tensor);
  return grad_check_leaves(
      [&] { return softmax_cross_entropy(network.forward(chips, mode), labels); }, leaves,
      GradCheckOptions{eps, coords_per_leaf, seed, true});
}

}  // namespace kiln
