#include "kilnnet/architecture.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "kilnnet/error.hpp"

namespace kiln {

std::string_view to_string(StemKind kind) {
  switch (kind) {
    case StemKind::automatic: return "auto";
    case StemKind::reference: return "reference";
    case StemKind::desk: return "desk";
  }
  return "auto";
}

StemKind parse_stem_kind(std::string_view text) {
  if (text == "auto") return StemKind::automatic;
  if (text == "reference") return StemKind::reference;
  if (text == "desk") return StemKind::desk;
  fail(ErrorKind::config, "unknown stem '" + std::string(text) + "' (auto|reference|desk)");
}

std::string_view to_string(StageKind kind) {
  switch (kind) {
    case StageKind::stem: return "stem";
    case StageKind::block_a: return "block_a";
    case StageKind::reduction_a: return "reduction_a";
    case StageKind::block_b: return "block_b";
    case StageKind::reduction_b: return "reduction_b";
    case StageKind::block_c: return "block_c";
    case StageKind::head: return "head";
  }
  return "stage";
}

void NetworkConfig::validate() const {
  if (n_a < 0 || n_b < 0 || n_c < 0) fail(ErrorKind::config, "block counts must be non-negative");
  if (n_a + n_b + n_c < 1) fail(ErrorKind::config, "at least one inception block is required");
  if (!(width > 0.0 && width <= 1.0)) fail(ErrorKind::config, "width must be in (0,1]");
  if (num_classes < 1) fail(ErrorKind::config, "num_classes must be positive");
  if (input_size < 1) fail(ErrorKind::config, "input_size must be positive");
  if (!std::isfinite(residual_scale)) fail(ErrorKind::config, "residual_scale must be finite");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail(ErrorKind::config, "dropout must be in [0,1)");
}

std::size_t NetworkConfig::channels(std::size_t reference) const {
  const double scaled = std::ceil(width * static_cast<double>(reference) - 1e-9);
  return std::max<std::size_t>(1, static_cast<std::size_t>(scaled));
}

StemKind NetworkConfig::resolved_stem() const {
  if (stem != StemKind::automatic) return stem;
  return input_size >= kReferenceStemMinInput ? StemKind::reference : StemKind::desk;
}

namespace {

/// Tracks the running [C,H,W] shape while layers are appended and fails with
/// the stage name when a layer does not fit.
struct Builder {
  const NetworkConfig& config;
  std::mt19937_64& rng;
  std::string stage;

  std::size_t ch(std::size_t reference) const { return config.channels(reference); }

  Tensor uniform(const Shape& shape, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> v(element_count(shape));
    for (double& x : v) x = dist(rng);
    return Tensor(shape, std::move(v), true);
  }

  ConvUnit conv(const std::string& name, std::size_t in, std::size_t reference_out,
                std::size_t kh, std::size_t kw, std::size_t stride, bool same) {
    return conv_exact(name, in, ch(reference_out), reference_out, kh, kw, stride, same,
                      /*projection=*/false);
  }

  ConvUnit conv_exact(const std::string& name, std::size_t in, std::size_t out,
                      std::size_t reference_out, std::size_t kh, std::size_t kw,
                      std::size_t stride, bool same, bool projection) {
    ConvUnit u;
    u.name = name;
    u.reference_channels = reference_out;
    u.normalized = config.normalize && !projection;
    u.activate = !projection;
    const bool bias = !u.normalized;
    u.spec = same ? ConvSpec::same(in, out, kh, kw, stride, bias)
                  : ConvSpec::valid(in, out, kh, kw, stride, bias);
    const double fan_in = static_cast<double>(in * kh * kw);
    u.weight = uniform(u.spec.weight_shape(), std::sqrt(6.0 / fan_in));
    if (bias) u.bias = Tensor::zeros({out}, true);
    if (u.normalized) {
      u.beta = Tensor::zeros({out}, true);
      u.norm = BatchNormState(out);
    }
    return u;
  }

  // Output [C,H,W] of `unit` applied to `in`.
  Shape apply(const Unit& unit, const Shape& in) const {
    if (const auto* c = std::get_if<ConvUnit>(&unit)) {
      if (in[1] + 2 * c->spec.pad_h < c->spec.kernel_h ||
          in[2] + 2 * c->spec.pad_w < c->spec.kernel_w) {
        collapse(c->name, in);
      }
      return {c->spec.out_channels,
              conv_output_size(in[1], c->spec.kernel_h, c->spec.stride, c->spec.pad_h),
              conv_output_size(in[2], c->spec.kernel_w, c->spec.stride, c->spec.pad_w)};
    }
    const auto& p = std::get<PoolUnit>(unit);
    if (p.kind == PoolUnit::Kind::average) return in;
    if (in[1] < p.window || in[2] < p.window) collapse("maxpool", in);
    return {in[0], (in[1] - p.window) / p.stride + 1, (in[2] - p.window) / p.stride + 1};
  }

  [[noreturn]] void collapse(const std::string& layer, const Shape& in) const {
    fail(ErrorKind::config, "spatial size collapses in stage '" + stage + "' at " + layer +
                                " (input " + to_string(in) + ", input_size " +
                                std::to_string(config.input_size) + ")");
  }

  Shape module_output(const Module& m, const Shape& in) const {
    if (m.combine == Module::Combine::sequential) {
      Shape s = in;
      for (const auto& u : m.branches.front()) s = apply(u, s);
      return s;
    }
    Shape joined;
    for (const auto& branch : m.branches) {
      Shape s = in;
      for (const auto& u : branch) s = apply(u, s);
      if (joined.empty()) {
        joined = s;
      } else {
        if (s[1] != joined[1] || s[2] != joined[2]) {
          fail(ErrorKind::config, "branch shapes disagree in stage '" + stage + "'");
        }
        joined[0] += s[0];
      }
    }
    if (m.combine == Module::Combine::residual) return in;
    return joined;
  }
};

std::size_t concat_width(const Module& m) {
  std::size_t total = 0;
  for (const auto& branch : m.branches) {
    for (auto it = branch.rbegin(); it != branch.rend(); ++it) {
      if (const auto* c = std::get_if<ConvUnit>(&*it)) {
        total += c->spec.out_channels;
        break;
      }
    }
  }
  return total;
}

}  // namespace

Network::Network(NetworkConfig config, std::uint64_t seed)
    : config_(std::move(config)), seed_(seed), dropout_rng_(seed ^ 0x9e3779b97f4a7c15ULL) {
  config_.validate();
  std::mt19937_64 rng(seed);
  build(rng);
}

void Network::build(std::mt19937_64& rng) {
  Builder b{config_, rng, "stem"};
  Shape shape{3, static_cast<std::size_t>(config_.input_size),
              static_cast<std::size_t>(config_.input_size)};
  using Combine = Module::Combine;
  const PoolUnit max_pool{PoolUnit::Kind::max, 3, 2};

  auto finish = [&](Stage& stage) {
    b.stage = stage.name;
    for (const auto& m : stage.modules) shape = b.module_output(m, shape);
    stage.output = shape;
    stages_.push_back(std::move(stage));
  };

  // Stem: convolution stack, then the multi-scale mixing module whose output
  // width is the A-block trunk.
  {
    Stage stem{"stem", StageKind::stem, {}, {}};
    b.stage = "stem";
    Module seq{Combine::sequential, {{}}, std::nullopt, 1.0};
    auto& layers = seq.branches.front();
    Shape s = shape;
    auto push = [&](Unit u) {
      s = b.apply(u, s);
      layers.push_back(std::move(u));
    };
    if (config_.resolved_stem() == StemKind::reference) {
      push(b.conv("stem/conv1", 3, 32, 3, 3, 2, false));
      push(b.conv("stem/conv2", s[0], 32, 3, 3, 1, false));
      push(b.conv("stem/conv3", s[0], 64, 3, 3, 1, true));
      push(max_pool);
      push(b.conv("stem/conv4", s[0], 80, 1, 1, 1, false));
      push(b.conv("stem/conv5", s[0], 192, 3, 3, 1, false));
      push(max_pool);
    } else {
      push(b.conv("stem/conv1", 3, 32, 3, 3, 2, true));
      push(b.conv("stem/conv2", s[0], 192, 3, 3, 2, true));
    }
    const std::size_t c = s[0];
    Module mixed{Combine::concat, {}, std::nullopt, 1.0};
    mixed.branches.push_back({b.conv("stem/mixed/b0_1", c, 96, 1, 1, 1, true)});
    mixed.branches.push_back({b.conv("stem/mixed/b1_1", c, 48, 1, 1, 1, true),
                              b.conv("stem/mixed/b1_2", b.ch(48), 64, 5, 5, 1, true)});
    mixed.branches.push_back({b.conv("stem/mixed/b2_1", c, 64, 1, 1, 1, true),
                              b.conv("stem/mixed/b2_2", b.ch(64), 96, 3, 3, 1, true),
                              b.conv("stem/mixed/b2_3", b.ch(96), 96, 3, 3, 1, true)});
    mixed.branches.push_back({PoolUnit{PoolUnit::Kind::average, 3, 1},
                              b.conv("stem/mixed/b3_1", c, 64, 1, 1, 1, true)});
    stem.modules.push_back(std::move(seq));
    stem.modules.push_back(std::move(mixed));
    finish(stem);
  }

  auto residual = [&](const std::string& prefix, std::size_t trunk, std::size_t reference_trunk,
                      std::vector<std::vector<Unit>> branches) {
    Module m{Combine::residual, std::move(branches), std::nullopt, config_.residual_scale};
    m.projection = b.conv_exact(prefix + "/up", concat_width(m), trunk, reference_trunk, 1, 1, 1,
                                true, /*projection=*/true);
    return m;
  };

  for (int i = 0; i < config_.n_a; ++i) {
    const std::string p = "block_a_" + std::to_string(i + 1);
    b.stage = p;
    const std::size_t t = shape[0];
    Stage st{p, StageKind::block_a, {}, {}};
    st.modules.push_back(residual(
        p, t, 320,
        {{b.conv(p + "/b0_1", t, 32, 1, 1, 1, true)},
         {b.conv(p + "/b1_1", t, 32, 1, 1, 1, true), b.conv(p + "/b1_2", b.ch(32), 32, 3, 3, 1, true)},
         {b.conv(p + "/b2_1", t, 32, 1, 1, 1, true), b.conv(p + "/b2_2", b.ch(32), 48, 3, 3, 1, true),
          b.conv(p + "/b2_3", b.ch(48), 64, 3, 3, 1, true)}}));
    finish(st);
  }

  {
    b.stage = "reduction_a";
    const std::size_t t = shape[0];
    Stage st{"reduction_a", StageKind::reduction_a, {}, {}};
    Module m{Combine::concat, {}, std::nullopt, 1.0};
    m.branches.push_back({b.conv("reduction_a/b0_1", t, 384, 3, 3, 2, false)});
    m.branches.push_back({b.conv("reduction_a/b1_1", t, 256, 1, 1, 1, true),
                          b.conv("reduction_a/b1_2", b.ch(256), 256, 3, 3, 1, true),
                          b.conv("reduction_a/b1_3", b.ch(256), 384, 3, 3, 2, false)});
    m.branches.push_back({max_pool});
    st.modules.push_back(std::move(m));
    finish(st);
  }

  for (int i = 0; i < config_.n_b; ++i) {
    const std::string p = "block_b_" + std::to_string(i + 1);
    b.stage = p;
    const std::size_t t = shape[0];
    Stage st{p, StageKind::block_b, {}, {}};
    st.modules.push_back(residual(
        p, t, 1088,
        {{b.conv(p + "/b0_1", t, 192, 1, 1, 1, true)},
         {b.conv(p + "/b1_1", t, 128, 1, 1, 1, true), b.conv(p + "/b1_2", b.ch(128), 160, 1, 7, 1, true),
          b.conv(p + "/b1_3", b.ch(160), 192, 7, 1, 1, true)}}));
    finish(st);
  }

  {
    b.stage = "reduction_b";
    const std::size_t t = shape[0];
    Stage st{"reduction_b", StageKind::reduction_b, {}, {}};
    Module m{Combine::concat, {}, std::nullopt, 1.0};
    m.branches.push_back({b.conv("reduction_b/b0_1", t, 256, 1, 1, 1, true),
                          b.conv("reduction_b/b0_2", b.ch(256), 384, 3, 3, 2, false)});
    m.branches.push_back({b.conv("reduction_b/b1_1", t, 256, 1, 1, 1, true),
                          b.conv("reduction_b/b1_2", b.ch(256), 288, 3, 3, 2, false)});
    m.branches.push_back({b.conv("reduction_b/b2_1", t, 256, 1, 1, 1, true),
                          b.conv("reduction_b/b2_2", b.ch(256), 288, 3, 3, 1, true),
                          b.conv("reduction_b/b2_3", b.ch(288), 320, 3, 3, 2, false)});
    m.branches.push_back({max_pool});
    st.modules.push_back(std::move(m));
    finish(st);
  }

  for (int i = 0; i < config_.n_c; ++i) {
    const std::string p = "block_c_" + std::to_string(i + 1);
    b.stage = p;
    const std::size_t t = shape[0];
    Stage st{p, StageKind::block_c, {}, {}};
    st.modules.push_back(residual(
        p, t, 2080,
        {{b.conv(p + "/b0_1", t, 192, 1, 1, 1, true)},
         {b.conv(p + "/b1_1", t, 192, 1, 1, 1, true), b.conv(p + "/b1_2", b.ch(192), 224, 1, 3, 1, true),
          b.conv(p + "/b1_3", b.ch(224), 256, 3, 1, 1, true)}}));
    finish(st);
  }

  {
    b.stage = "head";
    Stage st{"head", StageKind::head, {}, {}};
    Module m{Combine::sequential, {{b.conv("head/conv", shape[0], 1536, 1, 1, 1, true)}},
             std::nullopt, 1.0};
    st.modules.push_back(std::move(m));
    finish(st);
    const std::size_t features = shape[0];
    const std::size_t k = static_cast<std::size_t>(config_.num_classes);
    classifier_weight_ = b.uniform({k, features}, 1.0 / std::sqrt(static_cast<double>(features)));
    classifier_bias_ = Tensor::zeros({k}, true);
  }
}

namespace {

Tensor apply_conv(ConvUnit& u, const Tensor& x, Mode mode) {
  Tensor y = conv2d(x, u.weight, u.bias, u.spec);
  if (u.normalized) y = batchnorm(y, Tensor(), u.beta, u.norm, mode);
  if (u.activate) y = relu(y);
  return y;
}

Tensor apply_unit(Unit& unit, const Tensor& x, Mode mode) {
  if (auto* c = std::get_if<ConvUnit>(&unit)) return apply_conv(*c, x, mode);
  const auto& p = std::get<PoolUnit>(unit);
  if (p.kind == PoolUnit::Kind::average) return avgpool2d_same(x, p.window);
  return maxpool2d(x, p.window, p.stride);
}

Tensor apply_module(Module& m, const Tensor& x, Mode mode) {
  if (m.combine == Module::Combine::sequential) {
    Tensor y = x;
    for (auto& u : m.branches.front()) y = apply_unit(u, y, mode);
    return y;
  }
  std::vector<Tensor> outs;
  outs.reserve(m.branches.size());
  for (auto& branch : m.branches) {
    Tensor y = x;
    for (auto& u : branch) y = apply_unit(u, y, mode);
    outs.push_back(std::move(y));
  }
  Tensor joined = outs.size() == 1 ? outs.front() : concat_channels(outs);
  if (m.combine == Module::Combine::concat) return joined;
  Tensor up = apply_conv(*m.projection, joined, mode);
  return relu(residual_add_scaled(x, up, m.residual_scale));
}

template <typename Fn>
void for_each_conv(const std::vector<Stage>& stages, Fn&& fn) {
  for (const auto& st : stages) {
    for (const auto& m : st.modules) {
      for (const auto& branch : m.branches) {
        for (const auto& u : branch) {
          if (const auto* c = std::get_if<ConvUnit>(&u)) fn(st, *c);
        }
      }
      if (m.projection) fn(st, *m.projection);
    }
  }
}

}  // namespace

Tensor Network::forward(const Tensor& chips, Mode mode) {
  const auto s = static_cast<std::size_t>(config_.input_size);
  if (chips.rank() != 4 || chips.dim(1) != 3 || chips.dim(2) != s || chips.dim(3) != s) {
    fail(ErrorKind::shape, "network expects [N,3," + std::to_string(s) + "," + std::to_string(s) +
                               "] chips, got " + to_string(chips.shape()));
  }
  Tensor x = chips;
  for (auto& st : stages_) {
    for (auto& m : st.modules) x = apply_module(m, x, mode);
  }
  x = global_avgpool(x);
  if (mode == Mode::train && config_.dropout > 0.0) x = dropout(x, config_.dropout, dropout_rng_);
  return linear(x, classifier_weight_, classifier_bias_);
}

std::vector<NamedTensor> Network::parameters() const {
  std::vector<NamedTensor> out;
  for_each_conv(stages_, [&](const Stage&, const ConvUnit& c) {
    out.push_back({c.name + ".weight", c.weight});
    if (c.bias.defined()) out.push_back({c.name + ".bias", c.bias});
    if (c.beta.defined()) out.push_back({c.name + ".beta", c.beta});
  });
  out.push_back({"classifier.weight", classifier_weight_});
  out.push_back({"classifier.bias", classifier_bias_});
  return out;
}

std::vector<std::pair<std::string, BatchNormState*>> Network::norm_states() {
  std::vector<std::pair<std::string, BatchNormState*>> out;
  for (auto& st : stages_) {
    for (auto& m : st.modules) {
      for (auto& branch : m.branches) {
        for (auto& u : branch) {
          if (auto* c = std::get_if<ConvUnit>(&u); c && c->normalized) {
            out.emplace_back(c->name, &c->norm);
          }
        }
      }
    }
  }
  return out;
}

Network build_network(const NetworkConfig& config, std::uint64_t seed) {
  return Network(config, seed);
}

std::size_t param_count(const Network& network) {
  std::size_t total = 0;
  for (const auto& p : network.parameters()) total += p.tensor.numel();
  return total;
}

std::size_t buffer_count(const Network& network) {
  std::size_t total = 0;
  for (const auto& s : describe(network)) total += s.buffers;
  return total;
}

std::vector<StageSummary> describe(const Network& network) {
  std::vector<StageSummary> out;
  for (const auto& st : network.stages()) {
    StageSummary summary{st.name, st.kind, st.output, 0, 0, {}};
    auto add = [&](const ConvUnit& c) {
      summary.parameters += c.weight.numel();
      if (c.bias.defined()) summary.parameters += c.bias.numel();
      if (c.beta.defined()) summary.parameters += c.beta.numel();
      if (c.normalized) summary.buffers += 2 * c.spec.out_channels;
      summary.convolutions.push_back({c.name, c.reference_channels, c.spec.out_channels});
    };
    for (const auto& m : st.modules) {
      for (const auto& branch : m.branches) {
        for (const auto& u : branch) {
          if (const auto* c = std::get_if<ConvUnit>(&u)) add(*c);
        }
      }
      if (m.projection) add(*m.projection);
    }
    if (st.kind == StageKind::head) {
      summary.parameters += network.classifier_weight().numel() + network.classifier_bias().numel();
      summary.output = {static_cast<std::size_t>(network.config().num_classes)};
    }
    out.push_back(std::move(summary));
  }
  return out;
}

}  // namespace kiln
