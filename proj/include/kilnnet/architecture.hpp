#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "kilnnet/ops.hpp"
#include "kilnnet/tensor.hpp"

namespace kiln {

/// Which convolution stack sits in front of the first A block. The reference
/// stem needs inputs of at least 75 px; the desk stem replaces its first six
/// layers with two stride-2 3x3 convolutions for small chips.
enum class StemKind { automatic, reference, desk };

std::string_view to_string(StemKind kind);
StemKind parse_stem_kind(std::string_view text);

struct NetworkConfig {
  int n_a = 10;
  int n_b = 3;
  int n_c = 3;
  double width = 1.0;
  int num_classes = 11;
  int input_size = 299;
  double residual_scale = 0.1;
  StemKind stem = StemKind::automatic;
  double dropout = 0.2;
  /// When false, convolutions carry a bias instead of a normalisation layer.
  bool normalize = true;

  /// Smallest input the reference stem accepts.
  static constexpr int kReferenceStemMinInput = 75;

  void validate() const;
  /// ceil(width * reference), never below 1.
  std::size_t channels(std::size_t reference) const;
  StemKind resolved_stem() const;
};

/// Convolution followed by optional normalisation and ReLU.
struct ConvUnit {
  std::string name;
  ConvSpec spec;
  std::size_t reference_channels = 0;
  Tensor weight;
  Tensor bias;
  Tensor beta;
  BatchNormState norm;
  bool normalized = false;
  bool activate = true;
};

struct PoolUnit {
  enum class Kind { max, average };
  Kind kind = Kind::max;
  std::size_t window = 3;
  std::size_t stride = 2;
};

using Unit = std::variant<ConvUnit, PoolUnit>;

/// One multi-branch module. Sequential modules have a single branch; concat
/// modules join branch outputs on the channel axis; residual modules project
/// the joined branches back to the trunk width with a biased 1x1 convolution
/// and add them to the input with a fixed scale, followed by ReLU.
struct Module {
  enum class Combine { sequential, concat, residual };
  Combine combine = Combine::sequential;
  std::vector<std::vector<Unit>> branches;
  std::optional<ConvUnit> projection;
  double residual_scale = 1.0;
};

enum class StageKind { stem, block_a, reduction_a, block_b, reduction_b, block_c, head };

std::string_view to_string(StageKind kind);

struct Stage {
  std::string name;
  StageKind kind = StageKind::stem;
  std::vector<Module> modules;
  /// Per-sample output shape [C,H,W].
  Shape output;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct ConvSummary {
  std::string name;
  std::size_t reference_channels = 0;
  std::size_t channels = 0;
};

struct StageSummary {
  std::string name;
  StageKind kind = StageKind::stem;
  Shape output;
  std::size_t parameters = 0;
  /// Running-statistic scalars (not learnable).
  std::size_t buffers = 0;
  std::vector<ConvSummary> convolutions;
};

/// stem -> n_a x BlockA -> ReductionA -> n_b x BlockB -> ReductionB ->
/// n_c x BlockC -> head (1x1 conv, global pool, dropout, linear).
class Network {
 public:
  Network(NetworkConfig config, std::uint64_t seed);

  const NetworkConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  std::span<const Stage> stages() const { return stages_; }

  /// [N,3,S,S] -> [N,num_classes] logits. Train mode uses batch statistics,
  /// updates running statistics and applies dropout.
  Tensor forward(const Tensor& chips, Mode mode);

  /// Learnable tensors in a fixed traversal order.
  std::vector<NamedTensor> parameters() const;
  /// Mutable access to every normalisation state, in traversal order.
  std::vector<std::pair<std::string, BatchNormState*>> norm_states();

  const Tensor& classifier_weight() const { return classifier_weight_; }
  const Tensor& classifier_bias() const { return classifier_bias_; }

 private:
  void build(std::mt19937_64& rng);

  NetworkConfig config_;
  std::uint64_t seed_;
  std::vector<Stage> stages_;
  Tensor classifier_weight_;
  Tensor classifier_bias_;
  std::mt19937_64 dropout_rng_;
};

/// Deterministic construction; throws a configuration error naming the stage
/// whose spatial size collapses.
Network build_network(const NetworkConfig& config, std::uint64_t seed);

std::size_t param_count(const Network& network);
std::size_t buffer_count(const Network& network);

/// Per-stage output shapes and parameter subtotals. The classifier counts
/// toward the head stage.
std::vector<StageSummary> describe(const Network& network);

}  // namespace kiln
