#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "kilnnet/architecture.hpp"

namespace kiln {

inline constexpr char kCheckpointMagic[8] = {'K', 'I', 'L', 'N', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct StoredTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

/// In-memory form of a checkpoint file. Tensors hold every learnable
/// parameter followed by the running statistics of each normalisation layer
/// (`<conv>.running_mean`, `<conv>.running_var`). Byte layout in
/// docs/formats.md.
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::uint64_t seed = 0;
  NetworkConfig config;
  /// Free-form annotations such as the epoch a checkpoint was taken at.
  std::map<std::string, std::string> metadata;
  std::vector<StoredTensor> tensors;
};

/// Copies the current parameter values and running statistics.
Checkpoint snapshot(Network& network);

/// Rebuilds the network from the stored config and seed, then overwrites
/// every tensor. A missing, extra or reshaped tensor is a decode error.
Network restore(const Checkpoint& checkpoint);
/// Overwrites the tensors of an existing network with a matching layout.
void restore_into(Network& network, const Checkpoint& checkpoint);

std::string encode_checkpoint(const Checkpoint& checkpoint);
/// `origin` names the source in decode errors.
Checkpoint decode_checkpoint(std::string_view bytes, const std::string& origin = "checkpoint");

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace kiln
