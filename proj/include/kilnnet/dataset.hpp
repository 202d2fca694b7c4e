#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "kilnnet/tensor.hpp"

namespace kiln {

inline constexpr int kNumClasses = 11;

/// Canonical class identifiers; the position is the label encoding and
/// brick_kiln must stay at 0.
inline constexpr std::array<std::string_view, kNumClasses> kLabelNames{
    "brick_kiln", "house",       "road",    "tennis_court", "farm",       "sparse_trees",
    "dense_trees", "orchard",    "parking", "park",         "barren_land"};

std::string_view label_name(int label);
std::optional<int> parse_label(std::string_view name);

enum class Split { train, val, test };

std::string_view to_string(Split split);
std::optional<Split> parse_split(std::string_view text);

struct ChipRecord {
  /// Relative to the manifest's directory.
  std::string image_path;
  int label = 0;
  double lat = 0.0;
  double lon = 0.0;
  int zoom = 20;
  std::uint64_t tile_x = 0;
  std::uint64_t tile_y = 0;
  Split split = Split::train;

  bool operator==(const ChipRecord&) const = default;
};

struct Manifest {
  std::vector<ChipRecord> records;
  /// Directory that image paths are resolved against; empty means the
  /// working directory.
  std::string base_dir;

  std::string resolve(const ChipRecord& record) const;
  std::size_t count(Split split) const;
};

inline constexpr std::string_view kManifestHeader = "image_path,label,lat,lon,zoom,tile_x,tile_y,split";

/// Parses and validates a manifest. The header line doubles as the format
/// version. Every violation is a validation error naming the file line.
Manifest load_manifest(const std::string& path);
void write_manifest(const Manifest& manifest, const std::string& path);

/// Per-class record counts, optionally restricted to one split.
std::array<std::size_t, kNumClasses> class_counts(const Manifest& manifest,
                                                  std::optional<Split> split = std::nullopt);

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

/// Stratified, seeded assignment. Within a class, records are ordered by a
/// hash of (seed, image_path), so the result does not depend on row order.
/// Per-class counts use largest remainders with at least one record in each
/// split; a class with fewer than 3 records is a stratification error.
Manifest split_assign(Manifest manifest, const SplitFractions& fractions, std::uint64_t seed);

/// Split sizes for one class of n records.
std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitFractions& fractions);

/// Decoded chips of one split, scaled to [0,1], CHW per chip.
struct ChipSet {
  std::size_t size = 0;  // chip edge in pixels
  std::vector<std::vector<double>> pixels;
  std::vector<int> labels;
  /// Index of each chip in the manifest.
  std::vector<std::size_t> records;
};

/// Decode errors carry the manifest line of the failing record. All chips
/// must share one square size.
ChipSet load_chips(const Manifest& manifest, Split split);

enum class Augment { none, flip };

std::string_view to_string(Augment augment);
Augment parse_augment(std::string_view text);

struct Batch {
  Tensor images;  // [N,3,S,S]
  std::vector<int> labels;
  std::vector<std::size_t> records;
};

/// One epoch over a chip set in a seeded random order. Flip augmentation
/// mirrors each chip horizontally with probability 0.5.
class BatchIterator {
 public:
  BatchIterator(std::shared_ptr<const ChipSet> chips, std::size_t batch_size, std::uint64_t seed,
                Augment augment);

  /// Empty once the epoch is exhausted; the last batch may be short.
  std::optional<Batch> next();
  std::size_t batches() const;

 private:
  std::shared_ptr<const ChipSet> chips_;
  std::size_t batch_size_;
  Augment augment_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::mt19937_64 rng_;
};

BatchIterator batch_iter(const Manifest& manifest, Split split, std::size_t batch_size,
                         std::uint64_t seed, Augment augment);

/// Stacks chips [begin, end) of a set into one [N,3,S,S] tensor in order.
Tensor stack_chips(const ChipSet& chips, std::size_t begin, std::size_t end);

}  // namespace kiln
