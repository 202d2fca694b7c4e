#include "kilnnet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "kilnnet/csv.hpp"
#include "kilnnet/error.hpp"
#include "kilnnet/geo_tiles.hpp"
#include "kilnnet/hash.hpp"
#include "kilnnet/image_io.hpp"
#include "kilnnet/parallel.hpp"

namespace kiln {

std::string_view label_name(int label) {
  if (label < 0 || label >= kNumClasses) {
    fail(ErrorKind::label, "label index " + std::to_string(label) + " outside [0, 11)");
  }
  return kLabelNames[static_cast<std::size_t>(label)];
}

std::optional<int> parse_label(std::string_view name) {
  for (int i = 0; i < kNumClasses; ++i) {
    if (kLabelNames[static_cast<std::size_t>(i)] == name) return i;
  }
  return std::nullopt;
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

std::optional<Split> parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "val") return Split::val;
  if (text == "test") return Split::test;
  return std::nullopt;
}

std::string Manifest::resolve(const ChipRecord& record) const {
  if (base_dir.empty()) return record.image_path;
  return (std::filesystem::path(base_dir) / record.image_path).string();
}

std::size_t Manifest::count(Split split) const {
  return static_cast<std::size_t>(std::count_if(
      records.begin(), records.end(), [split](const ChipRecord& r) { return r.split == split; }));
}

namespace {

ChipRecord parse_record(const std::vector<std::string>& f) {
  ChipRecord r;
  r.image_path = f[0];
  if (r.image_path.empty()) fail(ErrorKind::validation, "empty image_path");
  if (std::filesystem::path(r.image_path).is_absolute()) {
    fail(ErrorKind::validation, "image_path '" + r.image_path + "' must be relative");
  }
  const auto label = parse_label(f[1]);
  if (!label) fail(ErrorKind::validation, "unknown label '" + f[1] + "'");
  r.label = *label;
  r.lat = parse_double(f[2], "lat");
  r.lon = parse_double(f[3], "lon");
  if (std::abs(r.lat) > kMercatorMaxLat) {
    fail(ErrorKind::validation, "lat " + f[2] + " outside web-mercator bounds");
  }
  if (r.lon < -180.0 || r.lon >= 180.0) {
    fail(ErrorKind::validation, "lon " + f[3] + " outside [-180, 180)");
  }
  const auto zoom = parse_int(f[4], "zoom");
  if (zoom < 0 || zoom > 30) fail(ErrorKind::validation, "zoom " + f[4] + " outside [0, 30]");
  r.zoom = static_cast<int>(zoom);
  const auto x = parse_int(f[5], "tile_x");
  const auto y = parse_int(f[6], "tile_y");
  const std::int64_t limit = std::int64_t{1} << zoom;
  if (x < 0 || x >= limit || y < 0 || y >= limit) {
    fail(ErrorKind::validation, "tile (" + f[5] + ", " + f[6] + ") outside the zoom-" + f[4] + " grid");
  }
  r.tile_x = static_cast<std::uint64_t>(x);
  r.tile_y = static_cast<std::uint64_t>(y);
  const auto split = parse_split(f[7]);
  if (!split) fail(ErrorKind::validation, "unknown split '" + f[7] + "'");
  r.split = *split;
  return r;
}

}  // namespace

Manifest load_manifest(const std::string& path) {
  const CsvTable table = read_csv(path);
  std::string header;
  for (std::size_t i = 0; i < table.header.size(); ++i) {
    if (i) header += ',';
    header += table.header[i];
  }
  if (header != kManifestHeader) {
    fail(ErrorKind::validation, path + ":1: unsupported manifest header '" + header +
                                    "' (expected '" + std::string(kManifestHeader) + "')");
  }
  Manifest manifest;
  manifest.base_dir = std::filesystem::path(path).parent_path().string();
  std::unordered_set<std::string> seen;
  for (const auto& row : table.rows) {
    try {
      ChipRecord r = parse_record(row.fields);
      if (!seen.insert(r.image_path).second) {
        fail(ErrorKind::validation, "duplicate image_path '" + r.image_path + "'");
      }
      manifest.records.push_back(std::move(r));
    } catch (const Error& e) {
      fail(ErrorKind::validation, path + ":" + std::to_string(row.line) + ": " + e.what());
    }
  }
  return manifest;
}

void write_manifest(const Manifest& manifest, const std::string& path) {
  std::ostringstream os;
  os << kManifestHeader << '\n';
  for (const auto& r : manifest.records) {
    if (r.image_path.find(',') != std::string::npos || r.image_path.find('\n') != std::string::npos) {
      fail(ErrorKind::validation, "image_path '" + r.image_path + "' contains a separator");
    }
    os << r.image_path << ',' << label_name(r.label) << ',' << format_double(r.lat) << ','
       << format_double(r.lon) << ',' << r.zoom << ',' << r.tile_x << ',' << r.tile_y << ','
       << to_string(r.split) << '\n';
  }
  write_file(path, os.str());
}

std::array<std::size_t, kNumClasses> class_counts(const Manifest& manifest,
                                                  std::optional<Split> split) {
  std::array<std::size_t, kNumClasses> counts{};
  for (const auto& r : manifest.records) {
    if (!split || r.split == *split) ++counts[static_cast<std::size_t>(r.label)];
  }
  return counts;
}

std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitFractions& fractions) {
  const std::array<double, 3> f{fractions.train, fractions.val, fractions.test};
  for (double v : f) {
    if (!(v > 0.0)) fail(ErrorKind::config, "split fractions must be positive");
  }
  if (std::abs(f[0] + f[1] + f[2] - 1.0) > 1e-9) {
    fail(ErrorKind::config, "split fractions must sum to 1");
  }
  if (n < 3) {
    fail(ErrorKind::stratification,
         "a class needs at least 3 records to fill train, val and test, got " + std::to_string(n));
  }
  std::array<double, 3> exact{};
  std::array<std::size_t, 3> sizes{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    exact[i] = f[i] * static_cast<double>(n);
    sizes[i] = static_cast<std::size_t>(std::floor(exact[i] + 1e-9));
    assigned += sizes[i];
  }
  std::array<std::size_t, 3> by_remainder{0, 1, 2};
  std::stable_sort(by_remainder.begin(), by_remainder.end(), [&](std::size_t a, std::size_t b) {
    return exact[a] - static_cast<double>(sizes[a]) > exact[b] - static_cast<double>(sizes[b]);
  });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++sizes[by_remainder[k % 3]];
  for (std::size_t i = 0; i < 3; ++i) {
    if (sizes[i] > 0) continue;
    std::size_t donor = 3;
    for (std::size_t j = 0; j < 3; ++j) {
      if (sizes[j] < 2) continue;
      const double surplus = static_cast<double>(sizes[j]) - exact[j];
      if (donor == 3 || surplus > static_cast<double>(sizes[donor]) - exact[donor]) donor = j;
    }
    --sizes[donor];
    ++sizes[i];
  }
  return sizes;
}

Manifest split_assign(Manifest manifest, const SplitFractions& fractions, std::uint64_t seed) {
  std::array<std::vector<std::size_t>, kNumClasses> members;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    members[static_cast<std::size_t>(manifest.records[i].label)].push_back(i);
  }
  for (int label = 0; label < kNumClasses; ++label) {
    auto& idx = members[static_cast<std::size_t>(label)];
    if (idx.empty()) continue;
    std::vector<std::pair<std::uint64_t, std::size_t>> keyed;
    for (std::size_t i : idx) keyed.emplace_back(fnv1a64(manifest.records[i].image_path, seed), i);
    std::sort(keyed.begin(), keyed.end(), [&](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first < b.first;
      return manifest.records[a.second].image_path < manifest.records[b.second].image_path;
    });
    if (keyed.size() < 3) {
      fail(ErrorKind::stratification, "class " + std::string(label_name(label)) + " has " +
                                          std::to_string(keyed.size()) +
                                          " records, at least 3 are needed to fill train, val and test");
    }
    const auto sizes = split_sizes(keyed.size(), fractions);
    for (std::size_t k = 0; k < keyed.size(); ++k) {
      auto& r = manifest.records[keyed[k].second];
      r.split = k < sizes[0] ? Split::train : k < sizes[0] + sizes[1] ? Split::val : Split::test;
    }
  }
  return manifest;
}

ChipSet load_chips(const Manifest& manifest, Split split) {
  ChipSet set;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    if (manifest.records[i].split == split) set.records.push_back(i);
  }
  if (set.records.empty()) {
    fail(ErrorKind::validation, "split '" + std::string(to_string(split)) + "' is empty");
  }
  std::vector<Image> images(set.records.size());
  std::vector<std::string> errors(set.records.size());
  parallel_for(set.records.size(), [&](std::size_t k) {
    const auto& r = manifest.records[set.records[k]];
    try {
      images[k] = read_png(manifest.resolve(r));
    } catch (const Error& e) {
      errors[k] = "record " + std::to_string(set.records[k] + 1) + " (" + r.image_path + "): " +
                  e.what();
    }
  });
  for (const auto& e : errors) {
    if (!e.empty()) fail(ErrorKind::decode, e);
  }
  set.size = images[0].width;
  for (std::size_t k = 0; k < images.size(); ++k) {
    const auto& img = images[k];
    const auto& r = manifest.records[set.records[k]];
    if (img.width != img.height || img.width != set.size) {
      fail(ErrorKind::decode, "record " + std::to_string(set.records[k] + 1) + " (" + r.image_path +
                                  "): chip is " + std::to_string(img.width) + "x" +
                                  std::to_string(img.height) + ", expected " +
                                  std::to_string(set.size) + "x" + std::to_string(set.size));
    }
    const std::size_t area = img.width * img.height;
    std::vector<double> chw(3 * area);
    for (std::size_t p = 0; p < area; ++p) {
      for (std::size_t c = 0; c < 3; ++c) chw[c * area + p] = img.rgb[3 * p + c] / 255.0;
    }
    set.pixels.push_back(std::move(chw));
    set.labels.push_back(r.label);
  }
  return set;
}

std::string_view to_string(Augment augment) { return augment == Augment::flip ? "flip" : "none"; }

Augment parse_augment(std::string_view text) {
  if (text == "none") return Augment::none;
  if (text == "flip") return Augment::flip;
  fail(ErrorKind::config, "unknown augmentation '" + std::string(text) + "' (expected none or flip)");
}

BatchIterator::BatchIterator(std::shared_ptr<const ChipSet> chips, std::size_t batch_size,
                             std::uint64_t seed, Augment augment)
    : chips_(std::move(chips)), batch_size_(batch_size), augment_(augment), rng_(seed) {
  if (batch_size_ == 0) fail(ErrorKind::config, "batch size must be positive");
  order_.resize(chips_->pixels.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  std::shuffle(order_.begin(), order_.end(), rng_);
}

std::size_t BatchIterator::batches() const {
  return (order_.size() + batch_size_ - 1) / batch_size_;
}

std::optional<Batch> BatchIterator::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const std::size_t n = std::min(batch_size_, order_.size() - cursor_);
  const std::size_t s = chips_->size;
  const std::size_t per = 3 * s * s;
  std::vector<double> values(n * per);
  Batch batch;
  std::bernoulli_distribution coin(0.5);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t idx = order_[cursor_ + k];
    const auto& src = chips_->pixels[idx];
    double* dst = values.data() + k * per;
    if (augment_ == Augment::flip && coin(rng_)) {
      for (std::size_t row = 0; row < 3 * s; ++row) {
        std::reverse_copy(src.begin() + static_cast<std::ptrdiff_t>(row * s),
                          src.begin() + static_cast<std::ptrdiff_t>((row + 1) * s), dst + row * s);
      }
    } else {
      std::copy(src.begin(), src.end(), dst);
    }
    batch.labels.push_back(chips_->labels[idx]);
    batch.records.push_back(chips_->records[idx]);
  }
  cursor_ += n;
  batch.images = Tensor({n, 3, s, s}, std::move(values));
  return batch;
}

BatchIterator batch_iter(const Manifest& manifest, Split split, std::size_t batch_size,
                         std::uint64_t seed, Augment augment) {
  return BatchIterator(std::make_shared<const ChipSet>(load_chips(manifest, split)), batch_size,
                       seed, augment);
}

Tensor stack_chips(const ChipSet& chips, std::size_t begin, std::size_t end) {
  if (begin >= end || end > chips.pixels.size()) fail(ErrorKind::shape, "empty chip range");
  const std::size_t s = chips.size;
  const std::size_t per = 3 * s * s;
  std::vector<double> values((end - begin) * per);
  for (std::size_t k = begin; k < end; ++k) {
    std::copy(chips.pixels[k].begin(), chips.pixels[k].end(), values.begin() + static_cast<std::ptrdiff_t>((k - begin) * per));
  }
  return Tensor({end - begin, 3, s, s}, std::move(values));
}

}  // namespace kiln
