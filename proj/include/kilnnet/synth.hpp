#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "kilnnet/dataset.hpp"
#include "kilnnet/geo_tiles.hpp"
#include "kilnnet/image_io.hpp"

namespace kiln {

/// z17 tile whose children carry the first synthetic chips (Lahore).
inline constexpr TileId kSynthOrigin{17, 92609, 53432};

/// One procedural chip of the given class. Each class has its own palette
/// and layout (ring kiln, roof grid, road band, court, crop stripes, ...);
/// position, orientation, colour and noise vary with `seed`.
Image render_chip(int label, std::size_t size, std::uint64_t seed);

struct SynthOptions {
  std::size_t per_class = 50;
  std::size_t chip_size = 64;
  SplitFractions fractions;
  std::uint64_t seed = 0;
};

/// Writes images/<label>/<label>_NNNN.png and manifest.csv under out_dir and
/// returns the split-assigned manifest. Chip k (label-major order) sits on
/// child k % 64 of the z17 tile k / 64 columns east of kSynthOrigin, located
/// at its web-mercator centre.
Manifest synth_generate(const std::string& out_dir, const SynthOptions& options);

}  // namespace kiln
