#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kilnnet/geo_tiles.hpp"

namespace kiln {

/// Kiln probability of one z20 chip.
struct ChipProbability {
  TileId tile;
  double probability = 0.0;
};

/// How several probabilities for the same chip combine.
enum class Aggregation { max, mean };

std::string_view to_string(Aggregation aggregation);
Aggregation parse_aggregation(std::string_view text);

/// One probability per z20 chip. Probabilities must lie in [0,1] (range
/// error) and tiles must be zoom 20 (zoom error).
std::map<TileId, double> aggregate_chips(std::span<const ChipProbability> chips,
                                         Aggregation aggregation = Aggregation::max);

struct HeatmapGrid {
  TileId parent;
  /// children_z20 order: row-major, north row first.
  std::array<double, kChildrenPerTile> cells{};
};

/// Grid for one z17 tile. Chips of other parents are ignored; a missing
/// child is a completeness error naming the tile.
HeatmapGrid build_heatmap(const TileId& parent17, const std::map<TileId, double>& chip_probs);
HeatmapGrid build_heatmap(const TileId& parent17, std::span<const ChipProbability> chips,
                          Aggregation aggregation = Aggregation::max);

/// floor(255 * p + 0.5): round half up.
std::uint8_t quantize_probability(double p);

/// 8-bit grey raster.
struct GreyImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
};

/// "P5\n8 8\n255\n" followed by the 64 quantised cells.
std::string encode_heatmap_pgm(const HeatmapGrid& grid);
void write_heatmap_pgm(const HeatmapGrid& grid, const std::string& path);
/// Reads a binary PGM with maxval 255; anything else is a decode error.
GreyImage read_pgm(const std::string& path);

struct Detection {
  TileId tile;
  GeoPoint point;
  double probability = 0.0;
};

/// One detection per chip whose probability is at least `threshold`, in
/// tile order, located by chip_location.
std::vector<Detection> detections(const std::map<TileId, double>& chip_probs, double threshold,
                                  CoordinateMode mode);

/// RFC 7946 FeatureCollection of Point features ([lon, lat]) carrying
/// probability, zoom, tile_x, tile_y and coordinate_mode. Coordinates are
/// printed with round-trip precision.
std::string encode_detections_geojson(std::span<const Detection> detections);
void write_detections_geojson(std::span<const Detection> detections, const std::string& path);

}  // namespace kiln
