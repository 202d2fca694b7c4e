#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace kiln {

/// Linear z17 geo-referencing constants. All four are dyadic rationals, so
/// every value below is exact in binary floating point and B == 8 * D.
struct TileConstants {
  std::int64_t a = 42295;
  double b = 0.0054931640625;
  double c = 52.33612060546875;
  double d = 6.866455078125e-4;
};

inline constexpr TileConstants kPaperConstants{};

/// z17 tiles expand into 8x8 z20 chips.
inline constexpr int kParentZoom = 17;
inline constexpr int kChildZoom = 20;
inline constexpr int kChildrenPerAxis = 8;
inline constexpr int kChildrenPerTile = kChildrenPerAxis * kChildrenPerAxis;

enum class CoordinateMode { paper, mercator };

std::string_view to_string(CoordinateMode mode);
CoordinateMode parse_coordinate_mode(std::string_view text);

struct TileId {
  int zoom = 0;
  std::uint64_t x = 0;
  std::uint64_t y = 0;

  /// Throws a range error unless 0 <= zoom <= 30 and x, y < 2^zoom.
  void validate() const;
  bool operator==(const TileId&) const = default;
  auto operator<=>(const TileId&) const = default;
};

struct GeoPoint {
  double lat = 0.0;
  double lon = 0.0;
  CoordinateMode mode = CoordinateMode::mercator;
};

/// Latitude limit of the square web-mercator world.
inline constexpr double kMercatorMaxLat = 85.05112877980659;

/// ((y - A) * B) + C. Defined for any integer, including negatives.
double paper_lat_from_tile(std::int64_t y_tile, const TileConstants& k = kPaperConstants);
/// ((x - A) * B) + C.
double paper_lon_from_tile(std::int64_t x_tile, const TileConstants& k = kPaperConstants);

/// Midpoint of a z17 tile under the linear map.
GeoPoint paper_midpoint(const TileId& tile17, const TileConstants& k = kPaperConstants);

/// (lat + 4D, lon - 4D). Throws a validation error for a mercator point.
GeoPoint corner20(const GeoPoint& mid, const TileConstants& k = kPaperConstants);

/// The 8x8 z20 grid {8x..8x+7} x {8y..8y+7}, row-major (y outer, x inner).
/// Throws a zoom error unless tile.zoom == 17.
std::vector<TileId> children_z20(const TileId& tile17);

/// z17 parent of a z20 chip. Throws a zoom error unless tile.zoom == 20.
TileId parent_z17(const TileId& tile20);

/// Row-major position of a z20 chip inside its parent's 8x8 grid.
int child_index(const TileId& tile20);

/// Number of z20 chips produced from `parents` z17 tiles.
constexpr std::uint64_t expanded_chip_count(std::uint64_t parents) {
  return parents * static_cast<std::uint64_t>(kChildrenPerTile);
}

struct TileBounds {
  double north = 0.0;
  double south = 0.0;
  double west = 0.0;
  double east = 0.0;
};

/// Northwest corner of a web-mercator tile.
GeoPoint mercator_tile_corner(const TileId& tile);
GeoPoint mercator_tile_center(const TileId& tile);
TileBounds mercator_tile_bounds(const TileId& tile);

/// Tile containing the point. Throws a range error for latitudes outside
/// +-kMercatorMaxLat or longitudes outside [-180, 180).
TileId mercator_latlon_to_tile(const GeoPoint& point, int zoom);

/// Geolocation of a z20 chip. Mercator mode gives the tile centre. Paper
/// mode starts from corner20 of the parent's midpoint and steps D per child
/// row (southwards) and column (eastwards), giving the chip's corner.
GeoPoint chip_location(const TileId& tile20, CoordinateMode mode,
                       const TileConstants& k = kPaperConstants);

}  // namespace kiln
