#include "kilnnet/geo_tiles.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "kilnnet/error.hpp"

namespace kiln {

namespace {

constexpr int kMaxZoom = 30;

double tiles_at(int zoom) { return std::ldexp(1.0, zoom); }

double lat_of_row(double y, int zoom) {
  const double n = std::numbers::pi * (1.0 - 2.0 * y / tiles_at(zoom));
  return std::atan(std::sinh(n)) * 180.0 / std::numbers::pi;
}

double lon_of_column(double x, int zoom) { return x / tiles_at(zoom) * 360.0 - 180.0; }

}  // namespace

std::string_view to_string(CoordinateMode mode) {
  return mode == CoordinateMode::paper ? "paper" : "mercator";
}

CoordinateMode parse_coordinate_mode(std::string_view text) {
  if (text == "paper") return CoordinateMode::paper;
  if (text == "mercator") return CoordinateMode::mercator;
  fail(ErrorKind::config, "unknown coordinate mode '" + std::string(text) +
                              "' (expected paper or mercator)");
}

void TileId::validate() const {
  if (zoom < 0 || zoom > kMaxZoom) {
    fail(ErrorKind::range, "zoom " + std::to_string(zoom) + " outside [0, 30]");
  }
  const std::uint64_t limit = std::uint64_t{1} << zoom;
  if (x >= limit || y >= limit) {
    fail(ErrorKind::range, "tile (" + std::to_string(zoom) + ", " + std::to_string(x) + ", " +
                               std::to_string(y) + ") outside the 2^zoom grid");
  }
}

double paper_lat_from_tile(std::int64_t y_tile, const TileConstants& k) {
  return (static_cast<double>(y_tile - k.a) * k.b) + k.c;
}

double paper_lon_from_tile(std::int64_t x_tile, const TileConstants& k) {
  return (static_cast<double>(x_tile - k.a) * k.b) + k.c;
}

GeoPoint paper_midpoint(const TileId& tile17, const TileConstants& k) {
  if (tile17.zoom != kParentZoom) {
    fail(ErrorKind::zoom, "paper midpoint needs a zoom-17 tile, got zoom " +
                              std::to_string(tile17.zoom));
  }
  return {paper_lat_from_tile(static_cast<std::int64_t>(tile17.y), k),
          paper_lon_from_tile(static_cast<std::int64_t>(tile17.x), k), CoordinateMode::paper};
}

GeoPoint corner20(const GeoPoint& mid, const TileConstants& k) {
  if (mid.mode != CoordinateMode::paper) {
    fail(ErrorKind::validation, "corner20 applies to paper-mode points only");
  }
  return {mid.lat + 4 * k.d, mid.lon - 4 * k.d, CoordinateMode::paper};
}

std::vector<TileId> children_z20(const TileId& tile17) {
  if (tile17.zoom != kParentZoom) {
    fail(ErrorKind::zoom, "children_z20 needs a zoom-17 tile, got zoom " +
                              std::to_string(tile17.zoom));
  }
  tile17.validate();
  std::vector<TileId> out;
  out.reserve(kChildrenPerTile);
  for (std::uint64_t dy = 0; dy < kChildrenPerAxis; ++dy) {
    for (std::uint64_t dx = 0; dx < kChildrenPerAxis; ++dx) {
      out.push_back({kChildZoom, tile17.x * kChildrenPerAxis + dx, tile17.y * kChildrenPerAxis + dy});
    }
  }
  return out;
}

TileId parent_z17(const TileId& tile20) {
  if (tile20.zoom != kChildZoom) {
    fail(ErrorKind::zoom, "parent_z17 needs a zoom-20 tile, got zoom " +
                              std::to_string(tile20.zoom));
  }
  return {kParentZoom, tile20.x / kChildrenPerAxis, tile20.y / kChildrenPerAxis};
}

int child_index(const TileId& tile20) {
  parent_z17(tile20);
  return static_cast<int>((tile20.y % kChildrenPerAxis) * kChildrenPerAxis +
                          tile20.x % kChildrenPerAxis);
}

GeoPoint mercator_tile_corner(const TileId& tile) {
  tile.validate();
  return {lat_of_row(static_cast<double>(tile.y), tile.zoom),
          lon_of_column(static_cast<double>(tile.x), tile.zoom), CoordinateMode::mercator};
}

GeoPoint mercator_tile_center(const TileId& tile) {
  tile.validate();
  return {lat_of_row(static_cast<double>(tile.y) + 0.5, tile.zoom),
          lon_of_column(static_cast<double>(tile.x) + 0.5, tile.zoom), CoordinateMode::mercator};
}

TileBounds mercator_tile_bounds(const TileId& tile) {
  tile.validate();
  const double x = static_cast<double>(tile.x), y = static_cast<double>(tile.y);
  return {lat_of_row(y, tile.zoom), lat_of_row(y + 1.0, tile.zoom), lon_of_column(x, tile.zoom),
          lon_of_column(x + 1.0, tile.zoom)};
}

TileId mercator_latlon_to_tile(const GeoPoint& point, int zoom) {
  if (zoom < 0 || zoom > kMaxZoom) {
    fail(ErrorKind::range, "zoom " + std::to_string(zoom) + " outside [0, 30]");
  }
  if (!(std::abs(point.lat) <= kMercatorMaxLat)) {
    fail(ErrorKind::range, "latitude " + std::to_string(point.lat) + " outside web-mercator bounds");
  }
  if (!(point.lon >= -180.0 && point.lon < 180.0)) {
    fail(ErrorKind::range, "longitude " + std::to_string(point.lon) + " outside [-180, 180)");
  }
  const double n = tiles_at(zoom);
  const double lat = point.lat * std::numbers::pi / 180.0;
  const double fx = (point.lon + 180.0) / 360.0 * n;
  const double fy = (1.0 - std::asinh(std::tan(lat)) / std::numbers::pi) / 2.0 * n;
  const auto clamp = [n](double f) {
    const double v = std::floor(f);
    return static_cast<std::uint64_t>(std::min(std::max(v, 0.0), n - 1.0));
  };
  return {zoom, clamp(fx), clamp(fy)};
}

GeoPoint chip_location(const TileId& tile20, CoordinateMode mode, const TileConstants& k) {
  if (tile20.zoom != kChildZoom) {
    fail(ErrorKind::zoom, "chip_location needs a zoom-20 tile, got zoom " +
                              std::to_string(tile20.zoom));
  }
  if (mode == CoordinateMode::mercator) return mercator_tile_center(tile20);
  const GeoPoint corner = corner20(paper_midpoint(parent_z17(tile20), k), k);
  const double dx = static_cast<double>(tile20.x % kChildrenPerAxis);
  const double dy = static_cast<double>(tile20.y % kChildrenPerAxis);
  return {corner.lat - dy * k.d, corner.lon + dx * k.d, CoordinateMode::paper};
}

}  // namespace kiln
