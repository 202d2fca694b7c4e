#include "kilnnet/geo_export.hpp"

#include <cmath>
#include <json.hpp>

#include "kilnnet/csv.hpp"
#include "kilnnet/error.hpp"

namespace kiln {

namespace {

std::string tile_text(const TileId& t) {
  return std::to_string(t.zoom) + "/" + std::to_string(t.x) + "/" + std::to_string(t.y);
}

}  // namespace

std::string_view to_string(Aggregation aggregation) {
  return aggregation == Aggregation::max ? "max" : "mean";
}

Aggregation parse_aggregation(std::string_view text) {
  if (text == "max") return Aggregation::max;
  if (text == "mean") return Aggregation::mean;
  fail(ErrorKind::config, "unknown aggregation '" + std::string(text) + "' (max or mean)");
}

std::map<TileId, double> aggregate_chips(std::span<const ChipProbability> chips,
                                         Aggregation aggregation) {
  std::map<TileId, std::pair<double, std::size_t>> acc;
  for (const auto& c : chips) {
    if (c.tile.zoom != kChildZoom) {
      fail(ErrorKind::zoom, "chip " + tile_text(c.tile) + " is not a zoom 20 tile");
    }
    c.tile.validate();
    if (!(c.probability >= 0.0 && c.probability <= 1.0)) {
      fail(ErrorKind::range, "chip " + tile_text(c.tile) + " has probability " +
                                 format_double(c.probability) + " outside [0,1]");
    }
    auto [it, fresh] = acc.try_emplace(c.tile, c.probability, 1);
    if (fresh) continue;
    if (aggregation == Aggregation::max) {
      it->second.first = std::max(it->second.first, c.probability);
    } else {
      it->second.first += c.probability;
    }
    ++it->second.second;
  }
  std::map<TileId, double> out;
  for (const auto& [tile, v] : acc) {
    out.emplace_hint(out.end(), tile,
                     aggregation == Aggregation::max ? v.first
                                                     : v.first / static_cast<double>(v.second));
  }
  return out;
}

HeatmapGrid build_heatmap(const TileId& parent17, const std::map<TileId, double>& chip_probs) {
  HeatmapGrid grid;
  grid.parent = parent17;
  const auto children = children_z20(parent17);
  for (std::size_t i = 0; i < children.size(); ++i) {
    const auto it = chip_probs.find(children[i]);
    if (it == chip_probs.end()) {
      fail(ErrorKind::completeness, "heatmap for " + tile_text(parent17) + " is missing chip " +
                                        tile_text(children[i]));
    }
    if (!(it->second >= 0.0 && it->second <= 1.0)) {
      fail(ErrorKind::range, "chip " + tile_text(children[i]) + " has probability " +
                                 format_double(it->second) + " outside [0,1]");
    }
    grid.cells[i] = it->second;
  }
  return grid;
}

HeatmapGrid build_heatmap(const TileId& parent17, std::span<const ChipProbability> chips,
                          Aggregation aggregation) {
  return build_heatmap(parent17, aggregate_chips(chips, aggregation));
}

std::uint8_t quantize_probability(double p) {
  if (!(p >= 0.0 && p <= 1.0)) {
    fail(ErrorKind::range, "probability " + format_double(p) + " outside [0,1]");
  }
  return static_cast<std::uint8_t>(std::floor(255.0 * p + 0.5));
}

std::string encode_heatmap_pgm(const HeatmapGrid& grid) {
  std::string out = "P5\n8 8\n255\n";
  for (double p : grid.cells) out.push_back(static_cast<char>(quantize_probability(p)));
  return out;
}

void write_heatmap_pgm(const HeatmapGrid& grid, const std::string& path) {
  write_file(path, encode_heatmap_pgm(grid));
}

GreyImage read_pgm(const std::string& path) {
  const std::string data = read_file(path);
  std::size_t pos = 0;
  auto bad = [&](const std::string& msg) -> void {
    fail(ErrorKind::decode, path + ": " + msg);
  };
  auto skip_space = [&] {
    while (pos < data.size()) {
      if (data[pos] == '#') {
        while (pos < data.size() && data[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(data[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&](const char* what) {
    skip_space();
    const std::size_t start = pos;
    while (pos < data.size() && std::isdigit(static_cast<unsigned char>(data[pos]))) ++pos;
    if (start == pos || pos - start > 9) bad(std::string("bad ") + what);
    return static_cast<std::size_t>(std::stoul(data.substr(start, pos - start)));
  };
  if (data.compare(0, 2, "P5") != 0) bad("not a binary PGM (P5)");
  pos = 2;
  GreyImage img;
  img.width = number("width");
  img.height = number("height");
  const std::size_t maxval = number("maxval");
  if (maxval != 255) bad("maxval " + std::to_string(maxval) + " is not 255");
  if (pos >= data.size() || !std::isspace(static_cast<unsigned char>(data[pos]))) {
    bad("missing separator before pixel data");
  }
  ++pos;
  if (data.size() - pos != img.width * img.height) {
    bad("expected " + std::to_string(img.width * img.height) + " pixel bytes, found " +
        std::to_string(data.size() - pos));
  }
  img.pixels.assign(data.begin() + static_cast<std::ptrdiff_t>(pos), data.end());
  return img;
}

std::vector<Detection> detections(const std::map<TileId, double>& chip_probs, double threshold,
                                  CoordinateMode mode) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    fail(ErrorKind::config, "threshold " + format_double(threshold) + " outside [0,1]");
  }
  std::vector<Detection> out;
  for (const auto& [tile, p] : chip_probs) {
    if (p >= threshold) out.push_back({tile, chip_location(tile, mode), p});
  }
  return out;
}

std::string encode_detections_geojson(std::span<const Detection> detections) {
  auto features = nlohmann::json::array();
  for (const auto& d : detections) {
    if (!(d.point.lat >= -90.0 && d.point.lat <= 90.0 && d.point.lon >= -180.0 &&
          d.point.lon <= 180.0)) {
      fail(ErrorKind::range, "detection at " + tile_text(d.tile) + " lies outside WGS 84 bounds");
    }
    features.push_back({
        {"type", "Feature"},
        {"geometry", {{"type", "Point"}, {"coordinates", {d.point.lon, d.point.lat}}}},
        {"properties",
         {{"probability", d.probability},
          {"zoom", d.tile.zoom},
          {"tile_x", d.tile.x},
          {"tile_y", d.tile.y},
          {"coordinate_mode", std::string(to_string(d.point.mode))}}},
    });
  }
  const nlohmann::json doc = {{"type", "FeatureCollection"}, {"features", features}};
  return doc.dump(2) + "\n";
}

void write_detections_geojson(std::span<const Detection> detections, const std::string& path) {
  write_file(path, encode_detections_geojson(detections));
}

}  // namespace kiln
