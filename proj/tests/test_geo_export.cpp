#include <catch_amalgamated.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <json.hpp>
#include <random>

#include "kilnnet/csv.hpp"
#include "kilnnet/error.hpp"
#include "kilnnet/geo_export.hpp"

using namespace kiln;
namespace fs = std::filesystem;

namespace {

const TileId kParent{17, 92609, 53432};

std::map<TileId, double> constant_probs(const TileId& parent, double p) {
  std::map<TileId, double> m;
  for (const auto& c : children_z20(parent)) m[c] = p;
  return m;
}

std::map<TileId, double> random_probs(const TileId& parent, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::map<TileId, double> m;
  for (const auto& c : children_z20(parent)) m[c] = u(rng);
  return m;
}

ErrorKind kind_of(const std::function<void()>& f, std::string* message = nullptr) {
  try {
    f();
  } catch (const Error& e) {
    if (message) *message = e.what();
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::io;
}

std::string temp(const std::string& leaf) { return (fs::temp_directory_path() / leaf).string(); }

}  // namespace

TEST_CASE("heatmap construction") {
  const auto zero = build_heatmap(kParent, constant_probs(kParent, 0.0));
  for (double v : zero.cells) CHECK(v == 0.0);
  CHECK(zero.parent == kParent);

  auto one_hot = constant_probs(kParent, 0.0);
  const TileId hot{20, 92609 * 8 + 5, 53432 * 8 + 2};
  one_hot[hot] = 0.97;
  const auto grid = build_heatmap(kParent, one_hot);
  for (std::size_t i = 0; i < 64; ++i) CHECK(grid.cells[i] == (i == 2 * 8 + 5 ? 0.97 : 0.0));
  CHECK(child_index(hot) == 21);

  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto probs = random_probs(kParent, seed);
    double map_max = 0.0;
    for (const auto& [tile, p] : probs) map_max = std::max(map_max, p);
    const auto g = build_heatmap(kParent, probs);
    CHECK(*std::max_element(g.cells.begin(), g.cells.end()) == map_max);
    const auto children = children_z20(kParent);
    for (std::size_t i = 0; i < 64; ++i) CHECK(g.cells[i] == probs.at(children[i]));
  }
}

TEST_CASE("heatmap errors") {
  auto probs = constant_probs(kParent, 0.1);
  const TileId gone{20, 92609 * 8 + 7, 53432 * 8 + 7};
  probs.erase(gone);
  std::string msg;
  CHECK(kind_of([&] { build_heatmap(kParent, probs); }, &msg) == ErrorKind::completeness);
  CHECK(msg.find("20/740879/427463") != std::string::npos);
  CHECK(kind_of([&] { build_heatmap(TileId{20, 1, 1}, probs); }) == ErrorKind::zoom);
  probs[gone] = 1.5;
  CHECK(kind_of([&] { build_heatmap(kParent, probs); }) == ErrorKind::range);
  // Chips from another parent do not matter.
  probs = constant_probs(kParent, 0.1);
  probs[TileId{20, 0, 0}] = 0.9;
  CHECK(build_heatmap(kParent, probs).cells[0] == 0.1);
}

TEST_CASE("chip aggregation") {
  const TileId t{20, 740873, 427462};
  const std::vector<ChipProbability> chips{{t, 0.25}, {t, 0.75}, {TileId{20, 740874, 427462}, 0.5}};
  CHECK(aggregate_chips(chips, Aggregation::max).at(t) == 0.75);
  CHECK(aggregate_chips(chips, Aggregation::mean).at(t) == 0.5);
  CHECK(aggregate_chips(chips).size() == 2);
  CHECK(kind_of([] {
          aggregate_chips(std::vector<ChipProbability>{{TileId{17, 1, 1}, 0.5}});
        }) == ErrorKind::zoom);
  CHECK(kind_of([&] {
          aggregate_chips(std::vector<ChipProbability>{{t, -0.1}});
        }) == ErrorKind::range);
  CHECK(parse_aggregation("mean") == Aggregation::mean);
  CHECK(kind_of([] { parse_aggregation("median"); }) == ErrorKind::config);
}

TEST_CASE("pgm encoding") {
  CHECK(quantize_probability(0.0) == 0);
  CHECK(quantize_probability(1.0) == 255);
  CHECK(quantize_probability(0.5) == 128);
  CHECK(quantize_probability(0.5 / 255.0) == 1);
  CHECK(quantize_probability(0.49 / 255.0) == 0);
  CHECK(kind_of([] { quantize_probability(1.0 + 1e-12); }) == ErrorKind::range);

  const std::string zero = encode_heatmap_pgm(build_heatmap(kParent, constant_probs(kParent, 0.0)));
  CHECK(zero == std::string("P5\n8 8\n255\n") + std::string(64, '\0'));

  auto probs = random_probs(kParent, 3);
  probs[TileId{20, 92609 * 8, 53432 * 8}] = 1.0;
  const auto grid = build_heatmap(kParent, probs);
  const auto path = temp("kilnnet_heatmap.pgm");
  write_heatmap_pgm(grid, path);
  const GreyImage img = read_pgm(path);
  CHECK(img.width == 8);
  CHECK(img.height == 8);
  CHECK(img.pixels[0] == 255);
  for (std::size_t i = 0; i < 64; ++i) CHECK(img.pixels[i] == quantize_probability(grid.cells[i]));
  fs::remove(path);
}

TEST_CASE("pgm reader rejects malformed files") {
  const auto path = temp("kilnnet_bad.pgm");
  for (const std::string bad : {std::string("P2\n8 8\n255\n") + std::string(64, 'a'),
                                std::string("P5\n8 8\n65535\n") + std::string(128, 'a'),
                                std::string("P5\n8 8\n255\n") + std::string(63, 'a'),
                                std::string("P5\n8\n")}) {
    write_file(path, bad);
    CHECK(kind_of([&] { read_pgm(path); }) == ErrorKind::decode);
  }
  write_file(path, std::string("P5 # comment\n2 1 255\n") + "\x01\x02");
  CHECK(read_pgm(path).pixels == std::vector<std::uint8_t>{1, 2});
  fs::remove(path);
}

TEST_CASE("detections agree with the heatmap") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto probs = random_probs(kParent, seed);
    const auto grid = build_heatmap(kParent, probs);
    for (double threshold : {0.5, 0.9}) {
      const auto dets = detections(probs, threshold, CoordinateMode::mercator);
      std::set<int> cells;
      for (const auto& d : dets) {
        CHECK(d.probability >= threshold);
        cells.insert(child_index(d.tile));
      }
      for (int i = 0; i < 64; ++i) CHECK((grid.cells[i] >= threshold) == (cells.count(i) == 1));
    }
  }
  CHECK(kind_of([] { detections({}, 1.5, CoordinateMode::paper); }) == ErrorKind::config);
}

TEST_CASE("geojson output") {
  const std::string empty = encode_detections_geojson({});
  const auto doc = nlohmann::json::parse(empty);
  CHECK(doc["type"] == "FeatureCollection");
  CHECK(doc["features"].is_array());
  CHECK(doc["features"].empty());

  const TileId t{20, 740873, 427462};
  const std::vector<Detection> one{{t, chip_location(t, CoordinateMode::mercator), 0.97}};
  const auto parsed = nlohmann::json::parse(encode_detections_geojson(one));
  const auto& f = parsed["features"][0];
  CHECK(f["type"] == "Feature");
  CHECK(f["geometry"]["type"] == "Point");
  CHECK(std::abs(f["geometry"]["coordinates"][0].get<double>() - one[0].point.lon) <= 1e-9);
  CHECK(std::abs(f["geometry"]["coordinates"][1].get<double>() - one[0].point.lat) <= 1e-9);
  CHECK(f["properties"]["probability"] == 0.97);
  CHECK(f["properties"]["zoom"] == 20);
  CHECK(f["properties"]["tile_x"] == 740873);
  CHECK(f["properties"]["tile_y"] == 427462);
  CHECK(f["properties"]["coordinate_mode"] == "mercator");

  // The linear map is only meaningful near its anchor tile.
  const TileId near{20, 42300 * 8 + 3, 42290 * 8 + 4};
  const std::vector<Detection> paper{{near, chip_location(near, CoordinateMode::paper), 0.5}};
  const auto p = nlohmann::json::parse(encode_detections_geojson(paper));
  CHECK(p["features"][0]["properties"]["coordinate_mode"] == "paper");
  CHECK(p["features"][0]["geometry"]["coordinates"][1].get<double>() == paper[0].point.lat);

  const std::vector<Detection> off{{t, GeoPoint{91.0, 0.0, CoordinateMode::paper}, 0.5}};
  CHECK(kind_of([&] { encode_detections_geojson(off); }) == ErrorKind::range);
  const std::vector<Detection> far{{t, chip_location(t, CoordinateMode::paper), 0.5}};
  CHECK(kind_of([&] { encode_detections_geojson(far); }) == ErrorKind::range);
}

TEST_CASE("geojson layout") {
  const TileId t{20, 1, 2};
  const std::vector<Detection> one{{t, GeoPoint{0.5, -1.25, CoordinateMode::mercator}, 0.75}};
  CHECK(encode_detections_geojson(one) ==
        "{\n"
        "  \"features\": [\n"
        "    {\n"
        "      \"geometry\": {\n"
        "        \"coordinates\": [\n"
        "          -1.25,\n"
        "          0.5\n"
        "        ],\n"
        "        \"type\": \"Point\"\n"
        "      },\n"
        "      \"properties\": {\n"
        "        \"coordinate_mode\": \"mercator\",\n"
        "        \"probability\": 0.75,\n"
        "        \"tile_x\": 1,\n"
        "        \"tile_y\": 2,\n"
        "        \"zoom\": 20\n"
        "      },\n"
        "      \"type\": \"Feature\"\n"
        "    }\n"
        "  ],\n"
        "  \"type\": \"FeatureCollection\"\n"
        "}\n");
}

TEST_CASE("geojson passes the external reader") {
  const std::string python = KILNNET_PYTHON;
  if (python.empty()) SKIP("no Python interpreter found at configure time");
  for (const auto mode : {CoordinateMode::mercator, CoordinateMode::paper}) {
    const TileId parent = mode == CoordinateMode::mercator ? TileId{17, 92610, 53433}
                                                           : TileId{17, 42300, 42290};
    const auto probs = random_probs(parent, 77);
    const auto dets = detections(probs, 0.3, mode);
    REQUIRE(!dets.empty());
    const auto gj = temp("kilnnet_oracle.geojson");
    const auto csv = temp("kilnnet_oracle.csv");
    write_detections_geojson(dets, gj);
    std::string expected = "tile_x,tile_y,lat,lon,probability\n";
    for (const auto& d : dets) {
      expected += std::to_string(d.tile.x) + "," + std::to_string(d.tile.y) + "," +
                  format_double(d.point.lat) + "," + format_double(d.point.lon) + "," +
                  format_double(d.probability) + "\n";
    }
    write_file(csv, expected);
    const std::string cmd = python + " " + KILNNET_TEST_DATA_DIR "/oracles/geojson_oracle.py " + gj +
                            " " + csv;
    CHECK(std::system(cmd.c_str()) == 0);
    fs::remove(gj);
    fs::remove(csv);
  }
}
