#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <set>

#include "kilnnet/error.hpp"
#include "kilnnet/geo_tiles.hpp"

using namespace kiln;
using Catch::Matchers::WithinAbs;

TEST_CASE("linear tile constants are exact") {
  const TileConstants k;
  CHECK(8.0 * k.d == k.b);
  CHECK(k.b == 45.0 / 8192.0);
  CHECK(k.d == 45.0 / 65536.0);
}

TEST_CASE("paper latitude examples") {
  CHECK(paper_lat_from_tile(42295) == 52.33612060546875);
  CHECK(paper_lat_from_tile(42296) == 52.34161376953125);
  CHECK(paper_lat_from_tile(42293) == 52.32513427734375);
}

TEST_CASE("paper longitude examples") {
  CHECK(paper_lon_from_tile(42295) == 52.33612060546875);
  CHECK(paper_lon_from_tile(42303) == 52.38006591796875);
  CHECK(paper_lon_from_tile(0) == 52.33612060546875 - 42295 * 0.0054931640625);
  CHECK(paper_lon_from_tile(0) == -179.99725341796875);
}

TEST_CASE("neighbouring rows differ by exactly B") {
  for (std::int64_t y = 0; y < (1 << 17); y += 7) {
    CHECK(paper_lat_from_tile(y + 1) - paper_lat_from_tile(y) == kPaperConstants.b);
    CHECK(paper_lon_from_tile(y + 1) - paper_lon_from_tile(y) == kPaperConstants.b);
  }
}

TEST_CASE("corner20 examples") {
  const GeoPoint mid{52.33612060546875, 52.33612060546875, CoordinateMode::paper};
  const GeoPoint corner = corner20(mid);
  CHECK(corner.lat == 52.33886718750000);
  CHECK(corner.lon == 52.33337402343750);
  TileConstants flat;
  flat.d = 0.0;
  const GeoPoint same = corner20(mid, flat);
  CHECK(same.lat == mid.lat);
  CHECK(same.lon == mid.lon);
  CHECK_THROWS_AS(corner20(GeoPoint{1.0, 1.0, CoordinateMode::mercator}), Error);
}

TEST_CASE("children_z20 grid") {
  const auto origin = children_z20({17, 0, 0});
  REQUIRE(origin.size() == 64);
  for (const auto& t : origin) {
    CHECK(t.zoom == 20);
    CHECK(t.x < 8);
    CHECK(t.y < 8);
  }
  const TileId parent{17, 92609, 53432};
  const auto kids = children_z20(parent);
  REQUIRE(kids.size() == 64);
  CHECK(std::set<TileId>(kids.begin(), kids.end()).size() == 64);
  for (int i = 0; i < 64; ++i) {
    CHECK(kids[i].x == parent.x * 8 + i % 8);
    CHECK(kids[i].y == parent.y * 8 + i / 8);
    CHECK(parent_z17(kids[i]) == parent);
    CHECK(child_index(kids[i]) == i);
  }
  try {
    children_z20({20, 0, 0});
    FAIL("zoom 20 accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::zoom);
  }
  CHECK(expanded_chip_count(787'100) == 50'374'400);
  CHECK(expanded_chip_count(3) == 192);
}

TEST_CASE("mercator corners and centres") {
  const auto nw = mercator_tile_corner({0, 0, 0});
  CHECK(nw.lon == -180.0);
  CHECK_THAT(nw.lat, WithinAbs(85.0511287798066, 1e-12));
  for (int z : {1, 5, 17, 20}) {
    CHECK(mercator_tile_corner({z, 0, 0}).lon == -180.0);
    const std::uint64_t half = std::uint64_t{1} << (z - 1);
    const auto centre = mercator_tile_corner({z, half, half});
    CHECK_THAT(centre.lat, WithinAbs(0.0, 1e-12));
    CHECK(centre.lon == 0.0);
    const auto t = mercator_latlon_to_tile({0.0, 0.0, CoordinateMode::mercator}, z);
    CHECK(t.x == half);
    CHECK(t.y == half);
  }
  // Independent oracle values (log-tan form of the projection).
  const TileId lahore{17, 92609, 53432};
  CHECK(mercator_latlon_to_tile({31.5204, 74.3587, CoordinateMode::mercator}, 17) == lahore);
  CHECK(mercator_latlon_to_tile({31.5204, 74.3587, CoordinateMode::mercator}, 20) ==
        TileId{20, 740873, 427462});
  const auto b = mercator_tile_bounds(lahore);
  CHECK_THAT(b.north, WithinAbs(31.522361470421437, 1e-12));
  CHECK_THAT(b.south, WithinAbs(31.520020155192814, 1e-12));
  CHECK_THAT(b.west, WithinAbs(74.35821533203125, 1e-12));
  CHECK_THAT(b.east, WithinAbs(74.3609619140625, 1e-12));
}

TEST_CASE("mercator round trip over random tiles") {
  std::mt19937_64 rng(17);
  for (int z : {17, 20}) {
    std::uniform_int_distribution<std::uint64_t> coord(0, (std::uint64_t{1} << z) - 1);
    for (int i = 0; i < 1000; ++i) {
      const TileId t{z, coord(rng), coord(rng)};
      CHECK(mercator_latlon_to_tile(mercator_tile_center(t), z) == t);
    }
  }
}

TEST_CASE("mercator range errors") {
  auto kind = [](double lat, double lon) {
    try {
      mercator_latlon_to_tile({lat, lon, CoordinateMode::mercator}, 17);
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::io;
  };
  CHECK(kind(86.0, 0.0) == ErrorKind::range);
  CHECK(kind(-86.0, 0.0) == ErrorKind::range);
  CHECK(kind(0.0, 180.0) == ErrorKind::range);
  CHECK(kind(NAN, 0.0) == ErrorKind::range);
  CHECK_NOTHROW(mercator_latlon_to_tile({kMercatorMaxLat, -180.0, CoordinateMode::mercator}, 17));
  CHECK_THROWS_AS(TileId({17, 1u << 17, 0}).validate(), Error);
}

TEST_CASE("children tile the parent exactly") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::uint64_t> coord(0, (1u << 17) - 1);
  for (int trial = 0; trial < 50; ++trial) {
    const TileId parent{17, coord(rng), coord(rng)};
    const auto pb = mercator_tile_bounds(parent);
    const auto kids = children_z20(parent);
    for (int i = 0; i < 64; ++i) {
      const auto cb = mercator_tile_bounds(kids[i]);
      const int r = i / 8, c = i % 8;
      // Shared edges between neighbours are bit-identical.
      if (c > 0) CHECK(cb.west == mercator_tile_bounds(kids[i - 1]).east);
      if (r > 0) CHECK(cb.north == mercator_tile_bounds(kids[i - 8]).south);
      if (r == 0) CHECK(cb.north == pb.north);
      if (r == 7) CHECK(cb.south == pb.south);
      if (c == 0) CHECK(cb.west == pb.west);
      if (c == 7) CHECK(cb.east == pb.east);
    }
  }
}

TEST_CASE("chip locations") {
  const TileId parent{17, 42295, 42295};
  const auto kids = children_z20(parent);
  const GeoPoint first = chip_location(kids[0], CoordinateMode::paper);
  CHECK(first.lat == 52.33886718750000);
  CHECK(first.lon == 52.33337402343750);
  const GeoPoint last = chip_location(kids[63], CoordinateMode::paper);
  CHECK(last.lat == 52.33886718750000 - 7 * kPaperConstants.d);
  CHECK(last.lon == 52.33337402343750 + 7 * kPaperConstants.d);
  const GeoPoint m = chip_location(kids[9], CoordinateMode::mercator);
  CHECK(m.mode == CoordinateMode::mercator);
  CHECK(mercator_latlon_to_tile(m, 20) == kids[9]);
  CHECK_THROWS_AS(chip_location(parent, CoordinateMode::paper), Error);
}

TEST_CASE("coordinate mode names") {
  CHECK(parse_coordinate_mode("paper") == CoordinateMode::paper);
  CHECK(to_string(CoordinateMode::mercator) == "mercator");
  CHECK_THROWS_AS(parse_coordinate_mode("utm"), Error);
}
