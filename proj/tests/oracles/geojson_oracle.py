"""Independent reader for detection GeoJSON files.

usage: geojson_oracle.py detections.geojson expected.csv

expected.csv has the header tile_x,tile_y,lat,lon,probability. The file is
parsed with the standard json module, validated with the `geojson` package
(or shapely when that is missing) plus explicit RFC 7946 structural checks,
and every feature is compared with the expected row. Prints the largest
coordinate error and exits non-zero on any mismatch.
"""
import csv
import json
import math
import sys


def validate_with_library(doc):
    try:
        import geojson
    except ImportError:
        geojson = None
    if geojson is not None:
        obj = geojson.loads(json.dumps(doc))
        if not obj.is_valid:
            raise SystemExit(f"geojson rejects file: {obj.errors()}")
        return "geojson " + geojson.__version__
    import shapely
    from shapely.geometry import shape
    for f in doc["features"]:
        if not shape(f["geometry"]).is_valid:
            raise SystemExit("shapely rejects a geometry")
    return "shapely " + shapely.__version__


def main():
    path, expected_path = sys.argv[1], sys.argv[2]
    with open(path, "rb") as fh:
        raw = fh.read()
    doc = json.loads(raw.decode("utf-8"))
    reader = validate_with_library(doc)

    assert doc["type"] == "FeatureCollection", "not a FeatureCollection"
    assert isinstance(doc["features"], list)
    with open(expected_path, newline="") as fh:
        expected = list(csv.DictReader(fh))
    if len(expected) != len(doc["features"]):
        raise SystemExit(f"{len(doc['features'])} features, expected {len(expected)}")

    worst = 0.0
    for feature, row in zip(doc["features"], expected):
        assert feature["type"] == "Feature"
        geom = feature["geometry"]
        assert geom["type"] == "Point"
        lon, lat = geom["coordinates"]
        assert -180.0 <= lon <= 180.0 and -90.0 <= lat <= 90.0, "position out of range"
        props = feature["properties"]
        for key in ("probability", "zoom", "tile_x", "tile_y", "coordinate_mode"):
            assert key in props, f"missing property {key}"
        assert props["tile_x"] == int(row["tile_x"]) and props["tile_y"] == int(row["tile_y"])
        assert math.isclose(props["probability"], float(row["probability"]), abs_tol=1e-12)
        worst = max(worst, abs(lat - float(row["lat"])), abs(lon - float(row["lon"])))

    print(f"reader={reader} features={len(expected)} max_coord_error={worst:.3e}")
    if worst > 1e-9:
        raise SystemExit("coordinates differ by more than 1e-9")


if __name__ == "__main__":
    main()
