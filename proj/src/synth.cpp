#include "kilnnet/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>

#include "kilnnet/error.hpp"
#include "kilnnet/hash.hpp"
#include "kilnnet/parallel.hpp"

namespace kiln {

namespace {

using Rgb = std::array<double, 3>;
using Rng = std::mt19937_64;

class Canvas {
 public:
  explicit Canvas(std::size_t size) : size_(size), data_(3 * size * size, 0.0) {}

  std::size_t size() const { return size_; }

  void fill(const Rgb& c) {
    for (std::size_t p = 0; p < size_ * size_; ++p) set(p, c, 1.0);
  }

  // Paints every pixel whose centre, in unit coordinates [0,1)^2, satisfies
  // `inside`.
  void paint(const std::function<bool(double, double)>& inside, const Rgb& c, double alpha = 1.0) {
    const double inv = 1.0 / static_cast<double>(size_);
    for (std::size_t y = 0; y < size_; ++y) {
      for (std::size_t x = 0; x < size_; ++x) {
        if (inside((static_cast<double>(x) + 0.5) * inv, (static_cast<double>(y) + 0.5) * inv)) {
          set(y * size_ + x, c, alpha);
        }
      }
    }
  }

  void noise(double sigma, Rng& rng) {
    std::normal_distribution<double> n(0.0, sigma);
    for (double& v : data_) v += n(rng);
  }

  void shift(double delta) {
    for (double& v : data_) v += delta;
  }

  Image to_image() const {
    Image img{size_, size_, std::vector<std::uint8_t>(3 * size_ * size_)};
    for (std::size_t i = 0; i < data_.size(); ++i) {
      const double v = std::clamp(data_[i], 0.0, 1.0);
      img.rgb[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
    return img;
  }

 private:
  void set(std::size_t p, const Rgb& c, double alpha) {
    for (std::size_t k = 0; k < 3; ++k) data_[3 * p + k] = (1 - alpha) * data_[3 * p + k] + alpha * c[k];
  }

  std::size_t size_;
  std::vector<double> data_;
};

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Rgb jitter(const Rgb& c, Rng& rng, double amount = 0.04) {
  return {c[0] + uniform(rng, -amount, amount), c[1] + uniform(rng, -amount, amount),
          c[2] + uniform(rng, -amount, amount)};
}

// Coordinates of (x, y) in a frame centred at (cx, cy) and rotated by theta.
struct Frame {
  double cx, cy, cos_t, sin_t;
  Frame(double x, double y, double theta)
      : cx(x), cy(y), cos_t(std::cos(theta)), sin_t(std::sin(theta)) {}
  double u(double x, double y) const { return (x - cx) * cos_t + (y - cy) * sin_t; }
  double v(double x, double y) const { return -(x - cx) * sin_t + (y - cy) * cos_t; }
};

auto disc(double cx, double cy, double r) {
  return [=](double x, double y) { return (x - cx) * (x - cx) + (y - cy) * (y - cy) < r * r; };
}

double angle(Rng& rng) { return uniform(rng, 0.0, std::numbers::pi); }

void brick_kiln(Canvas& c, Rng& rng) {
  c.fill(jitter({0.76, 0.66, 0.50}, rng));
  const Frame f(uniform(rng, 0.38, 0.62), uniform(rng, 0.38, 0.62), angle(rng));
  const double a = uniform(rng, 0.30, 0.36), b = uniform(rng, 0.17, 0.22), t = 0.09;
  auto ellipse = [&f](double ra, double rb) {
    return [=](double x, double y) {
      const double u = f.u(x, y) / ra, v = f.v(x, y) / rb;
      return u * u + v * v < 1.0;
    };
  };
  c.paint(ellipse(a, b), jitter({0.50, 0.20, 0.13}, rng));
  c.paint(ellipse(a - t, b - t), jitter({0.62, 0.50, 0.40}, rng));
  const double cx = f.cx + 0.5 * (a - t) * f.cos_t, cy = f.cy + 0.5 * (a - t) * f.sin_t;
  c.paint(disc(cx, cy, 0.035), {0.12, 0.10, 0.10});
}

void house(Canvas& c, Rng& rng) {
  c.fill(jitter({0.55, 0.55, 0.52}, rng));
  const Frame f(uniform(rng, 0.0, 0.2), uniform(rng, 0.0, 0.2), uniform(rng, -0.3, 0.3));
  const double period = uniform(rng, 0.18, 0.22), side = period * 0.6;
  const Rgb roof = jitter({0.88, 0.86, 0.82}, rng);
  c.paint([=](double x, double y) {
    const double u = std::fmod(f.u(x, y) + 10.0, period), v = std::fmod(f.v(x, y) + 10.0, period);
    return u < side && v < side;
  }, roof);
}

void road(Canvas& c, Rng& rng) {
  c.fill(jitter({0.45, 0.50, 0.35}, rng));
  const Frame f(uniform(rng, 0.35, 0.65), uniform(rng, 0.35, 0.65), angle(rng));
  const double half = uniform(rng, 0.07, 0.09);
  c.paint([=](double x, double y) { return std::abs(f.v(x, y)) < half; },
          jitter({0.28, 0.28, 0.30}, rng));
  c.paint([=](double x, double y) {
    return std::abs(f.v(x, y)) < 0.012 && std::fmod(f.u(x, y) + 10.0, 0.12) < 0.07;
  }, {0.92, 0.92, 0.85});
}

void tennis_court(Canvas& c, Rng& rng) {
  c.fill(jitter({0.35, 0.55, 0.35}, rng));
  const Frame f(uniform(rng, 0.42, 0.58), uniform(rng, 0.42, 0.58), angle(rng));
  const double a = uniform(rng, 0.30, 0.34), b = uniform(rng, 0.17, 0.20), w = 0.02;
  c.paint([=](double x, double y) { return std::abs(f.u(x, y)) < a && std::abs(f.v(x, y)) < b; },
          jitter({0.22, 0.42, 0.66}, rng));
  const Rgb line{0.95, 0.95, 0.95};
  c.paint([=](double x, double y) {
    const double u = std::abs(f.u(x, y)), v = std::abs(f.v(x, y));
    const bool border = (u < a && v < b) && (u > a - w || v > b - w);
    return border || (u < w / 2 && v < b);
  }, line);
}

void farm(Canvas& c, Rng& rng) {
  const Frame f(0.5, 0.5, angle(rng));
  const double period = uniform(rng, 0.14, 0.18), phase = uniform(rng, 0.0, period);
  c.fill(jitter({0.55, 0.70, 0.30}, rng));
  c.paint([=](double x, double y) { return std::fmod(f.u(x, y) + 10.0 + phase, period) < period / 2; },
          jitter({0.78, 0.74, 0.38}, rng));
}

void sparse_trees(Canvas& c, Rng& rng) {
  c.fill(jitter({0.72, 0.65, 0.50}, rng));
  const int n = static_cast<int>(uniform(rng, 4.0, 8.0));
  for (int i = 0; i < n; ++i) {
    c.paint(disc(uniform(rng, 0.05, 0.95), uniform(rng, 0.05, 0.95), uniform(rng, 0.05, 0.08)),
            jitter({0.15, 0.35, 0.12}, rng));
  }
}

void dense_trees(Canvas& c, Rng& rng) {
  c.fill(jitter({0.10, 0.28, 0.09}, rng));
  for (int i = 0; i < 45; ++i) {
    c.paint(disc(uniform(rng, 0.0, 1.0), uniform(rng, 0.0, 1.0), uniform(rng, 0.05, 0.10)),
            jitter({0.18, 0.40, 0.14}, rng, 0.07));
  }
}

void orchard(Canvas& c, Rng& rng) {
  c.fill(jitter({0.50, 0.40, 0.28}, rng));
  const Frame f(uniform(rng, 0.0, 0.2), uniform(rng, 0.0, 0.2), uniform(rng, -0.25, 0.25));
  const double period = uniform(rng, 0.15, 0.18), r = period * 0.3;
  c.paint([=](double x, double y) {
    const double u = std::fmod(f.u(x, y) + 10.0, period) - period / 2;
    const double v = std::fmod(f.v(x, y) + 10.0, period) - period / 2;
    return u * u + v * v < r * r;
  }, jitter({0.20, 0.48, 0.15}, rng));
}

void parking(Canvas& c, Rng& rng) {
  c.fill(jitter({0.36, 0.36, 0.38}, rng));
  const Frame f(0.5, 0.5, angle(rng));
  const double period = uniform(rng, 0.11, 0.13);
  c.paint([=](double x, double y) { return std::fmod(f.u(x, y) + 10.0, period) < 0.018; },
          {0.93, 0.93, 0.93});
  const int cars = static_cast<int>(uniform(rng, 3.0, 7.0));
  for (int i = 0; i < cars; ++i) {
    const double slot = std::floor(uniform(rng, -4.0, 4.0));
    const double cu = (slot + 0.5) * period + 0.009, cv = uniform(rng, -0.35, 0.35);
    const Rgb colour{uniform(rng, 0.1, 0.9), uniform(rng, 0.1, 0.9), uniform(rng, 0.1, 0.9)};
    c.paint([=](double x, double y) {
      return std::abs(f.u(x, y) - cu) < period * 0.3 && std::abs(f.v(x, y) - cv) < 0.08;
    }, colour);
  }
}

void park(Canvas& c, Rng& rng) {
  c.fill(jitter({0.36, 0.70, 0.30}, rng));
  const Frame f(0.5, 0.5, angle(rng));
  const double amp = uniform(rng, 0.08, 0.18), freq = uniform(rng, 4.0, 8.0), off = uniform(rng, -0.15, 0.15);
  c.paint([=](double x, double y) {
    return std::abs(f.v(x, y) - off - amp * std::sin(freq * f.u(x, y))) < 0.035;
  }, jitter({0.82, 0.76, 0.60}, rng));
  for (int i = 0; i < 3; ++i) {
    c.paint(disc(uniform(rng, 0.1, 0.9), uniform(rng, 0.1, 0.9), uniform(rng, 0.05, 0.07)),
            jitter({0.16, 0.42, 0.14}, rng));
  }
}

void barren_land(Canvas& c, Rng& rng) {
  c.fill(jitter({0.82, 0.74, 0.60}, rng));
  for (int i = 0; i < 12; ++i) {
    const double shade = uniform(rng, -0.10, 0.10);
    c.paint(disc(uniform(rng, 0.0, 1.0), uniform(rng, 0.0, 1.0), uniform(rng, 0.08, 0.2)),
            {0.82 + shade, 0.74 + shade, 0.60 + shade}, 0.5);
  }
}

using Painter = void (*)(Canvas&, Rng&);
constexpr std::array<Painter, kNumClasses> kPainters{
    brick_kiln, house, road, tennis_court, farm, sparse_trees,
    dense_trees, orchard, parking, park, barren_land};

}  // namespace

Image render_chip(int label, std::size_t size, std::uint64_t seed) {
  if (label < 0 || label >= kNumClasses) {
    fail(ErrorKind::label, "label index " + std::to_string(label) + " outside [0, 11)");
  }
  if (size < 16) fail(ErrorKind::config, "chip size must be at least 16 px");
  Rng rng(seed);
  Canvas canvas(size);
  kPainters[static_cast<std::size_t>(label)](canvas, rng);
  canvas.shift(uniform(rng, -0.04, 0.04));
  canvas.noise(0.03, rng);
  return canvas.to_image();
}

Manifest synth_generate(const std::string& out_dir, const SynthOptions& options) {
  if (options.chip_size < 16) fail(ErrorKind::config, "chip size must be at least 16 px");
  if (options.per_class == 0) fail(ErrorKind::config, "per-class count must be positive");
  namespace fs = std::filesystem;
  Manifest manifest;
  manifest.base_dir = out_dir;
  for (int label = 0; label < kNumClasses; ++label) {
    const std::string name(label_name(label));
    std::error_code ec;
    fs::create_directories(fs::path(out_dir) / "images" / name, ec);
    if (ec) fail(ErrorKind::io, "cannot create " + (fs::path(out_dir) / "images" / name).string() + ": " + ec.message());
    for (std::size_t i = 0; i < options.per_class; ++i) {
      const std::size_t k = static_cast<std::size_t>(label) * options.per_class + i;
      const TileId parent{17, kSynthOrigin.x + k / kChildrenPerTile, kSynthOrigin.y};
      const TileId tile = children_z20(parent)[k % kChildrenPerTile];
      const GeoPoint at = mercator_tile_center(tile);
      char file[64];
      std::snprintf(file, sizeof file, "_%04zu.png", i);
      ChipRecord r;
      r.image_path = "images/" + name + "/" + name + file;
      r.label = label;
      r.lat = at.lat;
      r.lon = at.lon;
      r.zoom = tile.zoom;
      r.tile_x = tile.x;
      r.tile_y = tile.y;
      manifest.records.push_back(std::move(r));
    }
  }
  parallel_for(manifest.records.size(), [&](std::size_t k) {
    const auto& r = manifest.records[k];
    const std::uint64_t chip_seed = fnv1a64(r.image_path, options.seed);
    write_png(manifest.resolve(r), render_chip(r.label, options.chip_size, chip_seed));
  });
  manifest = split_assign(std::move(manifest), options.fractions, options.seed);
  write_manifest(manifest, (fs::path(out_dir) / "manifest.csv").string());
  return manifest;
}

}  // namespace kiln
