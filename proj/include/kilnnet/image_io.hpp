#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace kiln {

/// 8-bit RGB raster, row-major, interleaved.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;

  std::uint8_t* pixel(std::size_t x, std::size_t y) { return rgb.data() + 3 * (y * width + x); }
  const std::uint8_t* pixel(std::size_t x, std::size_t y) const {
    return rgb.data() + 3 * (y * width + x);
  }
};

/// Throws an I/O error if the file cannot be written.
void write_png(const std::string& path, const Image& image);

/// Any PNG that libpng can read; palette, grey, 16-bit and alpha inputs are
/// converted to 8-bit RGB. Throws a decode error naming the path.
Image read_png(const std::string& path);

}  // namespace kiln
