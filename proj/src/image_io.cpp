#include "kilnnet/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>
#include <vector>

#include "kilnnet/error.hpp"

namespace kiln {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_error_handler(png_structp png, png_const_charp message) {
  auto* text = static_cast<std::string*>(png_get_error_ptr(png));
  if (text) *text = message;
  png_longjmp(png, 1);
}

void png_warning_handler(png_structp, png_const_charp) {}

// The setjmp frames below hold only trivially destructible locals; every
// C++ object they touch lives in the caller.
bool encode(png_structp png, png_infop info, std::FILE* file, const Image& image) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_init_io(png, file);
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width),
               static_cast<png_uint_32>(image.height), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < image.height; ++y) {
    png_write_row(png, image.rgb.data() + 3 * y * image.width);
  }
  png_write_end(png, nullptr);
  return true;
}

bool read_header(png_structp png, png_infop info, std::FILE* file, std::size_t* width,
                 std::size_t* height, std::size_t* row_bytes) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_init_io(png, file);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) {
    if (png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
    png_set_gray_to_rgb(png);
  }
  if ((color & PNG_COLOR_MASK_ALPHA) || png_get_valid(png, info, PNG_INFO_tRNS)) {
    png_set_strip_alpha(png);
  }
  png_read_update_info(png, info);
  *width = png_get_image_width(png, info);
  *height = png_get_image_height(png, info);
  *row_bytes = png_get_rowbytes(png, info);
  return true;
}

bool read_pixels(png_structp png, png_bytep* rows) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_read_image(png, rows);
  png_read_end(png, nullptr);
  return true;
}

}  // namespace

void write_png(const std::string& path, const Image& image) {
  if (image.width == 0 || image.height == 0 || image.rgb.size() != 3 * image.width * image.height) {
    fail(ErrorKind::shape, "image buffer does not match its dimensions");
  }
  File file(std::fopen(path.c_str(), "wb"));
  if (!file) fail(ErrorKind::io, "cannot open " + path + " for writing");
  std::string message;
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, &message, png_error_handler, png_warning_handler);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail(ErrorKind::io, "libpng initialisation failed");
  }
  const bool ok = encode(png, info, file.get(), image);
  png_destroy_write_struct(&png, &info);
  if (!ok) fail(ErrorKind::io, "cannot write " + path + ": " + message);
  if (std::fflush(file.get()) != 0) fail(ErrorKind::io, "cannot write " + path);
}

Image read_png(const std::string& path) {
  File file(std::fopen(path.c_str(), "rb"));
  if (!file) fail(ErrorKind::decode, path + ": cannot open");
  png_byte signature[8];
  if (std::fread(signature, 1, 8, file.get()) != 8 || png_sig_cmp(signature, 0, 8) != 0) {
    fail(ErrorKind::decode, path + ": not a PNG file");
  }
  std::string message;
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, &message, png_error_handler, png_warning_handler);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail(ErrorKind::decode, path + ": libpng initialisation failed");
  }
  Image image;
  std::size_t row_bytes = 0;
  if (!read_header(png, info, file.get(), &image.width, &image.height, &row_bytes)) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::decode, path + ": " + message);
  }
  if (row_bytes != 3 * image.width) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::decode, path + ": unsupported pixel layout");
  }
  image.rgb.resize(3 * image.width * image.height);
  std::vector<png_bytep> rows(image.height);
  for (std::size_t y = 0; y < image.height; ++y) rows[y] = image.rgb.data() + 3 * y * image.width;
  const bool ok = read_pixels(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  if (!ok) fail(ErrorKind::decode, path + ": " + message);
  return image;
}

}  // namespace kiln
