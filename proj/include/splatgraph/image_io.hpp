#pragma once

#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

namespace splatgraph {

namespace image_detail {

struct FileHandle {
  std::FILE* fp = nullptr;
  explicit FileHandle(const std::string& path, const char* mode)
      : fp(std::fopen(path.c_str(), mode)) {}
  ~FileHandle() {
    if (fp) std::fclose(fp);
  }
  FileHandle(const FileHandle&) = delete;
  FileHandle& operator=(const FileHandle&) = delete;
};

inline std::uint16_t to_u16(double v) {
  double c = v < 0.0 ? 0.0 : v > 1.0 ? 1.0 : v;
  return static_cast<std::uint16_t>(std::lround(c * 65535.0));
}

inline std::uint8_t to_u8(double v) {
  double c = v < 0.0 ? 0.0 : v > 1.0 ? 1.0 : v;
  return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

}  // namespace image_detail

// Writes a pixel-major RGB image with values in [0, 1] as 16-bit PNG.
inline void write_rgb16(const std::string& path, const std::vector<double>& pixels,
                        int width, int height) {
  if (pixels.size() != static_cast<std::size_t>(width) * height * 3)
    throw std::invalid_argument("write_rgb16: size mismatch for " + path);
  image_detail::FileHandle file(path, "wb");
  if (!file.fp) throw std::runtime_error("write_rgb16: cannot open " + path);
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("write_rgb16: libpng setup failed");
  }
  std::vector<std::uint16_t> row(static_cast<std::size_t>(width) * 3);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("write_rgb16: encode failed for " + path);
  }
  png_init_io(png, file.fp);
  png_set_IHDR(png, info, width, height, 16, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_set_swap(png);  // rows below are host little-endian
  for (int y = 0; y < height; ++y) {
    for (int i = 0; i < width * 3; ++i)
      row[i] = image_detail::to_u16(pixels[static_cast<std::size_t>(y) * width * 3 + i]);
    png_write_row(png, reinterpret_cast<png_bytep>(row.data()));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// Reads any PNG back as pixel-major RGB doubles in [0, 1]; palette, gray, and
// alpha variants are normalized to 16-bit RGB first.
inline std::vector<double> read_rgb16(const std::string& path, int* width,
                                      int* height) {
  image_detail::FileHandle file(path, "rb");
  if (!file.fp) throw std::runtime_error("read_rgb16: cannot open " + path);
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_rgb16: libpng setup failed");
  }
  std::vector<std::uint16_t> row;
  std::vector<double> pixels;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_rgb16: decode failed for " + path);
  }
  png_init_io(png, file.fp);
  png_read_info(png, info);
  png_uint_32 w = png_get_image_width(png, info);
  png_uint_32 h = png_get_image_height(png, info);
  png_set_expand(png);
  if (png_get_color_type(png, info) & PNG_COLOR_MASK_ALPHA)
    png_set_strip_alpha(png);
  if (!(png_get_color_type(png, info) & PNG_COLOR_MASK_COLOR))
    png_set_gray_to_rgb(png);
  png_set_expand_16(png);
  png_set_swap(png);
  png_read_update_info(png, info);
  if (png_get_rowbytes(png, info) != w * 6) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_rgb16: unsupported layout in " + path);
  }
  row.resize(static_cast<std::size_t>(w) * 3);
  pixels.resize(static_cast<std::size_t>(w) * h * 3);
  for (png_uint_32 y = 0; y < h; ++y) {
    png_read_row(png, reinterpret_cast<png_bytep>(row.data()), nullptr);
    for (png_uint_32 i = 0; i < w * 3; ++i)
      pixels[static_cast<std::size_t>(y) * w * 3 + i] = row[i] / 65535.0;
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  *width = static_cast<int>(w);
  *height = static_cast<int>(h);
  return pixels;
}

// Writes per-pixel values in [0, 1] as 8-bit grayscale PNG (used for masks).
inline void write_gray8(const std::string& path, const std::vector<double>& values,
                        int width, int height) {
  if (values.size() != static_cast<std::size_t>(width) * height)
    throw std::invalid_argument("write_gray8: size mismatch for " + path);
  image_detail::FileHandle file(path, "wb");
  if (!file.fp) throw std::runtime_error("write_gray8: cannot open " + path);
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("write_gray8: libpng setup failed");
  }
  std::vector<std::uint8_t> row(static_cast<std::size_t>(width));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("write_gray8: encode failed for " + path);
  }
  png_init_io(png, file.fp);
  png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x)
      row[x] = image_detail::to_u8(values[static_cast<std::size_t>(y) * width + x]);
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// Reads an 8-bit grayscale PNG back into [0, 1] doubles.
inline std::vector<double> read_gray8(const std::string& path, int* width,
                                      int* height) {
  image_detail::FileHandle file(path, "rb");
  if (!file.fp) throw std::runtime_error("read_gray8: cannot open " + path);
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_gray8: libpng setup failed");
  }
  std::vector<std::uint8_t> row;
  std::vector<double> values;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_gray8: decode failed for " + path);
  }
  png_init_io(png, file.fp);
  png_read_info(png, info);
  png_uint_32 w = png_get_image_width(png, info);
  png_uint_32 h = png_get_image_height(png, info);
  if (png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_gray8: expected grayscale in " + path);
  }
  if (png_get_bit_depth(png, info) == 16) png_set_scale_16(png);
  if (png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);
  row.resize(w);
  values.resize(static_cast<std::size_t>(w) * h);
  for (png_uint_32 y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (png_uint_32 x = 0; x < w; ++x)
      values[static_cast<std::size_t>(y) * w + x] = row[x] / 255.0;
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  *width = static_cast<int>(w);
  *height = static_cast<int>(h);
  return values;
}

}  // namespace splatgraph
