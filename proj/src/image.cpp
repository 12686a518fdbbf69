// SPDX-License-Identifier: Apache-2.0
#include "renerf/image.hpp"

#include <fmt/format.h>
#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <memory>
#include <stdexcept>

namespace renerf {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_png_rows(const std::filesystem::path& path, int width, int height, int color_type, int bit_depth,
                    const std::vector<unsigned char>& bytes, std::size_t row_bytes) {
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw std::runtime_error(fmt::format("cannot open {} for writing", path.string()));
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error(fmt::format("failed writing png {}", path.string()));
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y)
    png_write_row(png, const_cast<png_bytep>(bytes.data() + static_cast<std::size_t>(y) * row_bytes));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png8(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) throw std::invalid_argument("write_png8: need 1 or 3 channels");
  std::vector<unsigned char> bytes(image.data.size());
  for (std::size_t i = 0; i < bytes.size(); ++i)
    bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(image.data[i], 0.0, 1.0) * 255.0));
  write_png_rows(path, image.width, image.height, image.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, 8,
                 bytes, static_cast<std::size_t>(image.width) * static_cast<std::size_t>(image.channels));
}

void write_png16(const std::filesystem::path& path, const std::vector<double>& values, int width, int height,
                 double scale) {
  if (values.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height))
    throw std::invalid_argument("write_png16: size mismatch");
  const double inv = scale > 0.0 ? 1.0 / scale : 0.0;
  std::vector<unsigned char> bytes(values.size() * 2);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto v = static_cast<std::uint16_t>(std::lround(std::clamp(values[i] * inv, 0.0, 1.0) * 65535.0));
    bytes[2 * i] = static_cast<unsigned char>(v >> 8);  // PNG is big-endian
    bytes[2 * i + 1] = static_cast<unsigned char>(v & 0xFF);
  }
  write_png_rows(path, width, height, PNG_COLOR_TYPE_GRAY, 16, bytes, static_cast<std::size_t>(width) * 2);
}

Image read_png8(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw std::runtime_error(fmt::format("cannot read png {}", path.string()));
  img.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> buffer(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&img);
    throw std::runtime_error(fmt::format("failed decoding png {}", path.string()));
  }
  Image out(static_cast<int>(img.width), static_cast<int>(img.height), 3);
  for (std::size_t i = 0; i < buffer.size(); ++i) out.data[i] = buffer[i] / 255.0;
  return out;
}

void write_float_sidecar(const std::filesystem::path& path, const std::vector<double>& values, int width, int height,
                         int channels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  out << fmt::format("RNFRAW1 {} {} {}\n", width, height, channels);
  std::vector<char> bytes(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(values[i]));
    for (int b = 0; b < 4; ++b) bytes[4 * i + static_cast<std::size_t>(b)] = static_cast<char>((bits >> (8 * b)) & 0xFFu);
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace renerf
