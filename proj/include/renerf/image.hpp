// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

namespace renerf {

// Interleaved, row-major, values nominally in [0,1].
struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, int c, double fill = 0.0)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * static_cast<std::size_t>(c), fill) {}

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
  double& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) * static_cast<std::size_t>(channels) + static_cast<std::size_t>(c)]; }
  double at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) * static_cast<std::size_t>(channels) + static_cast<std::size_t>(c)]; }
  bool same_shape(const Image& o) const { return width == o.width && height == o.height && channels == o.channels; }
};

// 8-bit RGB (or grey for single-channel images), values clamped to [0,1].
void write_png8(const std::filesystem::path& path, const Image& image);
// 16-bit greyscale of values / scale, clamped to [0,1].
void write_png16(const std::filesystem::path& path, const std::vector<double>& values, int width, int height,
                 double scale);
Image read_png8(const std::filesystem::path& path);

// Raw little-endian float32 sidecar: "RNFRAW1 width height channels\n" then the data.
void write_float_sidecar(const std::filesystem::path& path, const std::vector<double>& values, int width, int height,
                         int channels);

}  // namespace renerf
