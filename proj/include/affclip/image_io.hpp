#pragma once

#include "affclip/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace affclip {

using Bytes = std::vector<std::uint8_t>;
using GrayMap = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic>;  // H x W

/// RGB image, channels-last (H*W) x 3, values in [0, 1].
struct Image {
  Index height = 0;
  Index width = 0;
  RowMatrix<float> rgb;

  Image() = default;
  Image(Index h, Index w) : height(h), width(w), rgb(RowMatrix<float>::Zero(h * w, 3)) {}

  float& at(Index y, Index x, Index c) { return rgb(y * width + x, c); }
  float at(Index y, Index x, Index c) const { return rgb(y * width + x, c); }
};

/// Single-channel raster with its integer levels preserved (no gamma handling).
struct GrayRaster {
  GrayMap values;
  int bit_depth = 8;  // 8, 16, or 32 for float rasters

  double max_level() const { return bit_depth == 32 ? 1.0 : static_cast<double>((1u << bit_depth) - 1u); }
};

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

/// Decodes PNG or JPEG (detected from magic bytes) into 8-bit-derived RGB.
Image decode_image(std::span<const std::uint8_t> bytes, const std::string& origin = "<memory>");
Image read_image(const std::filesystem::path& path);

/// Grayscale PNG (8/16-bit; colour files must have equal channels) or a float
/// raster stored as a tensor file with a "heatmap" entry.
GrayRaster read_gray(const std::filesystem::path& path);

Bytes encode_png_rgb8(const Image& image);
Bytes encode_png_gray8(const Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>& levels);
Bytes encode_png_gray16(const Eigen::Array<std::uint16_t, Eigen::Dynamic, Eigen::Dynamic>& levels);

/// Decoded 16-bit grayscale PNG levels (used by clients of the heatmap wire format).
Eigen::Array<std::uint16_t, Eigen::Dynamic, Eigen::Dynamic> decode_png_gray16(std::span<const std::uint8_t> bytes);

Image resize_image(const Image& image, Index height, Index width);

}  // namespace affclip
