#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "outpaint/tensor.hpp"

namespace outpaint {

// 8-bit interleaved raster, 1 (gray), 3 (RGB) or 4 (RGBA) channels.
struct Raster {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> data;

  std::uint8_t at(int y, int x, int c) const { return data[(y * width + x) * channels + c]; }
};

// Encoding is fixed (compression level, no timestamps) so equal rasters
// always produce equal bytes.
std::string encode_png(const Raster& raster);
Raster decode_png(const std::string& bytes);
Raster read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Raster& raster);

// [3, H, W] tensor in [-1, 1] <-> RGB raster. Values are clamped and rounded.
Raster to_raster(const Tensor& image);
// Drops alpha; gray is replicated to three channels.
Tensor to_tensor(const Raster& raster);

Tensor read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const Tensor& image);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace outpaint
