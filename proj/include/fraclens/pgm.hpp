#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fraclens/tensor.hpp"

namespace fraclens {

/// 8-bit grayscale raster as stored in binary PGM (P5, maxval 255).
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major

  friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

/// Comment lines are written as "# <text>" after the magic.
void write_pgm(const std::filesystem::path& path, const GrayImage& image, const std::vector<std::string>& comments = {});
GrayImage read_pgm(const std::filesystem::path& path);

/// round(clamp(v, 0, 1) * 255) per value.
GrayImage quantize_gray(std::span<const double> values, std::size_t width, std::size_t height);

/// [channels, h, w] tensor holding value / 255, the image replicated across channels.
Tensor gray_to_tensor(const GrayImage& image, std::size_t channels = 1);

}  // namespace fraclens
