#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace neurotopo {

// 8-bit grayscale raster, row-major, row 0 at the top.
struct GrayImage {
  int width{0};
  int height{0};
  std::vector<std::uint8_t> pixels;

  GrayImage() = default;
  GrayImage(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {}

  std::uint8_t& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }

  bool operator==(const GrayImage&) const = default;
};

// Binary PGM (P5, maxval 255).
std::vector<std::uint8_t> encode_pgm(const GrayImage& img);
GrayImage decode_pgm(const std::vector<std::uint8_t>& bytes);
void write_pgm(const std::filesystem::path& path, const GrayImage& img);
GrayImage read_pgm(const std::filesystem::path& path);

// Half-pixel-center bilinear resampling to a new size, rounding half away
// from zero.
GrayImage resize_bilinear(const GrayImage& img, int width, int height);

} // namespace neurotopo
