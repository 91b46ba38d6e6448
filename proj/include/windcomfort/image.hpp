#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace wc {

using Rgb = std::array<std::uint8_t, 3>;

Rgb viridis(double t);  // t clamped to [0, 1]

// 8-bit RGB image, rows top to bottom.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // width * height * 3
};

RgbImage render_viridis(std::span<const float> plane, int height, int width, double lo, double hi);

std::vector<std::uint8_t> encode_png(const RgbImage& img);
void write_png(const std::filesystem::path& path, const RgbImage& img);
// Width and height from a PNG stream's header.
std::pair<int, int> png_dimensions(std::span<const std::uint8_t> bytes);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

}  // namespace wc
