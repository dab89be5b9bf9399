#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "textseg/grid.hpp"

namespace textseg {

struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  int channels = 1;  // 1 = gray, 4 = RGBA
  std::vector<std::uint8_t> pixels;
};

std::string encode_png(const Image& img);
Image decode_png(const std::string& bytes);

/// Fixed RGBA colors for class ids 1..13; background (0) is fully transparent.
/// Ids outside 1..13 render as opaque mid-gray.
std::array<std::uint8_t, 4> palette_color(int class_id);

/// Intensity slice (raw HU) to 8-bit gray via the [-175, 250] window.
Image gray_slice_image(const SliceImage& slice);

/// Label slice to RGBA with the class palette.
Image palette_slice_image(const SliceImage& slice);

}  // namespace textseg
