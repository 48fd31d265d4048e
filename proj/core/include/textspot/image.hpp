#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace textspot::data {

/// 8-bit RGB image, rows top to bottom.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> rgb;  // height * width * 3

  Image() = default;
  Image(int w, int h, std::array<uint8_t, 3> fill = {0, 0, 0})
      : width(w), height(h), rgb(static_cast<size_t>(w) * h * 3) {
    for (size_t i = 0; i < rgb.size(); i += 3) {
      rgb[i] = fill[0];
      rgb[i + 1] = fill[1];
      rgb[i + 2] = fill[2];
    }
  }

  uint8_t* px(int x, int y) { return rgb.data() + (static_cast<size_t>(y) * width + x) * 3; }
  const uint8_t* px(int x, int y) const {
    return rgb.data() + (static_cast<size_t>(y) * width + x) * 3;
  }
};

void write_ppm(const Image& img, const std::string& path);
Image read_ppm(const std::string& path);

Image resize_bilinear(const Image& img, int new_w, int new_h);

/// Rotate about the canvas center; the output canvas keeps the input size and
/// uncovered pixels take `fill`. Positive angles rotate +x toward +y (y runs
/// down the image), matching the point transform used in augmentation.
Image rotate_about_center(const Image& img, double angle_rad,
                          std::array<uint8_t, 3> fill);

Image crop(const Image& img, int x0, int y0, int w, int h);

}  // namespace textspot::data
