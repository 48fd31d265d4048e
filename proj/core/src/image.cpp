#include "textspot/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace textspot::data {

void write_ppm(const Image& img, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("write_ppm: cannot open " + path);
  os << "P6\n" << img.width << " " << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.rgb.data()),
           static_cast<std::streamsize>(img.rgb.size()));
  if (!os) throw std::runtime_error("write_ppm: write failed for " + path);
}

Image read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_ppm: cannot open " + path);
  std::string magic;
  is >> magic;
  if (magic != "P6") throw std::runtime_error("read_ppm: " + path + " is not a P6 ppm");
  int w = 0, h = 0, maxv = 0;
  // Skip whitespace and '#' comment lines between header tokens.
  const auto next_int = [&](int& out) {
    for (;;) {
      int c = is.peek();
      if (c == '#') {
        std::string line;
        std::getline(is, line);
      } else if (std::isspace(c)) {
        is.get();
      } else {
        break;
      }
    }
    is >> out;
  };
  next_int(w);
  next_int(h);
  next_int(maxv);
  if (!is || w <= 0 || h <= 0 || maxv != 255) {
    throw std::runtime_error("read_ppm: unsupported header in " + path);
  }
  is.get();  // single whitespace after maxval
  Image img(w, h);
  is.read(reinterpret_cast<char*>(img.rgb.data()),
          static_cast<std::streamsize>(img.rgb.size()));
  if (!is) throw std::runtime_error("read_ppm: truncated pixel data in " + path);
  return img;
}

namespace {

std::array<double, 3> sample_bilinear(const Image& img, double x, double y,
                                      std::array<uint8_t, 3> fill) {
  if (x < -0.5 || y < -0.5 || x > img.width - 0.5 || y > img.height - 0.5) {
    return {double(fill[0]), double(fill[1]), double(fill[2])};
  }
  const double fx0 = std::floor(x);
  const double fy0 = std::floor(y);
  const double ax = x - fx0;
  const double ay = y - fy0;
  std::array<double, 3> out = {0, 0, 0};
  for (int dy = 0; dy <= 1; ++dy) {
    for (int dx = 0; dx <= 1; ++dx) {
      const double w = (dx ? ax : 1 - ax) * (dy ? ay : 1 - ay);
      if (w == 0.0) continue;
      const int xi = std::clamp(static_cast<int>(fx0) + dx, 0, img.width - 1);
      const int yi = std::clamp(static_cast<int>(fy0) + dy, 0, img.height - 1);
      const uint8_t* p = img.px(xi, yi);
      for (int c = 0; c < 3; ++c) out[c] += w * p[c];
    }
  }
  return out;
}

uint8_t to_u8(double v) {
  return static_cast<uint8_t>(std::clamp(v + 0.5, 0.0, 255.0));
}

}  // namespace

Image resize_bilinear(const Image& img, int new_w, int new_h) {
  if (new_w <= 0 || new_h <= 0) throw std::invalid_argument("resize_bilinear: bad size");
  Image out(new_w, new_h);
  const double sx = static_cast<double>(img.width) / new_w;
  const double sy = static_cast<double>(img.height) / new_h;
  for (int y = 0; y < new_h; ++y) {
    for (int x = 0; x < new_w; ++x) {
      const auto v = sample_bilinear(img, (x + 0.5) * sx - 0.5, (y + 0.5) * sy - 0.5,
                                     {0, 0, 0});
      uint8_t* p = out.px(x, y);
      for (int c = 0; c < 3; ++c) p[c] = to_u8(v[c]);
    }
  }
  return out;
}

Image rotate_about_center(const Image& img, double angle_rad,
                          std::array<uint8_t, 3> fill) {
  Image out(img.width, img.height, fill);
  const double cx = img.width * 0.5;
  const double cy = img.height * 0.5;
  const double ca = std::cos(angle_rad);
  const double sa = std::sin(angle_rad);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      // Inverse map: rotate destination back by -angle.
      const double dx = (x + 0.5) - cx;
      const double dy = (y + 0.5) - cy;
      const double sxp = ca * dx + sa * dy + cx - 0.5;
      const double syp = -sa * dx + ca * dy + cy - 0.5;
      const auto v = sample_bilinear(img, sxp, syp, fill);
      uint8_t* p = out.px(x, y);
      for (int c = 0; c < 3; ++c) p[c] = to_u8(v[c]);
    }
  }
  return out;
}

Image crop(const Image& img, int x0, int y0, int w, int h) {
  if (x0 < 0 || y0 < 0 || w <= 0 || h <= 0 || x0 + w > img.width ||
      y0 + h > img.height) {
    throw std::invalid_argument("crop: region out of bounds");
  }
  Image out(w, h);
  for (int y = 0; y < h; ++y) {
    std::copy(img.px(x0, y0 + y), img.px(x0, y0 + y) + static_cast<size_t>(w) * 3,
              out.px(0, y));
  }
  return out;
}

}  // namespace textspot::data
