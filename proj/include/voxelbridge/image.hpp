#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "voxelbridge/binary_io.hpp"
#include "voxelbridge/error.hpp"

namespace voxelbridge {

/// Interleaved RGB raster, values in [0, 1], row-major from the top-left.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> rgb;

  Image() = default;
  Image(int w, int h, float fill = 0.0f) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, fill) {}

  bool empty() const { return width <= 0 || height <= 0; }
  float& at(int x, int y, int c) { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  float at(int x, int y, int c) const { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  friend bool operator==(const Image&, const Image&) = default;
};

/// Single-channel raster used by the metrics.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<double> v;

  GrayImage() = default;
  GrayImage(int w, int h, double fill = 0.0) : width(w), height(h), v(static_cast<std::size_t>(w) * h, fill) {}
  double& at(int x, int y) { return v[static_cast<std::size_t>(y) * width + x]; }
  double at(int x, int y) const { return v[static_cast<std::size_t>(y) * width + x]; }
};

inline std::uint8_t quantize8(float x) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(x, 0.0f, 1.0f) * 255.0f));
}

// PPM P6, maxval 255, single-space separated header.
inline std::string encode_ppm(const Image& img) {
  require(!img.empty(), ErrorKind::invalid_argument, "cannot encode an empty image");
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.reserve(out.size() + img.rgb.size());
  for (float x : img.rgb) out.push_back(static_cast<char>(quantize8(x)));
  return out;
}

inline Image decode_ppm(std::string_view bytes) {
  if (bytes.substr(0, 2) != "P6") fail(ErrorKind::bad_magic, "not a binary PPM (P6) file");
  std::size_t pos = 2;
  auto next_token = [&]() -> long {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) fail(ErrorKind::parse, "malformed PPM header");
    return std::stol(std::string(bytes.substr(start, pos - start)));
  };
  const long w = next_token(), h = next_token(), maxval = next_token();
  require(w > 0 && h > 0, ErrorKind::parse, "PPM dims must be positive");
  require(maxval == 255, ErrorKind::parse, "only 8-bit PPM is supported");
  ++pos;  // single whitespace before the raster
  require(bytes.size() - std::min(pos, bytes.size()) == static_cast<std::size_t>(w * h * 3), ErrorKind::payload_mismatch,
          "PPM raster size does not match its header");
  Image img(static_cast<int>(w), static_cast<int>(h));
  for (std::size_t i = 0; i < img.rgb.size(); ++i)
    img.rgb[i] = static_cast<float>(static_cast<unsigned char>(bytes[pos + i])) / 255.0f;
  return img;
}

inline void write_ppm(const Image& img, const std::filesystem::path& path) { io::write_file(path, encode_ppm(img)); }
inline Image read_ppm(const std::filesystem::path& path) { return decode_ppm(io::read_file(path)); }

namespace detail {
inline void bilinear_coord(int o, int in_n, int out_n, int& i0, int& i1, double& t) {
  double src = (o + 0.5) * (static_cast<double>(in_n) / out_n) - 0.5;
  src = std::clamp(src, 0.0, static_cast<double>(in_n - 1));
  i0 = static_cast<int>(std::floor(src));
  i1 = std::min(i0 + 1, in_n - 1);
  t = src - i0;
}

template <class Get, class Put>
void bilinear(int in_w, int in_h, int out_w, int out_h, Get&& get, Put&& put) {
  std::vector<int> x0(out_w), x1(out_w), y0(out_h), y1(out_h);
  std::vector<double> tx(out_w), ty(out_h);
  for (int x = 0; x < out_w; ++x) bilinear_coord(x, in_w, out_w, x0[x], x1[x], tx[x]);
  for (int y = 0; y < out_h; ++y) bilinear_coord(y, in_h, out_h, y0[y], y1[y], ty[y]);
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x) {
      const double top = std::lerp(get(x0[x], y0[y]), get(x1[x], y0[y]), tx[x]);
      const double bot = std::lerp(get(x0[x], y1[y]), get(x1[x], y1[y]), tx[x]);
      put(x, y, std::lerp(top, bot, ty[y]));
    }
}
}  // namespace detail

/// Bilinear resampling, align-corners-false with edge clamping.
inline Image resize_bilinear(const Image& img, int w, int h) {
  require(!img.empty() && w > 0 && h > 0, ErrorKind::invalid_argument, "resize of an empty image");
  if (w == img.width && h == img.height) return img;
  Image out(w, h);
  for (int c = 0; c < 3; ++c)
    detail::bilinear(
        img.width, img.height, w, h, [&](int x, int y) { return static_cast<double>(img.at(x, y, c)); },
        [&](int x, int y, double v) { out.at(x, y, c) = static_cast<float>(v); });
  return out;
}

inline GrayImage resize_bilinear(const GrayImage& img, int w, int h) {
  require(img.width > 0 && img.height > 0 && w > 0 && h > 0, ErrorKind::invalid_argument, "resize of an empty image");
  if (w == img.width && h == img.height) return img;
  GrayImage out(w, h);
  detail::bilinear(
      img.width, img.height, w, h, [&](int x, int y) { return img.at(x, y); },
      [&](int x, int y, double v) { out.at(x, y) = v; });
  return out;
}

// Luma weights 0.2125 / 0.7154 / 0.0721.
inline GrayImage to_gray(const Image& img) {
  GrayImage g(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      g.at(x, y) = 0.2125 * img.at(x, y, 0) + 0.7154 * img.at(x, y, 1) + 0.0721 * img.at(x, y, 2);
  return g;
}

/// Tiles images left to right; all must share a height.
inline Image hconcat(const std::vector<Image>& tiles, int gap = 2) {
  require(!tiles.empty(), ErrorKind::invalid_argument, "nothing to concatenate");
  int w = 0;
  for (const auto& t : tiles) {
    require(t.height == tiles.front().height, ErrorKind::shape, "montage tiles must share a height");
    w += t.width;
  }
  w += gap * static_cast<int>(tiles.size() - 1);
  Image out(w, tiles.front().height);
  int x0 = 0;
  for (const auto& t : tiles) {
    for (int y = 0; y < t.height; ++y)
      for (int x = 0; x < t.width; ++x)
        for (int c = 0; c < 3; ++c) out.at(x0 + x, y, c) = t.at(x, y, c);
    x0 += t.width + gap;
  }
  return out;
}

}  // namespace voxelbridge
