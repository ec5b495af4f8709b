#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "vitac/tensor.hpp"

namespace vitac {

// 3-channel image, CHW layout, values in [0,1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> px;  // 3 * height * width

  static Image filled(int h, int w, double r, double g, double b) {
    Image im;
    im.height = h;
    im.width = w;
    im.px.resize(static_cast<size_t>(3) * h * w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        im.at(0, y, x) = r;
        im.at(1, y, x) = g;
        im.at(2, y, x) = b;
      }
    return im;
  }

  double& at(int c, int y, int x) {
    return px[(static_cast<size_t>(c) * height + y) * width + x];
  }
  double at(int c, int y, int x) const {
    return px[(static_cast<size_t>(c) * height + y) * width + x];
  }

  void set(int y, int x, double r, double g, double b) {
    if (y < 0 || y >= height || x < 0 || x >= width) return;
    at(0, y, x) = r;
    at(1, y, x) = g;
    at(2, y, x) = b;
  }
};

namespace detail {

inline void png_chunk(std::ofstream& out, const char type[4],
                      const std::vector<uint8_t>& payload) {
  auto be32 = [](uint32_t v) {
    return std::array<uint8_t, 4>{static_cast<uint8_t>(v >> 24),
                                  static_cast<uint8_t>(v >> 16),
                                  static_cast<uint8_t>(v >> 8),
                                  static_cast<uint8_t>(v)};
  };
  auto len = be32(static_cast<uint32_t>(payload.size()));
  out.write(reinterpret_cast<const char*>(len.data()), 4);
  out.write(type, 4);
  if (!payload.empty())
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size()));
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(type), 4);
  if (!payload.empty()) crc = crc32(crc, payload.data(), static_cast<uInt>(payload.size()));
  auto c = be32(static_cast<uint32_t>(crc));
  out.write(reinterpret_cast<const char*>(c.data()), 4);
}

}  // namespace detail

// Minimal 8-bit RGB PNG writer (human-inspection renders only).
inline void write_png(const Image& im, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot open '" + path + "' for writing");
  static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  out.write(reinterpret_cast<const char*>(sig), 8);

  std::vector<uint8_t> ihdr(13);
  auto put32 = [&](std::vector<uint8_t>& v, size_t off, uint32_t x) {
    v[off] = static_cast<uint8_t>(x >> 24);
    v[off + 1] = static_cast<uint8_t>(x >> 16);
    v[off + 2] = static_cast<uint8_t>(x >> 8);
    v[off + 3] = static_cast<uint8_t>(x);
  };
  put32(ihdr, 0, static_cast<uint32_t>(im.width));
  put32(ihdr, 4, static_cast<uint32_t>(im.height));
  ihdr[8] = 8;   // bit depth
  ihdr[9] = 2;   // RGB
  ihdr[10] = ihdr[11] = ihdr[12] = 0;
  detail::png_chunk(out, "IHDR", ihdr);

  std::vector<uint8_t> raw;
  raw.reserve(static_cast<size_t>(im.height) * (1 + 3 * im.width));
  for (int y = 0; y < im.height; ++y) {
    raw.push_back(0);  // no filter
    for (int x = 0; x < im.width; ++x)
      for (int c = 0; c < 3; ++c) {
        double v = im.at(c, y, x);
        v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        raw.push_back(static_cast<uint8_t>(v * 255.0 + 0.5));
      }
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> compressed(bound);
  require(compress2(compressed.data(), &bound, raw.data(),
                    static_cast<uLong>(raw.size()), 6) == Z_OK,
          "png deflate failed for '" + path + "'");
  compressed.resize(bound);
  detail::png_chunk(out, "IDAT", compressed);
  detail::png_chunk(out, "IEND", {});
}

}  // namespace vitac
