#pragma once

// Planar float image container, raw little-endian float sidecar I/O, and a
// minimal RGB PNG writer on top of zlib. PNGs are for human inspection only;
// all metrics and training read the float sidecars.

#include <zlib.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "idnerf/common.hpp"
#include "idnerf/tensor.hpp"

namespace idnerf {

// Planar 3xHxW radiance image, values nominally in [0,1].
struct Image {
  int64_t height = 0, width = 0;
  std::vector<double> data;  // channel-major, 3*H*W

  Image() = default;
  Image(int64_t h, int64_t w) : height(h), width(w), data(3 * h * w, 0.0) {}

  double& at(int64_t c, int64_t y, int64_t x) {
    return data[(c * height + y) * width + x];
  }
  double at(int64_t c, int64_t y, int64_t x) const {
    return data[(c * height + y) * width + x];
  }

  Tensor to_tensor() const {
    return Tensor::from({3, height, width}, data);
  }
  static Image from_tensor(const Tensor& t) {
    check(t.rank() == 3 && t.shape()[0] == 3, "Image: tensor must be [3,H,W]");
    Image im(t.shape()[1], t.shape()[2]);
    im.data = t.values();
    return im;
  }
};

namespace detail {

inline void atomic_write(const std::string& path, const std::string& bytes) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw IoError("cannot open " + tmp);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw IoError("rename failed for " + path);
}

inline uint32_t png_crc(const unsigned char* buf, size_t len) {
  return static_cast<uint32_t>(
      crc32(crc32(0L, Z_NULL, 0), buf, static_cast<uInt>(len)));
}

inline void png_chunk(std::string& out, const char type[4],
                      const std::string& payload) {
  auto be32 = [](uint32_t v) {
    std::string s(4, '\0');
    for (int i = 0; i < 4; ++i) s[i] = static_cast<char>((v >> (24 - 8 * i)) & 0xff);
    return s;
  };
  out += be32(static_cast<uint32_t>(payload.size()));
  std::string body(type, 4);
  body += payload;
  out += body;
  out += be32(png_crc(reinterpret_cast<const unsigned char*>(body.data()),
                      body.size()));
}

}  // namespace detail

// 8-bit RGB PNG, one filter byte (0) per row, zlib-deflated.
inline void write_png(const std::string& path, const Image& im) {
  int64_t H = im.height, W = im.width;
  std::vector<unsigned char> raw(static_cast<size_t>(H * (1 + 3 * W)));
  size_t k = 0;
  for (int64_t y = 0; y < H; ++y) {
    raw[k++] = 0;
    for (int64_t x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c) {
        double v = std::clamp(im.at(c, y, x), 0.0, 1.0);
        raw[k++] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
  }
  uLongf zlen = compressBound(static_cast<uLong>(raw.size()));
  std::vector<unsigned char> z(zlen);
  if (compress2(z.data(), &zlen, raw.data(), static_cast<uLong>(raw.size()), 9) !=
      Z_OK)
    throw IoError("png: deflate failed for " + path);
  z.resize(zlen);

  std::string out("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  auto be32 = [&ihdr](uint32_t v) {
    for (int i = 0; i < 4; ++i)
      ihdr += static_cast<char>((v >> (24 - 8 * i)) & 0xff);
  };
  be32(static_cast<uint32_t>(W));
  be32(static_cast<uint32_t>(H));
  ihdr += '\x08';  // bit depth
  ihdr += '\x02';  // color type RGB
  ihdr += '\x00';  // compression
  ihdr += '\x00';  // filter
  ihdr += '\x00';  // interlace
  detail::png_chunk(out, "IHDR", ihdr);
  detail::png_chunk(out, "IDAT",
                    std::string(reinterpret_cast<char*>(z.data()), z.size()));
  detail::png_chunk(out, "IEND", "");
  detail::atomic_write(path, out);
}

// Float sidecar: raw little-endian float32, planar 3*H*W (or any count).
inline void write_f32(const std::string& path, const std::vector<double>& vals) {
  std::string bytes(vals.size() * 4, '\0');
  for (size_t i = 0; i < vals.size(); ++i) {
    float f = static_cast<float>(vals[i]);
    std::memcpy(&bytes[i * 4], &f, 4);
  }
  detail::atomic_write(path, bytes);
}

inline std::vector<double> read_f32(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw IoError("cannot open " + path);
  std::streamsize n = f.tellg();
  if (n % 4 != 0) throw IoError("sidecar size not a multiple of 4: " + path);
  f.seekg(0);
  std::vector<char> bytes(static_cast<size_t>(n));
  f.read(bytes.data(), n);
  if (!f) throw IoError("read failed for " + path);
  std::vector<double> vals(static_cast<size_t>(n / 4));
  for (size_t i = 0; i < vals.size(); ++i) {
    float v;
    std::memcpy(&v, &bytes[i * 4], 4);
    vals[i] = static_cast<double>(v);
  }
  return vals;
}

inline Image read_image_f32(const std::string& path, int64_t H, int64_t W) {
  auto vals = read_f32(path);
  check(static_cast<int64_t>(vals.size()) == 3 * H * W,
        "sidecar " + path + " has wrong element count");
  Image im(H, W);
  im.data = std::move(vals);
  return im;
}

}  // namespace idnerf
