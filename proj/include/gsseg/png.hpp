#pragma once

// Minimal RGB8 PNG encoder (zlib for the IDAT stream and the CRCs).

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <zlib.h>

#include "gsseg/common.hpp"
#include "gsseg/splat.hpp"

namespace gsseg {

/// Row-major RGB8 image.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  bool operator==(const Image&) const = default;
};

inline std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

/// Quantizes a rendered 3-channel map to RGB8.
inline Image to_image(const FeatureMap& map) {
  require(map.channels() == 3, ErrorKind::argument, "image conversion needs a 3-channel map");
  Image img{map.width, map.height, std::vector<std::uint8_t>(map.pixel_count() * 3)};
  for (std::size_t p = 0; p < map.pixel_count(); ++p)
    for (int c = 0; c < 3; ++c) img.rgb[3 * p + static_cast<std::size_t>(c)] = to_byte(map.values(static_cast<Eigen::Index>(p), c));
  return img;
}

namespace detail {

inline void put_u32_be(std::string& out, std::uint32_t v) {
  for (int i = 3; i >= 0; --i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline void png_chunk(std::string& out, const char* type, const std::string& data) {
  put_u32_be(out, static_cast<std::uint32_t>(data.size()));
  const std::string body = std::string(type, 4) + data;
  out += body;
  put_u32_be(out, static_cast<std::uint32_t>(crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()))));
}

}  // namespace detail

inline std::string encode_png(const Image& img) {
  require(img.width > 0 && img.height > 0 && img.rgb.size() == static_cast<std::size_t>(img.width) * img.height * 3,
          ErrorKind::argument, "invalid image for PNG encoding");
  std::string raw;
  const std::size_t stride = static_cast<std::size_t>(img.width) * 3;
  raw.reserve((stride + 1) * static_cast<std::size_t>(img.height));
  for (int y = 0; y < img.height; ++y) {
    raw.push_back('\0');  // filter: none
    raw.append(reinterpret_cast<const char*>(img.rgb.data()) + static_cast<std::size_t>(y) * stride, stride);
  }
  uLongf packed_size = compressBound(static_cast<uLong>(raw.size()));
  std::string packed(packed_size, '\0');
  require(compress2(reinterpret_cast<Bytef*>(packed.data()), &packed_size, reinterpret_cast<const Bytef*>(raw.data()),
                    static_cast<uLong>(raw.size()), 6) == Z_OK,
          ErrorKind::internal, "zlib compression failed");
  packed.resize(packed_size);

  std::string out("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  detail::put_u32_be(ihdr, static_cast<std::uint32_t>(img.width));
  detail::put_u32_be(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr += std::string("\x08\x02\x00\x00\x00", 5);  // 8-bit RGB, deflate, no filter, no interlace
  detail::png_chunk(out, "IHDR", ihdr);
  detail::png_chunk(out, "IDAT", packed);
  detail::png_chunk(out, "IEND", {});
  return out;
}

/// Inverse of encode_png for images it produced (8-bit RGB, filter 0 rows).
inline Image decode_png(const std::string& png) {
  require(png.size() > 8 && png.compare(0, 8, std::string("\x89PNG\r\n\x1a\n", 8)) == 0, ErrorKind::format, "not a PNG");
  auto be32 = [&](std::size_t at) {
    const auto* p = reinterpret_cast<const unsigned char*>(png.data()) + at;
    return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
  };
  Image img;
  std::string idat;
  for (std::size_t at = 8; at + 12 <= png.size();) {
    const std::uint32_t len = be32(at);
    const std::string type = png.substr(at + 4, 4);
    require(at + 12 + len <= png.size(), ErrorKind::format, "truncated PNG chunk");
    if (type == "IHDR") {
      img.width = static_cast<int>(be32(at + 8));
      img.height = static_cast<int>(be32(at + 12));
      require(png[at + 16] == 8 && png[at + 17] == 2, ErrorKind::format, "only 8-bit RGB PNGs are supported");
    } else if (type == "IDAT") {
      idat += png.substr(at + 8, len);
    }
    at += 12 + len;
  }
  const std::size_t stride = static_cast<std::size_t>(img.width) * 3;
  std::string raw((stride + 1) * static_cast<std::size_t>(img.height), '\0');
  uLongf raw_size = static_cast<uLongf>(raw.size());
  require(uncompress(reinterpret_cast<Bytef*>(raw.data()), &raw_size, reinterpret_cast<const Bytef*>(idat.data()),
                     static_cast<uLong>(idat.size())) == Z_OK && raw_size == raw.size(),
          ErrorKind::format, "corrupt PNG data");
  img.rgb.resize(stride * static_cast<std::size_t>(img.height));
  for (int y = 0; y < img.height; ++y) {
    require(raw[static_cast<std::size_t>(y) * (stride + 1)] == 0, ErrorKind::format, "unsupported PNG row filter");
    std::copy_n(raw.data() + static_cast<std::size_t>(y) * (stride + 1) + 1, stride, img.rgb.data() + static_cast<std::size_t>(y) * stride);
  }
  return img;
}

}  // namespace gsseg
