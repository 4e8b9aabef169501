#pragma once

// GSTEN raw tensor container:
//   magic "GSTEN" | version u8 | dtype u8 (0=u8, 1=f32) | ndim u8 | dims u32 LE each | payload LE, row-major

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "gsseg/common.hpp"

namespace gsseg {

enum class DType : std::uint8_t { u8 = 0, f32 = 1 };

inline constexpr std::array<char, 5> kTensorMagic{'G', 'S', 'T', 'E', 'N'};
inline constexpr std::uint8_t kTensorVersion = 1;

struct Tensor {
  DType dtype = DType::f32;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> u8;
  std::vector<float> f32;

  std::size_t element_count() const {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                           [](std::size_t a, std::uint32_t b) { return a * b; });
  }

  static Tensor bytes(std::vector<std::uint32_t> dims, std::vector<std::uint8_t> data) {
    Tensor t;
    t.dtype = DType::u8;
    t.dims = std::move(dims);
    t.u8 = std::move(data);
    require(t.u8.size() == t.element_count(), ErrorKind::argument, "tensor payload does not match dims");
    return t;
  }

  static Tensor floats(std::vector<std::uint32_t> dims, std::vector<float> data) {
    Tensor t;
    t.dtype = DType::f32;
    t.dims = std::move(dims);
    t.f32 = std::move(data);
    require(t.f32.size() == t.element_count(), ErrorKind::argument, "tensor payload does not match dims");
    return t;
  }

  bool operator==(const Tensor&) const = default;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) | (std::uint32_t{p[3]} << 24);
}

}  // namespace detail

inline std::string encode_tensor(const Tensor& t) {
  require(t.dims.size() <= 255, ErrorKind::argument, "tensor has too many dimensions");
  std::string out(kTensorMagic.begin(), kTensorMagic.end());
  out.push_back(static_cast<char>(kTensorVersion));
  out.push_back(static_cast<char>(t.dtype));
  out.push_back(static_cast<char>(t.dims.size()));
  for (auto d : t.dims) detail::put_u32(out, d);
  const std::size_t n = t.element_count();
  if (t.dtype == DType::u8) {
    require(t.u8.size() == n, ErrorKind::argument, "tensor payload does not match dims");
    out.append(reinterpret_cast<const char*>(t.u8.data()), n);
  } else {
    require(t.f32.size() == n, ErrorKind::argument, "tensor payload does not match dims");
    out.reserve(out.size() + 4 * n);
    for (float v : t.f32) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

inline Tensor decode_tensor(std::string_view bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t size = bytes.size();
  require(size >= 8 && std::memcmp(p, kTensorMagic.data(), 5) == 0, ErrorKind::format, "not a GSTEN tensor (bad magic)");
  require(p[5] == kTensorVersion, ErrorKind::format, "unsupported GSTEN version " + std::to_string(p[5]));
  require(p[6] <= 1, ErrorKind::format, "unknown GSTEN dtype code " + std::to_string(p[6]));
  Tensor t;
  t.dtype = static_cast<DType>(p[6]);
  const std::size_t ndim = p[7];
  std::size_t pos = 8;
  require(size >= pos + 4 * ndim, ErrorKind::format, "truncated GSTEN header");
  for (std::size_t i = 0; i < ndim; ++i, pos += 4) t.dims.push_back(detail::get_u32(p + pos));
  const std::size_t n = t.element_count();
  const std::size_t width = t.dtype == DType::u8 ? 1 : 4;
  require(size - pos == n * width, ErrorKind::format,
          "GSTEN payload size " + std::to_string(size - pos) + " does not match dims (" + std::to_string(n * width) + ")");
  if (t.dtype == DType::u8) {
    t.u8.assign(p + pos, p + pos + n);
  } else {
    t.f32.resize(n);
    for (std::size_t i = 0; i < n; ++i) t.f32[i] = std::bit_cast<float>(detail::get_u32(p + pos + 4 * i));
  }
  return t;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::argument, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::argument, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline void save_tensor(const std::filesystem::path& path, const Tensor& t) { write_file(path, encode_tensor(t)); }

inline Tensor load_tensor(const std::filesystem::path& path) {
  try {
    return decode_tensor(read_file(path));
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

inline Tensor matrix_to_tensor(const FeatureMatrix& m) {
  std::vector<float> data(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) data[static_cast<std::size_t>(r * m.cols() + c)] = static_cast<float>(m(r, c));
  return Tensor::floats({static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())}, std::move(data));
}

inline FeatureMatrix tensor_to_matrix(const Tensor& t) {
  require(t.dtype == DType::f32 && t.dims.size() == 2, ErrorKind::format, "expected a 2-D f32 tensor");
  FeatureMatrix m(t.dims[0], t.dims[1]);
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const float v = t.f32[static_cast<std::size_t>(r * m.cols() + c)];
      require(std::isfinite(v), ErrorKind::data, "non-finite tensor value at row " + std::to_string(r));
      m(r, c) = v;
    }
  return m;
}

}  // namespace gsseg
