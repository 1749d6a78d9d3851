#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "msret/errors.hpp"

namespace msret::detail {

// Little-endian writer into a growable byte buffer.
class ByteWriter {
 public:
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f32s(std::span<const float> vs) {
    buf_.reserve(buf_.size() + vs.size() * 4);
    for (float v : vs) f32(v);
  }

  const std::string& buffer() const noexcept { return buf_; }
  std::string take() { return std::move(buf_); }

 private:
  std::string buf_;
};

// Bounds-checked little-endian reader over a byte span. Every read names the
// field so truncation errors point at what was missing.
class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  std::size_t remaining() const noexcept { return data_.size() - pos_; }
  std::size_t position() const noexcept { return pos_; }

  void require(std::size_t n, const char* field) const {
    if (remaining() < n) {
      throw FormatError(field, std::string("truncated data: need ") + std::to_string(n) +
                                   " bytes for " + field + ", have " +
                                   std::to_string(remaining()));
    }
  }
  std::string_view bytes(std::size_t n, const char* field) {
    require(n, field);
    auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::uint8_t u8(const char* field) {
    return static_cast<std::uint8_t>(bytes(1, field)[0]);
  }
  std::uint16_t u16(const char* field) {
    auto b = bytes(2, field);
    return static_cast<std::uint16_t>(byte(b, 0) | (byte(b, 1) << 8));
  }
  std::uint32_t u32(const char* field) {
    auto b = bytes(4, field);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(byte(b, i)) << (8 * i);
    return v;
  }
  std::uint64_t u64(const char* field) {
    auto b = bytes(8, field);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(byte(b, i)) << (8 * i);
    return v;
  }
  float f32(const char* field) { return std::bit_cast<float>(u32(field)); }
  double f64(const char* field) { return std::bit_cast<double>(u64(field)); }
  void f32s(std::span<float> out, const char* field) {
    require(out.size() * 4, field);
    for (auto& v : out) v = f32(field);
  }

 private:
  static std::uint32_t byte(std::string_view b, int i) {
    return static_cast<std::uint8_t>(b[static_cast<std::size_t>(i)]);
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed for '" + path.string() + "'");
  return data;
}

inline void write_file(const std::filesystem::path& path, std::string_view data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  out.flush();
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace msret::detail
