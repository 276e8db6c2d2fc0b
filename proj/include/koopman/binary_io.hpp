#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "koopman/error.hpp"

namespace koopman::detail {

inline std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
  }
}

/// Append-only little-endian byte writer.
class ByteWriter {
 public:
  void put_bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

  void put_u32(std::uint32_t v) {
    v = to_little(v);
    char raw[4];
    std::memcpy(raw, &v, 4);
    buf_.insert(buf_.end(), raw, raw + 4);
  }

  void put_f32(float f) { put_u32(std::bit_cast<std::uint32_t>(f)); }

  const std::vector<char>& bytes() const { return buf_; }

  void write_file(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    if (!out) throw Error("write to '" + path + "' failed");
  }

 private:
  std::vector<char> buf_;
};

/// Bounds-checked little-endian reader; `what` names the field in errors.
class ByteReader {
 public:
  explicit ByteReader(std::vector<char> bytes) : buf_(std::move(bytes)) {}

  static ByteReader from_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path + "' for reading");
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return ByteReader(std::move(bytes));
  }

  std::string get_bytes(std::size_t n, std::string_view what) {
    require(n, what);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  std::uint32_t get_u32(std::string_view what) {
    require(4, what);
    std::uint32_t v;
    std::memcpy(&v, buf_.data() + pos_, 4);
    pos_ += 4;
    return to_little(v);
  }

  float get_f32(std::string_view what) { return std::bit_cast<float>(get_u32(what)); }

  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  void require(std::size_t n, std::string_view what) const {
    if (remaining() < n) {
      throw FormatError("truncated payload while reading " + std::string(what) + " (need " +
                        std::to_string(n) + " bytes, have " + std::to_string(remaining()) + ")");
    }
  }

  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

}  // namespace koopman::detail
