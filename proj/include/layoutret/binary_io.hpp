#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>

#include "layoutret/errors.hpp"

namespace layoutret::inline LAYOUTRET_ABI {

static_assert(std::endian::native == std::endian::little, "binary formats assume little-endian");

/// Appends little-endian scalars and length-prefixed strings to a buffer.
class ByteWriter {
 public:
  template <typename T>
  void put(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void put_bytes(std::string_view s) { out_.append(s); }
  void put_string16(std::string_view s, const char* what);
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

/// Bounds-checked reader; every failure is a FormatError naming the offset.
class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string_view get_bytes(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string get_string16(const char* what) {
    const auto n = get<std::uint16_t>(what);
    return std::string(get_bytes(n, what));
  }
  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw FormatError("truncated input at offset " + std::to_string(pos_) + " reading " + what);
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace layoutret::inline LAYOUTRET_ABI
