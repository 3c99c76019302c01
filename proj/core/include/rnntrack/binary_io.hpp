#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "rnntrack/error.hpp"

namespace rnntrack::io {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
T byteswap_if_big(T value) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<std::uint8_t, sizeof(T)>>(value);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  } else {
    return value;
  }
}

// Append-only little-endian encoder.
class Writer {
 public:
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T value) {
    const T le = byteswap_if_big(value);
    char raw[sizeof(T)];
    std::memcpy(raw, &le, sizeof(T));
    buf_.insert(buf_.end(), raw, raw + sizeof(T));
  }

  const std::vector<char>& data() const noexcept { return buf_; }

 private:
  std::vector<char> buf_;
};

// Bounds-checked little-endian decoder. Errors report the byte offset.
class Reader {
 public:
  explicit Reader(std::span<const char> data) : data_(data) {}

  std::uint64_t offset() const noexcept { return pos_; }
  std::uint64_t remaining() const noexcept { return data_.size() - pos_; }

  void expect_magic(std::string_view magic, std::string_view what) {
    require(magic.size(), what);
    if (std::string_view(data_.data() + pos_, magic.size()) != magic)
      throw FormatError(std::string(what) + ": bad magic, expected '" + std::string(magic) + "'", pos_);
    pos_ += magic.size();
  }

  std::string_view bytes(std::size_t n, std::string_view what) {
    require(n, what);
    std::string_view out(data_.data() + pos_, n);
    pos_ += n;
    return out;
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get(std::string_view what) {
    require(sizeof(T), what);
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return byteswap_if_big(v);
  }

  void require(std::uint64_t n, std::string_view what) const {
    if (remaining() < n)
      throw FormatError(std::string(what) + ": truncated, need " + std::to_string(n) + " bytes, have " +
                            std::to_string(remaining()),
                        pos_);
  }

 private:
  std::span<const char> data_;
  std::uint64_t pos_ = 0;
};

std::vector<char> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const char> data);

}  // namespace rnntrack::io
