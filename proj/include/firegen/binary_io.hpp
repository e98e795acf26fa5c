#pragma once

#include <array>
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

#include "firegen/errors.hpp"
#include "firegen/rng.hpp"

namespace firegen::io {

// Little-endian byte writer used by every binary format in the project.
class ByteWriter {
 public:
  void magic(std::string_view m) { bytes_.insert(bytes_.end(), m.begin(), m.end()); }

  template <typename T>
  void put(T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    if constexpr (std::is_floating_point_v<T>) {
      using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
      put(std::bit_cast<U>(value));
    } else {
      auto u = static_cast<std::make_unsigned_t<T>>(value);
      for (std::size_t i = 0; i < sizeof(T); ++i) {
        bytes_.push_back(static_cast<std::uint8_t>(u & 0xffu));
        if constexpr (sizeof(T) > 1) u >>= 8;
      }
    }
  }

  template <typename T>
  void put_all(std::span<const T> values) {
    for (const T& v : values) put(v);
  }

  void string(std::string_view s) {
    put(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }

  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

  void write_file(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes_.data()),
              static_cast<std::streamsize>(bytes_.size()));
    if (!out) throw std::runtime_error("write failed: " + path.string());
  }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  ByteReader(std::vector<std::uint8_t> bytes, std::string origin)
      : bytes_(std::move(bytes)), origin_(std::move(origin)) {}

  static ByteReader from_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingInput("cannot open: " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return ByteReader(std::move(bytes), path.string());
  }

  void expect_magic(std::string_view m) {
    need(m.size());
    if (std::memcmp(bytes_.data() + pos_, m.data(), m.size()) != 0)
      throw FormatError(origin_ + ": bad magic, expected " + std::string(m));
    pos_ += m.size();
  }

  template <typename T>
  T get() {
    need(sizeof(T));
    if constexpr (std::is_floating_point_v<T>) {
      using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
      return std::bit_cast<T>(get<U>());
    } else {
      std::make_unsigned_t<T> u = 0;
      for (std::size_t i = 0; i < sizeof(T); ++i)
        u |= static_cast<std::make_unsigned_t<T>>(bytes_[pos_ + i]) << (8 * i);
      pos_ += sizeof(T);
      return static_cast<T>(u);
    }
  }

  template <typename T>
  std::vector<T> get_vector(std::size_t n) {
    need(n * sizeof(T));
    std::vector<T> out(n);
    for (auto& v : out) v = get<T>();
    return out;
  }

  std::string string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  void expect_end() const {
    if (pos_ != bytes_.size()) throw FormatError(origin_ + ": trailing bytes");
  }

  void expect_version(std::uint32_t expected) {
    const auto v = get<std::uint32_t>();
    if (v != expected)
      throw FormatError(origin_ + ": unsupported version " + std::to_string(v));
  }

  const std::string& origin() const { return origin_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw FormatError(origin_ + ": truncated file");
  }

  std::vector<std::uint8_t> bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

/// FNV-1a 64 over the file contents, hex encoded. Used for manifest checksums.
inline std::string file_checksum(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInput("cannot open: " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[static_cast<std::size_t>(i)]);
      h *= 0x100000001b3ULL;
    }
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) s[static_cast<std::size_t>(i)] = kHex[h & 0xf];
  return s;
}

}  // namespace firegen::io
