#pragma once

// Little-endian byte encoding shared by the model, hypersurface and perturbation
// archives. Every archive is: 4-byte magic, u16 version, payload, u32 CRC32 of
// everything before it.

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "abm/error.hpp"

namespace abm::detail {

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t size);
/// Continues a running CRC32 (start from 0) over more bytes.
std::uint32_t crc32_update(std::uint32_t running, const std::uint8_t* data, std::size_t size);

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }
  template <typename T>
  void value(T v) {
    if constexpr (sizeof(T) == 4) {
      f32(static_cast<float>(v));
    } else {
      f64(static_cast<double>(v));
    }
  }
  void text(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  [[nodiscard]] std::size_t size() const { return bytes_.size(); }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

  /// Appends the CRC32 of the current contents.
  void seal() { u32(crc32_of(bytes_.data(), bytes_.size())); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t size, std::string what)
      : data_(data), size_(size), what_(std::move(what)) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  float f32() {
    const auto bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  double f64() {
    const auto bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  template <typename T>
  T value() {
    if constexpr (sizeof(T) == 4) {
      return static_cast<T>(f32());
    } else {
      return static_cast<T>(f64());
    }
  }
  std::string text() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }
  /// Throws `truncated` unless n more bytes are available.
  void need(std::uint64_t n) const {
    if (n > size_ - pos_) {
      throw FormatError(FormatError::Kind::truncated,
                        what_ + ": truncated at byte " + std::to_string(pos_) + " (needs " +
                            std::to_string(n) + " more, " + std::to_string(size_ - pos_) +
                            " available)");
    }
  }
  [[nodiscard]] std::size_t position() const { return pos_; }
  [[nodiscard]] std::size_t remaining() const { return size_ - pos_; }

 private:
  std::uint64_t get(int n) {
    need(static_cast<std::uint64_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
  std::string what_;
};

/// Checks magic and version, returning a reader over the payload (between the
/// version field and the trailing CRC). The CRC itself is checked by verify_crc
/// once the payload has been parsed, so a short file reports truncation first.
ByteReader open_archive(const std::vector<std::uint8_t>& bytes, const std::array<char, 4>& magic,
                        std::uint16_t version, const std::string& what);

/// Compares the trailing CRC32 with the content; the reader must be positioned
/// exactly at the CRC field.
void verify_crc(const std::vector<std::uint8_t>& bytes, ByteReader& reader, const std::string& what);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace abm::detail
