#include "binary_io.hpp"

#include <zlib.h>

#include <fstream>
#include <iterator>

namespace abm::detail {

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t size) { return crc32_update(0, data, size); }

std::uint32_t crc32_update(std::uint32_t running, const std::uint8_t* data, std::size_t size) {
  uLong crc = running;
  while (size > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    size -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

ByteReader open_archive(const std::vector<std::uint8_t>& bytes, const std::array<char, 4>& magic,
                        std::uint16_t version, const std::string& what) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), magic.data(), 4) != 0) {
    if (bytes.size() < 4 && std::memcmp(bytes.data(), magic.data(), bytes.size()) == 0) {
      throw FormatError(FormatError::Kind::truncated, what + ": file ends inside the header");
    }
    throw FormatError(FormatError::Kind::bad_magic,
                      what + ": bad magic (expected '" + std::string(magic.data(), 4) + "')");
  }
  if (bytes.size() < 6) {
    throw FormatError(FormatError::Kind::truncated, what + ": file ends inside the header");
  }
  const std::uint16_t found = static_cast<std::uint16_t>(bytes[4] | (bytes[5] << 8));
  if (found != version) {
    throw FormatError(FormatError::Kind::version_mismatch,
                      what + ": format version " + std::to_string(found) + " (supported: " +
                          std::to_string(version) + ")");
  }
  ByteReader reader(bytes.data(), bytes.size(), what);
  reader.skip(6);
  return reader;
}

void verify_crc(const std::vector<std::uint8_t>& bytes, ByteReader& reader, const std::string& what) {
  const std::size_t content = reader.position();
  const std::uint32_t stored = reader.u32();
  if (reader.remaining() != 0) {
    throw FormatError(FormatError::Kind::invalid,
                      what + ": " + std::to_string(reader.remaining()) + " unexpected trailing bytes");
  }
  const std::uint32_t actual = crc32_of(bytes.data(), content);
  if (stored != actual) {
    throw FormatError(FormatError::Kind::crc_mismatch, what + ": CRC32 mismatch (file is corrupt)");
  }
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatError::Kind::io, "cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatError::Kind::io, "cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(FormatError::Kind::io, "write to '" + path.string() + "' failed");
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatError::Kind::io, "cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw FormatError(FormatError::Kind::io, "write to '" + path.string() + "' failed");
}

}  // namespace abm::detail
