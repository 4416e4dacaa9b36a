#pragma once

#include <filesystem>
#include <vector>

#include "abm/network.hpp"

namespace abm {

/// Model file layout (little-endian):
///   "ABMP" | u16 version | u8 architecture | u8 dtype | u32 H, W, C | u32 classes
///   | u32 blob count | blobs | u32 CRC32 (ISO-HDLC) of all preceding bytes
/// Each blob: u32 node | u8 rank | u32 dims[rank] | element data in the file dtype.
/// Conv kernels, dense weights and rescale scalars are the only blobs.
inline constexpr std::uint16_t kModelFormatVersion = 1;

struct ModelInfo {
  Architecture architecture = Architecture::custom;
  DType dtype = DType::binary32;
  Shape input_shape;
  std::size_t classes = 0;
};

template <typename T>
std::vector<std::uint8_t> encode_model(const Network<T>& net);

template <typename T>
void save_model(const Network<T>& net, const std::filesystem::path& path);

ModelInfo read_model_info(const std::filesystem::path& path);

/// Loads a model, converting from the stored dtype if it differs from T.
/// Throws FormatError with kind bad_magic, version_mismatch, truncated,
/// crc_mismatch, invalid or io.
template <typename T>
Network<T> decode_model(const std::vector<std::uint8_t>& bytes);

template <typename T>
Network<T> load_model(const std::filesystem::path& path);

}  // namespace abm
