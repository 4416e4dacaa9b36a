#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "abm/random.hpp"
#include "abm/tensor.hpp"

namespace abm {

inline constexpr std::size_t kCifarSide = 32;
inline constexpr std::size_t kCifarPixels = kCifarSide * kCifarSide * 3;
inline constexpr std::size_t kCifarRecord = 1 + kCifarPixels;
inline constexpr std::size_t kCifarClasses = 10;

/// 8-bit images stored (H, W, C) interleaved, one label each.
struct Dataset {
  std::vector<std::uint8_t> pixels;
  std::vector<std::uint8_t> labels;

  [[nodiscard]] std::size_t size() const { return labels.size(); }
  /// Image n scaled to [0, 1], shape (32, 32, 3).
  [[nodiscard]] Tensor<float> unit_image(std::size_t n) const;
  void append(const Dataset& other);
  /// Examples at the given positions, in that order.
  [[nodiscard]] Dataset subset(const std::vector<std::size_t>& order) const;
};

struct DatasetConfig {
  std::filesystem::path data_dir;
  std::size_t val_count = 5000;
  std::size_t train_limit = 0;  // 0 keeps every remaining training example
  std::uint64_t seed = 0;
  std::array<double, 3> rgb_means = {0.4914, 0.4822, 0.4465};
  std::array<double, 3> rgb_stds = {0.2023, 0.1994, 0.2010};
};

struct CifarSplits {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Reads one CIFAR-10 binary file (3073-byte records: label, then R, G, B planes).
/// Throws DataError for a missing file, a partial record or a label above 9.
Dataset read_cifar_file(const std::filesystem::path& path);
void write_cifar_file(const Dataset& data, const std::filesystem::path& path);

/// data_batch_1..5.bin shuffled by the seed and split into validation (first
/// val_count) and training examples; test_batch.bin as the test split.
CifarSplits load_cifar10(const DatasetConfig& config);

/// (x - mean) / std per channel for an image in [0, 1].
template <typename T>
Tensor<T> normalize_image(const Tensor<float>& unit_image, const DatasetConfig& config);

/// Writes a learnable 10-class stand-in for CIFAR-10 in the same file layout:
/// every class has a smooth colour template, each example adds a random
/// brightness scale, shift and pixel noise.
void write_synthetic_cifar(const std::filesystem::path& dir, std::uint64_t seed, std::size_t per_train_file = 10000,
                           std::size_t test_count = 10000);

/// Random photometric and geometric distortion parameters; the defaults are the identity.
struct AugmentParams {
  bool flip = false;
  double saturation = 1.0;  // 0 = grey, 1 = unchanged
  double contrast = 1.0;
  double brightness = 0.0;  // added to every channel
  std::size_t resize = kCifarSide;  // side before cropping back to 32
  std::size_t crop_y = 0;
  std::size_t crop_x = 0;
};

/// Flip with probability 1/2, saturation U[0, 2], contrast U[0.4, 1.6],
/// brightness U[-0.5, 0.5], resize to 36 and a uniform 32 x 32 crop.
AugmentParams draw_augment(Rng& rng);

/// Applies the distortions in order flip, saturation, contrast, brightness,
/// resize and crop, clipping to [0, 1] after each. Input and output are (32, 32, 3) in [0, 1].
Tensor<float> augment(const Tensor<float>& unit_image, const AugmentParams& params);

}  // namespace abm
