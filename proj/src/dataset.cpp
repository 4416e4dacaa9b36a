#include "abm/dataset.hpp"

#include <algorithm>
#include <cmath>

#include "abm/error.hpp"
#include "binary_io.hpp"

namespace abm {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr std::array<double, 3> kLuma = {0.299, 0.587, 0.114};

float clip_unit(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

double luma(const float* px) { return kLuma[0] * px[0] + kLuma[1] * px[1] + kLuma[2] * px[2]; }

Tensor<float> resize_bilinear(const Tensor<float>& in, std::size_t side) {
  const std::size_t h = in.dim(0), w = in.dim(1), c = in.dim(2);
  Tensor<float> out(Shape{side, side, c});
  auto source = [](std::size_t dst, std::size_t from, std::size_t to) {
    const double pos = (static_cast<double>(dst) + 0.5) * static_cast<double>(from) / static_cast<double>(to) - 0.5;
    return std::clamp(pos, 0.0, static_cast<double>(from - 1));
  };
  for (std::size_t y = 0; y < side; ++y) {
    const double sy = source(y, h, side);
    const auto y0 = static_cast<std::size_t>(sy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t x = 0; x < side; ++x) {
      const double sx = source(x, w, side);
      const auto x0 = static_cast<std::size_t>(sx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - static_cast<double>(x0);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double top = in.at(y0, x0, ch) * (1 - fx) + in.at(y0, x1, ch) * fx;
        const double bottom = in.at(y1, x0, ch) * (1 - fx) + in.at(y1, x1, ch) * fx;
        out.at(y, x, ch) = clip_unit(top * (1 - fy) + bottom * fy);
      }
    }
  }
  return out;
}

}  // namespace

Tensor<float> Dataset::unit_image(std::size_t n) const {
  if (n >= size()) throw IndexError("example " + std::to_string(n) + " out of range (" + std::to_string(size()) + ")");
  Tensor<float> t(Shape{kCifarSide, kCifarSide, 3});
  const std::uint8_t* src = pixels.data() + n * kCifarPixels;
  for (std::size_t e = 0; e < kCifarPixels; ++e) t[e] = static_cast<float>(src[e]) / 255.0f;
  return t;
}

void Dataset::append(const Dataset& other) {
  pixels.insert(pixels.end(), other.pixels.begin(), other.pixels.end());
  labels.insert(labels.end(), other.labels.begin(), other.labels.end());
}

Dataset Dataset::subset(const std::vector<std::size_t>& order) const {
  Dataset out;
  out.pixels.reserve(order.size() * kCifarPixels);
  out.labels.reserve(order.size());
  for (std::size_t n : order) {
    if (n >= size()) throw IndexError("example " + std::to_string(n) + " out of range");
    const auto first = pixels.begin() + static_cast<std::ptrdiff_t>(n * kCifarPixels);
    out.pixels.insert(out.pixels.end(), first, first + static_cast<std::ptrdiff_t>(kCifarPixels));
    out.labels.push_back(labels[n]);
  }
  return out;
}

Dataset read_cifar_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("CIFAR-10 file not found: " + path.string());
  const auto bytes = detail::read_file(path);
  if (bytes.size() % kCifarRecord != 0) {
    throw DataError(path.string() + ": size " + std::to_string(bytes.size()) + " is not a multiple of the " +
                    std::to_string(kCifarRecord) + "-byte record");
  }
  Dataset data;
  const std::size_t count = bytes.size() / kCifarRecord;
  data.labels.resize(count);
  data.pixels.resize(count * kCifarPixels);
  const std::size_t plane = kCifarSide * kCifarSide;
  for (std::size_t n = 0; n < count; ++n) {
    const std::uint8_t* rec = bytes.data() + n * kCifarRecord;
    if (rec[0] >= kCifarClasses) {
      throw DataError(path.string() + ": record " + std::to_string(n) + " has label " + std::to_string(rec[0]));
    }
    data.labels[n] = rec[0];
    std::uint8_t* dst = data.pixels.data() + n * kCifarPixels;
    for (std::size_t p = 0; p < plane; ++p)
      for (std::size_t c = 0; c < 3; ++c) dst[p * 3 + c] = rec[1 + c * plane + p];
  }
  return data;
}

void write_cifar_file(const Dataset& data, const std::filesystem::path& path) {
  const std::size_t plane = kCifarSide * kCifarSide;
  std::vector<std::uint8_t> bytes(data.size() * kCifarRecord);
  for (std::size_t n = 0; n < data.size(); ++n) {
    std::uint8_t* rec = bytes.data() + n * kCifarRecord;
    rec[0] = data.labels[n];
    const std::uint8_t* src = data.pixels.data() + n * kCifarPixels;
    for (std::size_t p = 0; p < plane; ++p)
      for (std::size_t c = 0; c < 3; ++c) rec[1 + c * plane + p] = src[p * 3 + c];
  }
  detail::write_file(path, bytes);
}

CifarSplits load_cifar10(const DatasetConfig& config) {
  Dataset all;
  for (int b = 1; b <= 5; ++b) {
    all.append(read_cifar_file(config.data_dir / ("data_batch_" + std::to_string(b) + ".bin")));
  }
  if (config.val_count >= all.size()) {
    throw DataError("validation split of " + std::to_string(config.val_count) + " leaves no training data out of " +
                    std::to_string(all.size()));
  }
  std::vector<std::size_t> order(all.size());
  for (std::size_t n = 0; n < order.size(); ++n) order[n] = n;
  Rng rng(config.seed);
  rng.shuffle(order.begin(), order.end());
  const auto split = order.begin() + static_cast<std::ptrdiff_t>(config.val_count);
  std::vector<std::size_t> val(order.begin(), split);
  std::vector<std::size_t> train(split, order.end());
  if (config.train_limit > 0 && config.train_limit < train.size()) train.resize(config.train_limit);
  CifarSplits splits;
  splits.train = all.subset(train);
  splits.val = all.subset(val);
  splits.test = read_cifar_file(config.data_dir / "test_batch.bin");
  return splits;
}

template <typename T>
Tensor<T> normalize_image(const Tensor<float>& unit_image, const DatasetConfig& config) {
  require_same_shape(unit_image.shape(), Shape{kCifarSide, kCifarSide, 3}, "normalize_image");
  Tensor<T> out(unit_image.shape());
  for (std::size_t e = 0; e < out.size(); ++e) {
    const std::size_t c = e % 3;
    out[e] = static_cast<T>((static_cast<double>(unit_image[e]) - config.rgb_means[c]) / config.rgb_stds[c]);
  }
  return out;
}

void write_synthetic_cifar(const std::filesystem::path& dir, std::uint64_t seed, std::size_t per_train_file,
                           std::size_t test_count) {
  std::filesystem::create_directories(dir);
  Rng rng(seed);
  std::vector<std::vector<double>> templates(kCifarClasses, std::vector<double>(kCifarPixels));
  for (auto& tpl : templates) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double fy = rng.uniform(0.0, 2.0), fx = rng.uniform(0.0, 2.0), phase = rng.uniform(0.0, 2 * kPi);
      const double level = rng.uniform(0.25, 0.75), amp = rng.uniform(0.15, 0.3);
      for (std::size_t y = 0; y < kCifarSide; ++y)
        for (std::size_t x = 0; x < kCifarSide; ++x) {
          const double arg = 2 * kPi * (fy * static_cast<double>(y) + fx * static_cast<double>(x)) / kCifarSide + phase;
          tpl[(y * kCifarSide + x) * 3 + c] = level + amp * std::sin(arg);
        }
    }
  }
  auto make = [&](std::size_t count) {
    Dataset d;
    d.labels.resize(count);
    d.pixels.resize(count * kCifarPixels);
    for (std::size_t n = 0; n < count; ++n) {
      const auto label = static_cast<std::uint8_t>(rng.below(kCifarClasses));
      d.labels[n] = label;
      const double gain = rng.uniform(0.6, 1.2), shift = rng.uniform(-0.15, 0.15);
      for (std::size_t e = 0; e < kCifarPixels; ++e) {
        const double v = 0.5 + gain * (templates[label][e] - 0.5) + shift + rng.normal(0.0, 0.15);
        d.pixels[n * kCifarPixels + e] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
      }
    }
    return d;
  };
  for (int b = 1; b <= 5; ++b) write_cifar_file(make(per_train_file), dir / ("data_batch_" + std::to_string(b) + ".bin"));
  write_cifar_file(make(test_count), dir / "test_batch.bin");
}

AugmentParams draw_augment(Rng& rng) {
  AugmentParams p;
  p.flip = rng.uniform() < 0.5;
  p.saturation = rng.uniform(0.0, 2.0);
  p.contrast = rng.uniform(0.4, 1.6);
  p.brightness = rng.uniform(-0.5, 0.5);
  p.resize = 36;
  p.crop_y = rng.below(p.resize - kCifarSide + 1);
  p.crop_x = rng.below(p.resize - kCifarSide + 1);
  return p;
}

Tensor<float> augment(const Tensor<float>& unit_image, const AugmentParams& p) {
  require_same_shape(unit_image.shape(), Shape{kCifarSide, kCifarSide, 3}, "augment");
  if (p.resize < kCifarSide || p.crop_y + kCifarSide > p.resize || p.crop_x + kCifarSide > p.resize) {
    throw IndexError("crop window does not fit the resized image");
  }
  const std::size_t side = kCifarSide;
  Tensor<float> img = unit_image;
  if (p.flip) {
    for (std::size_t y = 0; y < side; ++y)
      for (std::size_t x = 0; x < side / 2; ++x)
        for (std::size_t c = 0; c < 3; ++c) std::swap(img.at(y, x, c), img.at(y, side - 1 - x, c));
  }
  for (std::size_t px = 0; px < side * side; ++px) {
    float* v = img.data().data() + px * 3;
    const double grey = luma(v);
    for (std::size_t c = 0; c < 3; ++c) v[c] = clip_unit(grey + p.saturation * (v[c] - grey));
  }
  double mean = 0.0;
  for (std::size_t px = 0; px < side * side; ++px) mean += luma(img.data().data() + px * 3);
  mean /= static_cast<double>(side * side);
  for (float& v : img.data()) v = clip_unit(mean + p.contrast * (v - mean));
  for (float& v : img.data()) v = clip_unit(v + p.brightness);
  if (p.resize != side) img = resize_bilinear(img, p.resize);
  if (p.resize == side && p.crop_y == 0 && p.crop_x == 0) return img;
  Tensor<float> out(Shape{side, side, 3});
  for (std::size_t y = 0; y < side; ++y)
    for (std::size_t x = 0; x < side; ++x)
      for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y + p.crop_y, x + p.crop_x, c);
  return out;
}

template Tensor<float> normalize_image(const Tensor<float>&, const DatasetConfig&);
template Tensor<double> normalize_image(const Tensor<float>&, const DatasetConfig&);

}  // namespace abm
