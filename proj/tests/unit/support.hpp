#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>

#include "abm/random.hpp"
#include "abm/tensor.hpp"

namespace abm::test {

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double sd = 1.0) {
  Tensor<T> t(std::move(shape));
  for (T& v : t.data()) v = static_cast<T>(rng.normal(0.0, sd));
  return t;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return m;
}

template <typename T>
double max_abs_value(const Tensor<T>& a) {
  double m = 0.0;
  for (T v : a.data()) m = std::max(m, std::abs(static_cast<double>(v)));
  return m;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("abm_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Straight-line zero-padded 'same' convolution, written independently of the library kernels.
template <typename T>
Tensor<T> reference_conv(const Tensor<T>& x, const Tensor<T>& k, std::size_t stride) {
  const long H = static_cast<long>(x.dim(0)), W = static_cast<long>(x.dim(1));
  const long C = static_cast<long>(x.dim(2));
  const long KH = static_cast<long>(k.dim(0)), KW = static_cast<long>(k.dim(1));
  const long O = static_cast<long>(k.dim(3));
  const long s = static_cast<long>(stride);
  const long OH = (H + s - 1) / s, OW = (W + s - 1) / s;
  const long pad_h = std::max(0L, (OH - 1) * s + KH - H) / 2;
  const long pad_w = std::max(0L, (OW - 1) * s + KW - W) / 2;
  Tensor<T> out(Shape{static_cast<std::size_t>(OH), static_cast<std::size_t>(OW), static_cast<std::size_t>(O)});
  for (long oy = 0; oy < OH; ++oy)
    for (long ox = 0; ox < OW; ++ox)
      for (long o = 0; o < O; ++o) {
        double acc = 0.0;
        for (long dy = 0; dy < KH; ++dy)
          for (long dx = 0; dx < KW; ++dx) {
            const long iy = oy * s - pad_h + dy, ix = ox * s - pad_w + dx;
            if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
            for (long c = 0; c < C; ++c) {
              acc += static_cast<double>(x[static_cast<std::size_t>((iy * W + ix) * C + c)]) *
                     static_cast<double>(k[static_cast<std::size_t>(((dy * KW + dx) * C + c) * O + o)]);
            }
          }
        out[static_cast<std::size_t>((oy * OW + ox) * O + o)] = static_cast<T>(acc);
      }
  return out;
}

}  // namespace abm::test
