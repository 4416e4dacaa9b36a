#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "abm/error.hpp"

namespace abm {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string to_string(const Shape& shape);

enum class DType : std::uint8_t { binary32 = 1, binary64 = 2 };

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::binary32; }
template <>
constexpr DType dtype_of<double>() { return DType::binary64; }

const char* to_string(DType dtype);

/// Dense row-major tensor. Images and feature maps are (H, W, C); kernels are
/// (r1, r2, Cin, Cout); dense weights are (in, out).
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<T> data);
  Tensor(Shape shape, T fill);

  [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
  [[nodiscard]] std::size_t rank() const noexcept { return shape_.size(); }
  [[nodiscard]] std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
  [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

  [[nodiscard]] std::span<T> data() noexcept { return data_; }
  [[nodiscard]] std::span<const T> data() const noexcept { return data_; }
  [[nodiscard]] T* raw() noexcept { return data_.data(); }
  [[nodiscard]] const T* raw() const noexcept { return data_.data(); }
  [[nodiscard]] std::vector<T>& storage() noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  // (h, w, c) access for rank-3 tensors.
  T& at(std::size_t h, std::size_t w, std::size_t c) {
    return data_[(h * shape_[1] + w) * shape_[2] + c];
  }
  const T& at(std::size_t h, std::size_t w, std::size_t c) const {
    return data_[(h * shape_[1] + w) * shape_[2] + c];
  }

  /// Same data, new shape. Throws ShapeError if element counts differ.
  [[nodiscard]] Tensor reshaped(Shape shape) const;

  template <typename U>
  [[nodiscard]] Tensor<U> cast() const {
    if (shape_.empty() && data_.empty()) return Tensor<U>();
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  void fill(T value);

  Tensor& operator+=(const Tensor& other);
  Tensor& operator-=(const Tensor& other);
  Tensor& operator*=(T scalar);

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
Tensor<T> operator+(Tensor<T> a, const Tensor<T>& b) {
  a += b;
  return a;
}
template <typename T>
Tensor<T> operator-(Tensor<T> a, const Tensor<T>& b) {
  a -= b;
  return a;
}
template <typename T>
Tensor<T> operator*(T s, Tensor<T> a) {
  a *= s;
  return a;
}

void require_same_shape(const Shape& a, const Shape& b, const char* what);

enum class ActivationKind : std::uint8_t { relu = 0, leaky_relu = 1, relu6 = 2 };

inline constexpr double kLeakySlope = 0.2;

const char* to_string(ActivationKind kind);

/// Output extent and (before, after) zero padding of a 'same' window along one axis.
/// Odd total padding puts the extra row/column after (bottom/right).
struct SamePadding {
  std::size_t out = 0;
  std::size_t before = 0;
  std::size_t after = 0;
};

SamePadding same_padding(std::size_t in, std::size_t window, std::size_t stride);

/// Zero-padded 'same' convolution of an (H, W, Cin) map with an (r1, r2, Cin, Cout) kernel.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, std::size_t stride);

/// Mean over each window with zero padding; the divisor is always window * window.
template <typename T>
Tensor<T> avg_pool(const Tensor<T>& input, std::size_t window, std::size_t stride);

/// Per-channel spatial mean: (H, W, C) -> (C).
template <typename T>
Tensor<T> global_pool(const Tensor<T>& input);

template <typename T>
Tensor<T> activation(const Tensor<T>& input, ActivationKind kind);

template <typename T>
T activate(T value, ActivationKind kind) {
  switch (kind) {
    case ActivationKind::relu:
      return value > T(0) ? value : T(0);
    case ActivationKind::leaky_relu:
      return value >= T(0) ? value : T(kLeakySlope) * value;
    case ActivationKind::relu6:
      return value > T(0) ? (value < T(6) ? value : T(6)) : T(0);
  }
  return value;
}

/// Sum of elementwise products of two equally shaped tensors.
template <typename T>
T inner_product(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
T l2_norm(const Tensor<T>& a);

template <typename T>
T max_abs(const Tensor<T>& a);

template <typename T>
bool all_finite(const Tensor<T>& a);

}  // namespace abm
