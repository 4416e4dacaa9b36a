#pragma once

// Windowed batched kernels shared by the live network, the frozen linear map
// (jvp / vjp) and the input-basis Jacobian sweep.
//
// A Patch holds `batch` samples of a feature map restricted to a spatial box;
// every value outside the box is zero. Linear operators map boxes to the
// smallest box that can be nonzero, which keeps sparse tangents and cotangents
// cheap.

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include "abm/tensor.hpp"

namespace abm::detail {

struct Grid {
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t c = 0;

  bool operator==(const Grid&) const = default;
};

struct Box {
  std::ptrdiff_t y0 = 0;
  std::ptrdiff_t y1 = 0;
  std::ptrdiff_t x0 = 0;
  std::ptrdiff_t x1 = 0;

  [[nodiscard]] std::ptrdiff_t height() const { return std::max<std::ptrdiff_t>(0, y1 - y0); }
  [[nodiscard]] std::ptrdiff_t width() const { return std::max<std::ptrdiff_t>(0, x1 - x0); }
  [[nodiscard]] std::size_t area() const { return static_cast<std::size_t>(height() * width()); }
  [[nodiscard]] bool empty() const { return height() == 0 || width() == 0; }
  [[nodiscard]] bool contains(std::ptrdiff_t y, std::ptrdiff_t x) const {
    return y >= y0 && y < y1 && x >= x0 && x < x1;
  }

  static Box full(const Grid& g) {
    return {0, static_cast<std::ptrdiff_t>(g.h), 0, static_cast<std::ptrdiff_t>(g.w)};
  }
  [[nodiscard]] Box unite(const Box& o) const {
    if (empty()) return o;
    if (o.empty()) return *this;
    return {std::min(y0, o.y0), std::max(y1, o.y1), std::min(x0, o.x0), std::max(x1, o.x1)};
  }

  bool operator==(const Box&) const = default;
};

template <typename T>
struct Patch {
  std::size_t batch = 0;
  std::size_t channels = 0;
  Box box;
  std::vector<T> data;  // [batch][box.h][box.w][channels]

  Patch() = default;
  Patch(std::size_t batch_, std::size_t channels_, Box box_)
      : batch(batch_), channels(channels_), box(box_.empty() ? Box{} : box_),
        data(batch_ * box.area() * channels_, T(0)) {}

  [[nodiscard]] std::size_t sample_size() const { return box.area() * channels; }
  T* sample(std::size_t b) { return data.data() + b * sample_size(); }
  const T* sample(std::size_t b) const { return data.data() + b * sample_size(); }

  // Absolute (y, x) must lie inside the box.
  T* at(std::size_t b, std::ptrdiff_t y, std::ptrdiff_t x) {
    return sample(b) + ((y - box.y0) * box.width() + (x - box.x0)) * channels;
  }
  const T* at(std::size_t b, std::ptrdiff_t y, std::ptrdiff_t x) const {
    return sample(b) + ((y - box.y0) * box.width() + (x - box.x0)) * channels;
  }
};

/// Full-box single-sample patch from an (H, W, C) tensor (or a (C) vector as 1x1xC).
template <typename T>
Patch<T> to_patch(const Tensor<T>& t, const Grid& grid);

/// Dense (H, W, C) tensor for one sample of a patch.
template <typename T>
Tensor<T> to_tensor(const Patch<T>& p, const Grid& grid, std::size_t b = 0);

/// Smallest box covering the nonzero entries of `t` (empty if all zero).
template <typename T>
Box support(const Tensor<T>& t, const Grid& grid);

Grid conv_output_grid(const Grid& in, std::size_t kh, std::size_t kw, std::size_t cout,
                      std::size_t stride);

template <typename T>
Patch<T> conv_forward(const Patch<T>& in, const Grid& in_grid, const Tensor<T>& kernel,
                      std::size_t stride);

/// conv_forward for an input known to vanish wherever `open` (H, W, C) is zero:
/// each output position multiplies only the open taps of its receptive field.
template <typename T>
Patch<T> conv_forward_gated(const Patch<T>& in, const Grid& in_grid, const Tensor<T>& kernel,
                            std::size_t stride, const Tensor<T>& open);

template <typename T>
Patch<T> conv_backward_input(const Patch<T>& grad_out, const Grid& in_grid,
                             const Tensor<T>& kernel, std::size_t stride);

/// Accumulates dL/dkernel into `grad_kernel` (same shape as kernel).
template <typename T>
void conv_backward_kernel(const Patch<T>& in, const Grid& in_grid, const Patch<T>& grad_out,
                          std::size_t stride, Tensor<T>& grad_kernel);

template <typename T>
Patch<T> pool_forward(const Patch<T>& in, const Grid& in_grid, std::size_t window,
                      std::size_t stride);

template <typename T>
Patch<T> pool_backward(const Patch<T>& grad_out, const Grid& in_grid, std::size_t window,
                       std::size_t stride);

template <typename T>
Patch<T> global_pool_forward(const Patch<T>& in, const Grid& in_grid);

template <typename T>
Patch<T> global_pool_backward(const Patch<T>& grad_out, const Grid& in_grid);

/// x (1x1xIn) times weight (In, Out).
template <typename T>
Patch<T> dense_forward(const Patch<T>& in, const Tensor<T>& weight);

template <typename T>
Patch<T> dense_backward_input(const Patch<T>& grad_out, const Tensor<T>& weight);

template <typename T>
void dense_backward_weight(const Patch<T>& in, const Patch<T>& grad_out, Tensor<T>& grad_weight);

/// Appends zero channels so the result has `channels` channels.
template <typename T>
Patch<T> pad_channels(const Patch<T>& in, std::size_t channels);

/// Keeps the first `channels` channels.
template <typename T>
Patch<T> crop_channels(const Patch<T>& in, std::size_t channels);

/// Multiplies by a full-grid (H, W, C) tensor, broadcast over the batch.
template <typename T>
void multiply_mask(Patch<T>& p, const Tensor<T>& mask, const Grid& grid);

template <typename T>
void scale(Patch<T>& p, T factor);

/// a + b over the union of their boxes. Batch and channel counts must agree.
template <typename T>
Patch<T> add(const Patch<T>& a, const Patch<T>& b);

/// Re-embeds a patch into a larger box (zeros in the new area).
template <typename T>
Patch<T> expand_to(const Patch<T>& p, const Box& box);

}  // namespace abm::detail
