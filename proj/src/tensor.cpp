#include "abm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "patch.hpp"

namespace abm {

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

const char* to_string(DType dtype) {
  return dtype == DType::binary32 ? "binary32" : "binary64";
}

const char* to_string(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::relu:
      return "relu";
    case ActivationKind::leaky_relu:
      return "leaky_relu";
    case ActivationKind::relu6:
      return "relu6";
  }
  return "?";
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a) + " vs " +
                     to_string(b));
  }
}

template <typename T>
Tensor<T>::Tensor(Shape shape) : shape_(std::move(shape)), data_(element_count(shape_), T(0)) {
  for (std::size_t d : shape_) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive: " + to_string(shape_));
  }
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (element_count(shape_) != data_.size()) {
    throw ShapeError("tensor shape " + to_string(shape_) + " needs " +
                     std::to_string(element_count(shape_)) + " elements, got " +
                     std::to_string(data_.size()));
  }
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : Tensor(std::move(shape)) {
  std::fill(data_.begin(), data_.end(), fill);
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

template <typename T>
void Tensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
Tensor<T>& Tensor<T>::operator+=(const Tensor& other) {
  require_same_shape(shape_, other.shape_, "tensor +=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

template <typename T>
Tensor<T>& Tensor<T>::operator-=(const Tensor& other) {
  require_same_shape(shape_, other.shape_, "tensor -=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

template <typename T>
Tensor<T>& Tensor<T>::operator*=(T scalar) {
  for (T& v : data_) v *= scalar;
  return *this;
}

SamePadding same_padding(std::size_t in, std::size_t window, std::size_t stride) {
  if (stride == 0 || window == 0) throw ShapeError("window and stride must be positive");
  SamePadding p;
  p.out = (in + stride - 1) / stride;
  const std::size_t needed = (p.out - 1) * stride + window;
  const std::size_t total = needed > in ? needed - in : 0;
  p.before = total / 2;
  p.after = total - p.before;
  return p;
}

namespace {

detail::Grid grid_of(const Shape& s, const char* op) {
  if (s.size() != 3) throw ShapeError(std::string(op) + ": expected (H, W, C) input, got " + to_string(s));
  return {s[0], s[1], s[2]};
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, std::size_t stride) {
  const detail::Grid in = grid_of(input.shape(), "conv2d");
  if (kernel.rank() != 4 || kernel.dim(2) != in.c) {
    throw ShapeError("conv2d: input " + to_string(input.shape()) + " incompatible with kernel " +
                     to_string(kernel.shape()));
  }
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  const detail::Grid out = detail::conv_output_grid(in, kernel.dim(0), kernel.dim(1), kernel.dim(3), stride);
  return detail::to_tensor(detail::conv_forward(detail::to_patch(input, in), in, kernel, stride), out);
}

template <typename T>
Tensor<T> avg_pool(const Tensor<T>& input, std::size_t window, std::size_t stride) {
  const detail::Grid in = grid_of(input.shape(), "avg_pool");
  if (window == 0 || stride == 0) throw ShapeError("avg_pool: window and stride must be positive");
  const detail::Grid out{same_padding(in.h, window, stride).out,
                         same_padding(in.w, window, stride).out, in.c};
  return detail::to_tensor(detail::pool_forward(detail::to_patch(input, in), in, window, stride), out);
}

template <typename T>
Tensor<T> global_pool(const Tensor<T>& input) {
  const detail::Grid in = grid_of(input.shape(), "global_pool");
  auto p = detail::global_pool_forward(detail::to_patch(input, in), in);
  return Tensor<T>(Shape{in.c}, std::move(p.data));
}

template <typename T>
Tensor<T> activation(const Tensor<T>& input, ActivationKind kind) {
  Tensor<T> out = input;
  for (T& v : out.data()) v = activate(v, kind);
  return out;
}

template <typename T>
T inner_product(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "inner_product");
  T sum = T(0);
  for (std::size_t i = 0; i < a.size(); ++i) sum += a[i] * b[i];
  return sum;
}

template <typename T>
T l2_norm(const Tensor<T>& a) {
  T sum = T(0);
  for (T v : a.data()) sum += v * v;
  return std::sqrt(sum);
}

template <typename T>
T max_abs(const Tensor<T>& a) {
  T m = T(0);
  for (T v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

template <typename T>
bool all_finite(const Tensor<T>& a) {
  return std::all_of(a.data().begin(), a.data().end(), [](T v) { return std::isfinite(v); });
}

#define ABM_INSTANTIATE_TENSOR(T)                                                  \
  template class Tensor<T>;                                                        \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, std::size_t);      \
  template Tensor<T> avg_pool(const Tensor<T>&, std::size_t, std::size_t);         \
  template Tensor<T> global_pool(const Tensor<T>&);                                \
  template Tensor<T> activation(const Tensor<T>&, ActivationKind);                 \
  template T inner_product(const Tensor<T>&, const Tensor<T>&);                    \
  template T l2_norm(const Tensor<T>&);                                            \
  template T max_abs(const Tensor<T>&);                                            \
  template bool all_finite(const Tensor<T>&);

ABM_INSTANTIATE_TENSOR(float)
ABM_INSTANTIATE_TENSOR(double)

#undef ABM_INSTANTIATE_TENSOR

}  // namespace abm
