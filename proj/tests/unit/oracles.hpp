#pragma once

#include "abm/adjoint.hpp"
#include "support.hpp"

namespace abm::test {

/// Dense Jacobian of `node`, one column per input basis vector, through the public jvp.
inline Tensor<double> jacobian_by_columns(const ActivationTrace<double>& tr, const Network<double>& net, int node) {
  const std::size_t n_in = element_count(net.input_shape());
  const std::size_t units = element_count(net.shape_of(node));
  Tensor<double> J(Shape{units, n_in});
  for (std::size_t p = 0; p < n_in; ++p) {
    Tensor<double> e(net.input_shape());
    e[p] = 1.0;
    const auto col = jvp(tr, net, e, node);
    for (std::size_t u = 0; u < units; ++u) J[u * n_in + p] = col[u];
  }
  return J;
}

inline Tensor<double> transpose_apply(const Tensor<double>& J, const Tensor<double>& cot, const Shape& shape) {
  const std::size_t units = J.dim(0), n_in = J.dim(1);
  Tensor<double> out(shape);
  for (std::size_t u = 0; u < units; ++u)
    for (std::size_t p = 0; p < n_in; ++p) out[p] += J[u * n_in + p] * cot[u];
  return out;
}

/// Reference convolution restricted to one in-channel j and one out-channel i,
/// reshaped to the full output map (other out-channels zero).
template <typename T>
Tensor<T> partial_conv(const Tensor<T>& x, const Tensor<T>& k, std::size_t stride, std::size_t j, std::size_t i) {
  Tensor<T> masked(k.shape());
  const std::size_t cin = k.dim(2), cout = k.dim(3);
  for (std::size_t tap = 0; tap < k.dim(0) * k.dim(1); ++tap) {
    masked[(tap * cin + j) * cout + i] = k[(tap * cin + j) * cout + i];
  }
  return reference_conv(x, masked, stride);
}

}  // namespace abm::test
