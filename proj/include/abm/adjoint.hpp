#pragma once

#include <vector>

#include "abm/network.hpp"

namespace abm {

/// Point at which activation gates are frozen: z(x) = k * x with k > 0.
struct EvaluationPoint {
  double k = 0.125;
};

/// Activation gates recorded by a live forward pass at z(x). Replaying the
/// network with every activation replaced by multiplication with its gate gives
/// the linear map J(z(x)); for bias-free ReLU-family networks J(z(x)) x equals
/// the live pre-activations at x.
template <typename T>
struct ActivationTrace {
  double k = 0.125;
  Shape input_shape;
  /// gates[n] has the shape of node n's input when node n is an activation:
  /// 1 where the unit is open, 0 (ReLU) or the leak slope (leaky ReLU) where closed.
  std::vector<Tensor<T>> gates;

  bool operator==(const ActivationTrace&) const = default;
};

template <typename T>
ActivationTrace<T> trace(const Network<T>& net, const Tensor<T>& x, EvaluationPoint z = {});

/// Cotangent attached to the output of one node (a conv output or the logits).
template <typename T>
struct Cotangent {
  int node = -1;
  Tensor<T> value;
};

/// Frozen linear forward J(z(x)) v, read at `node`.
template <typename T>
Tensor<T> jvp(const ActivationTrace<T>& trace, const Network<T>& net, const Tensor<T>& v, int node);

/// Adjoint J(z(x))^T applied to a cotangent, returned in input space.
template <typename T>
Tensor<T> vjp(const ActivationTrace<T>& trace, const Network<T>& net, const Cotangent<T>& cot);

/// Throws unless `node` can be reached by the frozen linear map: it must exist,
/// lie at or before the logits, and have no clipped (ReLU6) activation upstream.
template <typename T>
void check_linear_target(const Network<T>& net, int node);

struct SweepOptions {
  /// Input pixels per tile edge; each tile pushes tile * tile * C basis vectors at once.
  std::size_t tile = 4;
  std::size_t workers = 1;
};

/// Explicit Jacobian of one node: a (units, input size) matrix whose row u is
/// the input-space hypersurface of unit u. Built column by column by pushing
/// input basis vectors through the frozen map.
template <typename T>
Tensor<T> jacobian(const ActivationTrace<T>& trace, const Network<T>& net, int node,
                   SweepOptions options = {});

/// For each requested node, sum_p w[p] * J[u, p] for every unit u, where every
/// Jacobian entry is produced explicitly by the input-basis sweep. With w = x
/// this is the inner product of x with each unit's hypersurface.
template <typename T>
std::vector<Tensor<T>> contract_jacobian(const ActivationTrace<T>& trace, const Network<T>& net,
                                         const std::vector<int>& nodes, const Tensor<T>& w,
                                         SweepOptions options = {});

}  // namespace abm
