#pragma once

// Node-by-node execution of a Network over batched windowed patches. The same
// driver serves the live forward pass (activations applied), the frozen linear
// map (activations replaced by recorded gates) and the reverse sweep used by
// vjp and backprop.

#include <functional>
#include <vector>

#include "abm/network.hpp"
#include "patch.hpp"

namespace abm::detail {

/// Spatial grid of a node output; vectors are treated as 1x1xC.
Grid grid_of(const Shape& shape);

template <typename T>
Grid node_grid(const Network<T>& net, int node) {
  return grid_of(net.shape_of(node));
}

/// Index of the last node that reads each node's output (-1 when unused).
/// Slot node_count() describes the network input.
template <typename T>
std::vector<int> last_readers(const Network<T>& net);

/// Applies the activation of `node` to its input patch in place.
template <typename T>
using ActivationHook = std::function<void(int node, Patch<T>& values)>;

/// Called with each node output as soon as it is computed.
template <typename T>
using NodeVisitor = std::function<void(int node, const Patch<T>& output)>;

/// Outputs of a propagation: outputs[n] is empty (batch 0) for nodes released early.
template <typename T>
struct Propagation {
  std::vector<Patch<T>> outputs;
};

/// Per-node gate maps for convs whose input vanishes wherever the map is zero
/// (nullptr: no known zeros).
template <typename T>
using ConvInputGates = std::vector<const Tensor<T>*>;

/// Runs nodes 0..last. When keep_all is false, outputs are released after their
/// last reader has run (the output of `last` is always kept).
template <typename T>
Propagation<T> propagate(const Network<T>& net, const Patch<T>& input, int last,
                         const ActivationHook<T>& activate, const NodeVisitor<T>& visit,
                         bool keep_all, const ConvInputGates<T>* gated = nullptr);

/// Multiplies an incoming cotangent of an activation node by its local derivative.
template <typename T>
using ActivationAdjointHook = std::function<void(int node, Patch<T>& cotangent)>;

/// Parameter gradients: one tensor per node, shaped like the node's parameter
/// (kernel, dense weight, or a single-element tensor for a rescale), empty otherwise.
template <typename T>
std::vector<Tensor<T>> zero_parameter_gradients(const Network<T>& net);

/// Reverse sweep from a cotangent placed on node `start` back to the input.
/// When `forward_values` is given (the live outputs of every node and the input)
/// parameter gradients are accumulated into `param_grads`.
template <typename T>
Patch<T> backpropagate(const Network<T>& net, int start, Patch<T> cotangent,
                       const ActivationAdjointHook<T>& activation_adjoint,
                       const Patch<T>* input_values = nullptr,
                       const std::vector<Patch<T>>* forward_values = nullptr,
                       std::vector<Tensor<T>>* param_grads = nullptr);

/// Live ReLU-family activation, elementwise.
template <typename T>
void apply_activation(Patch<T>& p, ActivationKind kind);

/// Multiplies a cotangent by the live derivative evaluated at `pre` (same layout).
template <typename T>
void apply_activation_derivative(Patch<T>& g, const Patch<T>& pre, ActivationKind kind);

}  // namespace abm::detail
