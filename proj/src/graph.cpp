#include "graph.hpp"

#include <algorithm>
#include <type_traits>

namespace abm::detail {

Grid grid_of(const Shape& shape) {
  if (shape.size() == 3) return {shape[0], shape[1], shape[2]};
  if (shape.size() == 1) return {1, 1, shape[0]};
  throw ShapeError("unsupported node shape " + to_string(shape));
}

template <typename T>
std::vector<int> last_readers(const Network<T>& net) {
  const int n = static_cast<int>(net.node_count());
  std::vector<int> last(static_cast<std::size_t>(n) + 1, -1);
  auto slot = [n](int node) { return static_cast<std::size_t>(node < 0 ? n : node); };
  for (int i = 0; i < n; ++i) {
    const Layer<T>& layer = net.layer(i);
    last[slot(layer.input)] = i;
    if (const auto* res = std::get_if<ResidualAdd>(&layer.op)) last[slot(res->skip)] = i;
  }
  return last;
}

namespace {

template <typename T>
Patch<T> shortcut_forward(const Patch<T>& skip, const Grid& skip_grid, const ResidualAdd& res,
                          std::size_t channels) {
  if (res.shortcut == ShortcutKind::identity) return skip;
  return pad_channels(pool_forward(skip, skip_grid, 1, res.stride), channels);
}

template <typename T>
Patch<T> shortcut_backward(const Patch<T>& g, const Grid& skip_grid, const ResidualAdd& res) {
  if (res.shortcut == ShortcutKind::identity) return g;
  return pool_backward(crop_channels(g, skip_grid.c), skip_grid, 1, res.stride);
}

template <typename T>
void accumulate(Patch<T>& slot, Patch<T>&& g) {
  if (slot.batch == 0) {
    slot = std::move(g);
  } else {
    slot = add(slot, g);
  }
}

template <typename T>
const Patch<T>& value_of(int node, const Patch<T>* input_values,
                         const std::vector<Patch<T>>* forward_values) {
  return node < 0 ? *input_values : (*forward_values)[static_cast<std::size_t>(node)];
}

}  // namespace

template <typename T>
Propagation<T> propagate(const Network<T>& net, const Patch<T>& input, int last,
                         const ActivationHook<T>& activate, const NodeVisitor<T>& visit,
                         bool keep_all, const ConvInputGates<T>* gated) {
  if (last < 0 || last >= static_cast<int>(net.node_count())) {
    throw IndexError("node " + std::to_string(last) + " out of range");
  }
  const std::vector<int> readers = last_readers(net);
  Propagation<T> run;
  run.outputs.resize(net.node_count());

  auto fetch = [&](int node) -> const Patch<T>& {
    return node < 0 ? input : run.outputs[static_cast<std::size_t>(node)];
  };
  auto release = [&](int node, int reader) {
    if (keep_all || node < 0) return;
    const auto idx = static_cast<std::size_t>(node);
    if (readers[idx] == reader && node != last) run.outputs[idx] = Patch<T>();
  };

  for (int i = 0; i <= last; ++i) {
    const Layer<T>& layer = net.layer(i);
    const Patch<T>& in = fetch(layer.input);
    const Grid in_grid = node_grid(net, layer.input);
    Patch<T> out = std::visit(
        [&](const auto& op) -> Patch<T> {
          using Op = std::decay_t<decltype(op)>;
          if constexpr (std::is_same_v<Op, Conv<T>>) {
            const Tensor<T>* open = gated ? (*gated)[static_cast<std::size_t>(i)] : nullptr;
            if (open) return conv_forward_gated(in, in_grid, op.kernel, op.stride, *open);
            return conv_forward(in, in_grid, op.kernel, op.stride);
          } else if constexpr (std::is_same_v<Op, AvgPool>) {
            return pool_forward(in, in_grid, op.window, op.stride);
          } else if constexpr (std::is_same_v<Op, GlobalPool>) {
            return global_pool_forward(in, in_grid);
          } else if constexpr (std::is_same_v<Op, Activation>) {
            Patch<T> values = in;
            activate(i, values);
            return values;
          } else if constexpr (std::is_same_v<Op, Dense<T>>) {
            return dense_forward(in, op.weight);
          } else if constexpr (std::is_same_v<Op, ResidualAdd>) {
            const Grid skip_grid = node_grid(net, op.skip);
            return add(in, shortcut_forward(fetch(op.skip), skip_grid, op, in.channels));
          } else {
            Patch<T> values = in;
            scale(values, op.scale);
            return values;
          }
        },
        layer.op);
    run.outputs[static_cast<std::size_t>(i)] = std::move(out);
    if (visit) visit(i, run.outputs[static_cast<std::size_t>(i)]);
    release(layer.input, i);
    if (const auto* res = std::get_if<ResidualAdd>(&layer.op)) release(res->skip, i);
  }
  return run;
}

template <typename T>
std::vector<Tensor<T>> zero_parameter_gradients(const Network<T>& net) {
  std::vector<Tensor<T>> grads(net.node_count());
  for (std::size_t i = 0; i < net.node_count(); ++i) {
    const auto& op = net.layers()[i].op;
    if (const auto* conv = std::get_if<Conv<T>>(&op)) {
      grads[i] = Tensor<T>(conv->kernel.shape());
    } else if (const auto* dense = std::get_if<Dense<T>>(&op)) {
      grads[i] = Tensor<T>(dense->weight.shape());
    } else if (std::holds_alternative<ScalarRescale<T>>(op)) {
      grads[i] = Tensor<T>(Shape{1});
    }
  }
  return grads;
}

template <typename T>
Patch<T> backpropagate(const Network<T>& net, int start, Patch<T> cotangent,
                       const ActivationAdjointHook<T>& activation_adjoint,
                       const Patch<T>* input_values,
                       const std::vector<Patch<T>>* forward_values,
                       std::vector<Tensor<T>>* param_grads) {
  if (start < 0 || start >= static_cast<int>(net.node_count())) {
    throw IndexError("node " + std::to_string(start) + " out of range");
  }
  const bool want_params = forward_values != nullptr && param_grads != nullptr;
  const std::size_t batch = cotangent.batch;
  std::vector<Patch<T>> pending(static_cast<std::size_t>(start) + 1);
  Patch<T> input_cot;
  pending[static_cast<std::size_t>(start)] = std::move(cotangent);

  auto deposit = [&](int node, Patch<T>&& g) {
    if (g.box.empty()) return;
    accumulate(node < 0 ? input_cot : pending[static_cast<std::size_t>(node)], std::move(g));
  };

  for (int i = start; i >= 0; --i) {
    Patch<T> g = std::move(pending[static_cast<std::size_t>(i)]);
    if (g.batch == 0 || g.box.empty()) continue;
    const Layer<T>& layer = net.layer(i);
    const Grid in_grid = node_grid(net, layer.input);
    std::visit(
        [&](const auto& op) {
          using Op = std::decay_t<decltype(op)>;
          if constexpr (std::is_same_v<Op, Conv<T>>) {
            if (want_params) {
              conv_backward_kernel(value_of(layer.input, input_values, forward_values), in_grid, g,
                                   op.stride, (*param_grads)[static_cast<std::size_t>(i)]);
            }
            deposit(layer.input, conv_backward_input(g, in_grid, op.kernel, op.stride));
          } else if constexpr (std::is_same_v<Op, AvgPool>) {
            deposit(layer.input, pool_backward(g, in_grid, op.window, op.stride));
          } else if constexpr (std::is_same_v<Op, GlobalPool>) {
            deposit(layer.input, global_pool_backward(g, in_grid));
          } else if constexpr (std::is_same_v<Op, Activation>) {
            activation_adjoint(i, g);
            deposit(layer.input, std::move(g));
          } else if constexpr (std::is_same_v<Op, Dense<T>>) {
            if (want_params) {
              dense_backward_weight(value_of(layer.input, input_values, forward_values), g,
                                    (*param_grads)[static_cast<std::size_t>(i)]);
            }
            deposit(layer.input, dense_backward_input(g, op.weight));
          } else if constexpr (std::is_same_v<Op, ResidualAdd>) {
            deposit(op.skip, shortcut_backward(g, node_grid(net, op.skip), op));
            deposit(layer.input, std::move(g));
          } else {
            if (want_params) {
              const Patch<T>& in = value_of(layer.input, input_values, forward_values);
              const Patch<T> aligned = expand_to(in, g.box.unite(in.box));
              const Patch<T> grad = expand_to(g, aligned.box);
              T sum = T(0);
              for (std::size_t k = 0; k < grad.data.size(); ++k) sum += grad.data[k] * aligned.data[k];
              (*param_grads)[static_cast<std::size_t>(i)][0] += sum;
            }
            scale(g, op.scale);
            deposit(layer.input, std::move(g));
          }
        },
        layer.op);
  }
  if (input_cot.batch == 0) {
    const Grid in = grid_of(net.input_shape());
    return Patch<T>(batch, in.c, Box{});
  }
  return input_cot;
}

template <typename T>
void apply_activation(Patch<T>& p, ActivationKind kind) {
  for (T& v : p.data) v = activate(v, kind);
}

template <typename T>
T activation_slope(T pre, ActivationKind kind) {
  switch (kind) {
    case ActivationKind::relu:
      return pre > T(0) ? T(1) : T(0);
    case ActivationKind::leaky_relu:
      return pre > T(0) ? T(1) : T(kLeakySlope);
    case ActivationKind::relu6:
      return (pre > T(0) && pre < T(6)) ? T(1) : T(0);
  }
  return T(0);
}

template <typename T>
void apply_activation_derivative(Patch<T>& g, const Patch<T>& pre, ActivationKind kind) {
  if (g.box.empty()) return;
  const std::size_t ch = g.channels;
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::ptrdiff_t y = g.box.y0; y < g.box.y1; ++y) {
      for (std::ptrdiff_t x = g.box.x0; x < g.box.x1; ++x) {
        T* dst = g.at(b, y, x);
        if (pre.box.contains(y, x)) {
          const T* src = pre.at(b, y, x);
          for (std::size_t c = 0; c < ch; ++c) dst[c] *= activation_slope(src[c], kind);
        } else {
          const T slope = activation_slope(T(0), kind);
          for (std::size_t c = 0; c < ch; ++c) dst[c] *= slope;
        }
      }
    }
  }
}

#define ABM_INSTANTIATE_GRAPH(T)                                                             \
  template std::vector<int> last_readers(const Network<T>&);                                 \
  template Propagation<T> propagate(const Network<T>&, const Patch<T>&, int,                 \
                                    const ActivationHook<T>&, const NodeVisitor<T>&, bool,   \
                                    const ConvInputGates<T>*);                               \
  template std::vector<Tensor<T>> zero_parameter_gradients(const Network<T>&);               \
  template Patch<T> backpropagate(const Network<T>&, int, Patch<T>,                          \
                                  const ActivationAdjointHook<T>&, const Patch<T>*,          \
                                  const std::vector<Patch<T>>*, std::vector<Tensor<T>>*);    \
  template void apply_activation(Patch<T>&, ActivationKind);                                 \
  template void apply_activation_derivative(Patch<T>&, const Patch<T>&, ActivationKind);

ABM_INSTANTIATE_GRAPH(float)
ABM_INSTANTIATE_GRAPH(double)

#undef ABM_INSTANTIATE_GRAPH

}  // namespace abm::detail
