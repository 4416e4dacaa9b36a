#include "abm/adjoint.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <type_traits>

#include "graph.hpp"
#include "parallel.hpp"

namespace abm {
namespace {

using detail::Box;
using detail::Grid;
using detail::Patch;

template <typename T>
T gate_of(T pre, ActivationKind kind) {
  switch (kind) {
    case ActivationKind::relu:
    case ActivationKind::relu6:
      return pre > T(0) ? T(1) : T(0);
    case ActivationKind::leaky_relu:
      return pre > T(0) ? T(1) : T(kLeakySlope);
  }
  return T(0);
}

template <typename T>
void check_trace(const ActivationTrace<T>& trace, const Network<T>& net) {
  if (trace.gates.size() != net.node_count() || trace.input_shape != net.input_shape()) {
    throw ShapeError("activation trace was recorded for a different network");
  }
}

template <typename T>
detail::ActivationHook<T> frozen_gates(const ActivationTrace<T>& trace, const Network<T>& net) {
  return [&trace, &net](int node, Patch<T>& values) {
    const auto n = static_cast<std::size_t>(node);
    detail::multiply_mask(values, trace.gates[n], detail::node_grid(net, net.layer(node).input));
  };
}

template <typename T>
Patch<T> sparse_patch(const Tensor<T>& t, const Grid& grid) {
  const Box box = detail::support(t, grid);
  Patch<T> p(1, grid.c, box);
  if (box.empty()) return p;
  for (std::ptrdiff_t y = box.y0; y < box.y1; ++y) {
    const T* src = t.raw() + (static_cast<std::size_t>(y) * grid.w + static_cast<std::size_t>(box.x0)) * grid.c;
    std::copy_n(src, static_cast<std::size_t>(box.width()) * grid.c, p.at(0, y, box.x0));
  }
  return p;
}

template <typename T>
Tensor<T> dense_of(const Patch<T>& p, const Shape& shape) {
  return detail::to_tensor(p, detail::grid_of(shape)).reshaped(shape);
}

std::vector<Box> input_tiles(const Grid& g, std::size_t tile) {
  tile = std::max<std::size_t>(1, tile);
  std::vector<Box> tiles;
  for (std::size_t y = 0; y < g.h; y += tile) {
    for (std::size_t x = 0; x < g.w; x += tile) {
      tiles.push_back({static_cast<std::ptrdiff_t>(y), static_cast<std::ptrdiff_t>(std::min(y + tile, g.h)),
                       static_cast<std::ptrdiff_t>(x), static_cast<std::ptrdiff_t>(std::min(x + tile, g.w))});
    }
  }
  return tiles;
}

// One basis vector per (pixel, channel) of the tile, in row-major (y, x, c) order.
template <typename T>
Patch<T> basis_patch(const Box& tile, std::size_t channels) {
  const std::size_t count = tile.area() * channels;
  Patch<T> p(count, channels, tile);
  for (std::size_t b = 0; b < count; ++b) p.sample(b)[b] = T(1);
  return p;
}

std::size_t basis_index(const Box& tile, const Grid& g, std::size_t b) {
  const std::size_t c = b % g.c;
  const std::size_t pix = b / g.c;
  const std::size_t y = static_cast<std::size_t>(tile.y0) + pix / static_cast<std::size_t>(tile.width());
  const std::size_t x = static_cast<std::size_t>(tile.x0) + pix % static_cast<std::size_t>(tile.width());
  return (y * g.w + x) * g.c + c;
}

// Batches below this size run faster through the dense convolution.
constexpr std::size_t kGatedBatch = 24;

// Convs fed by a ReLU read exact zeros wherever that ReLU's gate is closed.
template <typename T>
detail::ConvInputGates<T> conv_input_gates(const ActivationTrace<T>& trace, const Network<T>& net) {
  detail::ConvInputGates<T> gates(net.node_count(), nullptr);
  for (std::size_t c = 0; c < net.conv_count(); ++c) {
    const int node = net.conv_node(c);
    const int input = net.layer(node).input;
    if (input == kInputNode) continue;
    const auto* act = std::get_if<Activation>(&net.layer(input).op);
    if (act && act->kind == ActivationKind::relu) gates[static_cast<std::size_t>(node)] = &trace.gates[static_cast<std::size_t>(input)];
  }
  return gates;
}

template <typename T>
void sweep_tile(const ActivationTrace<T>& trace, const Network<T>& net, const Box& tile, int last,
                const detail::ConvInputGates<T>& gates,
                const std::type_identity_t<detail::NodeVisitor<T>>& visit) {
  const Grid in = detail::grid_of(net.input_shape());
  const bool gated = tile.area() * in.c >= kGatedBatch;
  detail::propagate(net, basis_patch<T>(tile, in.c), last, frozen_gates(trace, net), visit, false,
                    gated ? &gates : nullptr);
}

}  // namespace

template <typename T>
ActivationTrace<T> trace(const Network<T>& net, const Tensor<T>& x, EvaluationPoint z) {
  if (!(z.k > 0.0)) throw Error("evaluation point scale k must be positive, got " + std::to_string(z.k));
  if (x.shape() != net.input_shape()) {
    throw ShapeError("input " + to_string(x.shape()) + " does not match network input " +
                     to_string(net.input_shape()));
  }
  ActivationTrace<T> result;
  result.k = z.k;
  result.input_shape = net.input_shape();
  result.gates.resize(net.node_count());
  Tensor<T> scaled = x;
  scaled *= static_cast<T>(z.k);
  detail::ActivationHook<T> record = [&](int node, Patch<T>& values) {
    const ActivationKind kind = std::get<Activation>(net.layer(node).op).kind;
    const Shape& shape = net.shape_of(net.layer(node).input);
    Tensor<T> gate = dense_of(values, shape);
    for (T& v : gate.data()) v = gate_of(v, kind);
    result.gates[static_cast<std::size_t>(node)] = std::move(gate);
    detail::apply_activation(values, kind);
  };
  detail::propagate(net, detail::to_patch(scaled, detail::grid_of(net.input_shape())), net.last(),
                    record, {}, false);
  return result;
}

template <typename T>
void check_linear_target(const Network<T>& net, int node) {
  if (node < 0 || node >= static_cast<int>(net.node_count())) {
    throw IndexError("target node " + std::to_string(node) + " out of range");
  }
  const Layer<T>& target = net.layer(node);
  for (int n = 0; n <= node; ++n) {
    const auto* act = std::get_if<Activation>(&net.layer(n).op);
    if (act && act->kind == ActivationKind::relu6) {
      throw UnsupportedError(target.name + " lies behind the clipped activation " + net.layer(n).name +
                             "; the frozen linear map stops at the logits");
    }
  }
  const bool has_logits = std::any_of(net.layers().begin(), net.layers().end(),
                                      [](const Layer<T>& l) { return l.kind() == LayerKind::fc; });
  if (has_logits && node > net.logits_node()) {
    throw UnsupportedError(target.name + " lies beyond the logits");
  }
}

template <typename T>
Tensor<T> jvp(const ActivationTrace<T>& trace, const Network<T>& net, const Tensor<T>& v, int node) {
  check_trace(trace, net);
  check_linear_target(net, node);
  require_same_shape(v.shape(), net.input_shape(), "jvp tangent");
  const Grid in = detail::grid_of(net.input_shape());
  auto run = detail::propagate(net, sparse_patch(v, in), node, frozen_gates(trace, net), {}, false);
  return dense_of(run.outputs[static_cast<std::size_t>(node)], net.shape_of(node));
}

template <typename T>
Tensor<T> vjp(const ActivationTrace<T>& trace, const Network<T>& net, const Cotangent<T>& cot) {
  check_trace(trace, net);
  check_linear_target(net, cot.node);
  require_same_shape(cot.value.shape(), net.shape_of(cot.node), "vjp cotangent");
  const Grid out = detail::node_grid(net, cot.node);
  detail::ActivationAdjointHook<T> adjoint = [&](int node, Patch<T>& g) {
    detail::multiply_mask(g, trace.gates[static_cast<std::size_t>(node)],
                          detail::node_grid(net, net.layer(node).input));
  };
  Patch<T> result = detail::backpropagate(net, cot.node, sparse_patch(cot.value, out), adjoint);
  return dense_of(result, net.input_shape());
}

template <typename T>
Tensor<T> jacobian(const ActivationTrace<T>& trace, const Network<T>& net, int node,
                   SweepOptions options) {
  check_trace(trace, net);
  check_linear_target(net, node);
  const Grid in = detail::grid_of(net.input_shape());
  const Grid out = detail::node_grid(net, node);
  const std::size_t n_in = in.h * in.w * in.c;
  const std::size_t units = out.h * out.w * out.c;
  Tensor<T> J(Shape{units, n_in});
  const auto tiles = input_tiles(in, options.tile);
  const auto gates = conv_input_gates(trace, net);
  detail::parallel_for(tiles.size(), options.workers, [&](std::size_t t) {
    const Box& tile = tiles[t];
    sweep_tile(trace, net, tile, node, gates, [&](int n, const Patch<T>& p) {
      if (n != node || p.box.empty()) return;
      for (std::size_t b = 0; b < p.batch; ++b) {
        const std::size_t col = basis_index(tile, in, b);
        for (std::ptrdiff_t y = p.box.y0; y < p.box.y1; ++y) {
          for (std::ptrdiff_t x = p.box.x0; x < p.box.x1; ++x) {
            const T* src = p.at(b, y, x);
            const std::size_t unit0 = (static_cast<std::size_t>(y) * out.w + static_cast<std::size_t>(x)) * out.c;
            for (std::size_t c = 0; c < out.c; ++c) J.raw()[(unit0 + c) * n_in + col] = src[c];
          }
        }
      }
    });
  });
  return J;
}

template <typename T>
std::vector<Tensor<T>> contract_jacobian(const ActivationTrace<T>& trace, const Network<T>& net,
                                         const std::vector<int>& nodes, const Tensor<T>& w,
                                         SweepOptions options) {
  check_trace(trace, net);
  require_same_shape(w.shape(), net.input_shape(), "contraction weights");
  if (nodes.empty()) return {};
  int last = 0;
  for (int n : nodes) {
    check_linear_target(net, n);
    last = std::max(last, n);
  }
  const Grid in = detail::grid_of(net.input_shape());
  const auto tiles = input_tiles(in, options.tile);
  const auto gates = conv_input_gates(trace, net);

  std::vector<Patch<T>> totals(nodes.size());
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    const Grid g = detail::node_grid(net, nodes[k]);
    totals[k] = Patch<T>(1, g.c, Box::full(g));
  }

  using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;
  const std::size_t group = std::max<std::size_t>(1, options.workers);
  for (std::size_t first = 0; first < tiles.size(); first += group) {
    const std::size_t count = std::min(group, tiles.size() - first);
    // contributions[t][k]: tile t's share of node k's contraction, on the node patch box.
    std::vector<std::vector<Patch<T>>> contributions(count, std::vector<Patch<T>>(nodes.size()));
    detail::parallel_for(count, options.workers, [&](std::size_t t) {
      const Box& tile = tiles[first + t];
      RowVector weights(static_cast<Eigen::Index>(tile.area() * in.c));
      for (std::size_t b = 0; b < tile.area() * in.c; ++b) {
        weights[static_cast<Eigen::Index>(b)] = w[basis_index(tile, in, b)];
      }
      sweep_tile(trace, net, tile, last, gates, [&](int n, const Patch<T>& p) {
        for (std::size_t k = 0; k < nodes.size(); ++k) {
          if (nodes[k] != n) continue;
          Patch<T> c(1, p.channels, p.box);
          if (!p.box.empty()) {
            Eigen::Map<const RowMatrix> m(p.data.data(), static_cast<Eigen::Index>(p.batch),
                                          static_cast<Eigen::Index>(p.sample_size()));
            Eigen::Map<RowVector> dst(c.data.data(), static_cast<Eigen::Index>(p.sample_size()));
            dst.noalias() = weights * m;
          }
          contributions[t][k] = std::move(c);
        }
      });
    });
    for (std::size_t t = 0; t < count; ++t) {
      for (std::size_t k = 0; k < nodes.size(); ++k) {
        const Patch<T>& c = contributions[t][k];
        if (c.box.empty()) continue;
        const std::size_t row = static_cast<std::size_t>(c.box.width()) * c.channels;
        for (std::ptrdiff_t y = c.box.y0; y < c.box.y1; ++y) {
          const T* src = c.at(0, y, c.box.x0);
          T* dst = totals[k].at(0, y, c.box.x0);
          for (std::size_t i = 0; i < row; ++i) dst[i] += src[i];
        }
      }
    }
  }
  std::vector<Tensor<T>> result;
  result.reserve(nodes.size());
  for (std::size_t k = 0; k < nodes.size(); ++k) result.push_back(dense_of(totals[k], net.shape_of(nodes[k])));
  return result;
}

#define ABM_INSTANTIATE_ADJOINT(T)                                                                    \
  template ActivationTrace<T> trace(const Network<T>&, const Tensor<T>&, EvaluationPoint);            \
  template void check_linear_target(const Network<T>&, int);                                          \
  template Tensor<T> jvp(const ActivationTrace<T>&, const Network<T>&, const Tensor<T>&, int);        \
  template Tensor<T> vjp(const ActivationTrace<T>&, const Network<T>&, const Cotangent<T>&);          \
  template Tensor<T> jacobian(const ActivationTrace<T>&, const Network<T>&, int, SweepOptions);       \
  template std::vector<Tensor<T>> contract_jacobian(const ActivationTrace<T>&, const Network<T>&,     \
                                                    const std::vector<int>&, const Tensor<T>&,        \
                                                    SweepOptions);

ABM_INSTANTIATE_ADJOINT(float)
ABM_INSTANTIATE_ADJOINT(double)

#undef ABM_INSTANTIATE_ADJOINT

}  // namespace abm
