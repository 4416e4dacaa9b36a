#include "abm/network.hpp"

#include <cmath>
#include <type_traits>

#include "abm/random.hpp"
#include "graph.hpp"

namespace abm {

const char* to_string(Architecture arch) {
  switch (arch) {
    case Architecture::custom:
      return "custom";
    case Architecture::vgg7:
      return "vgg7";
    case Architecture::fixup_resnet20:
      return "fixup_resnet20";
    case Architecture::tiny:
      return "tiny";
  }
  return "?";
}

Architecture parse_architecture(const std::string& name) {
  if (name == "vgg7") return Architecture::vgg7;
  if (name == "fixup_resnet20") return Architecture::fixup_resnet20;
  if (name == "tiny") return Architecture::tiny;
  throw Error("unknown architecture '" + name + "' (expected vgg7, fixup_resnet20 or tiny)");
}

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv:
      return "conv";
    case LayerKind::avg_pool:
      return "avg_pool";
    case LayerKind::global_pool:
      return "global_pool";
    case LayerKind::activation:
      return "activation";
    case LayerKind::fc:
      return "fc";
    case LayerKind::residual_add:
      return "residual_add";
    case LayerKind::scalar_rescale:
      return "scalar_rescale";
  }
  return "?";
}

template <typename T>
Network<T>::Network(Architecture arch, Shape input_shape, std::size_t classes)
    : arch_(arch), input_shape_(std::move(input_shape)), classes_(classes) {
  if (input_shape_.size() != 3 || element_count(input_shape_) == 0) {
    throw ShapeError("network input must be (H, W, C) with positive extents, got " +
                     to_string(input_shape_));
  }
}

template <typename T>
const Layer<T>& Network<T>::layer(int node) const {
  if (node < 0 || node >= static_cast<int>(layers_.size())) {
    throw IndexError("node " + std::to_string(node) + " out of range (network has " +
                     std::to_string(layers_.size()) + " nodes)");
  }
  return layers_[static_cast<std::size_t>(node)];
}

template <typename T>
const Shape& Network<T>::shape_of(int node) const {
  if (node == kInputNode) return input_shape_;
  return layer(node).output_shape;
}

namespace {

void require_map(const Shape& s, const std::string& name) {
  if (s.size() != 3) throw ShapeError(name + ": expects an (H, W, C) input, got " + to_string(s));
}

}  // namespace

template <typename T>
int Network<T>::add(std::string name, LayerOp<T> op, int input) {
  const int index = static_cast<int>(layers_.size());
  if (input < kInputNode || input >= index) {
    throw IndexError(name + ": input node " + std::to_string(input) + " does not precede it");
  }
  const Shape& in = shape_of(input);
  Shape out = std::visit(
      [&](auto& o) -> Shape {
        using Op = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<Op, Conv<T>>) {
          require_map(in, name);
          if (o.kernel.rank() != 4 || o.kernel.dim(2) != in[2] || o.stride == 0) {
            throw ShapeError(name + ": kernel " + to_string(o.kernel.shape()) +
                             " does not fit input " + to_string(in));
          }
          return {same_padding(in[0], o.kernel.dim(0), o.stride).out,
                  same_padding(in[1], o.kernel.dim(1), o.stride).out, o.kernel.dim(3)};
        } else if constexpr (std::is_same_v<Op, AvgPool>) {
          require_map(in, name);
          if (o.window == 0 || o.stride == 0) throw ShapeError(name + ": window and stride must be positive");
          return {same_padding(in[0], o.window, o.stride).out,
                  same_padding(in[1], o.window, o.stride).out, in[2]};
        } else if constexpr (std::is_same_v<Op, GlobalPool>) {
          require_map(in, name);
          return {in[2]};
        } else if constexpr (std::is_same_v<Op, Dense<T>>) {
          if (in.size() != 1 || o.weight.rank() != 2 || o.weight.dim(0) != in[0]) {
            throw ShapeError(name + ": weight " + to_string(o.weight.shape()) +
                             " does not fit input " + to_string(in));
          }
          return {o.weight.dim(1)};
        } else if constexpr (std::is_same_v<Op, ResidualAdd>) {
          if (o.skip < kInputNode || o.skip >= index) {
            throw IndexError(name + ": shortcut node " + std::to_string(o.skip) + " does not precede it");
          }
          const Shape& skip = shape_of(o.skip);
          Shape merged = skip;
          if (o.shortcut == ShortcutKind::avgpool_pad) {
            require_map(skip, name);
            if (o.stride == 0 || in.size() != 3 || in[2] < skip[2]) {
              throw ShapeError(name + ": cannot pad shortcut " + to_string(skip) + " to " + to_string(in));
            }
            merged = {same_padding(skip[0], 1, o.stride).out, same_padding(skip[1], 1, o.stride).out,
                      in[2]};
          }
          if (merged != in) {
            throw ShapeError(name + ": branch " + to_string(in) + " and shortcut " +
                             to_string(merged) + " differ");
          }
          return in;
        } else {
          return in;
        }
      },
      op);
  layers_.push_back(Layer<T>{std::move(name), input, std::move(op), std::move(out)});
  const Layer<T>& added = layers_.back();
  if (added.kind() == LayerKind::conv) conv_nodes_.push_back(index);
  if (added.kind() == LayerKind::fc) logits_node_ = index;
  return index;
}

template <typename T>
int Network<T>::conv_node(std::size_t conv_index) const {
  if (conv_index >= conv_nodes_.size()) {
    throw IndexError("Conv" + std::to_string(conv_index) + " does not exist (network has " +
                     std::to_string(conv_nodes_.size()) + " conv layers)");
  }
  return conv_nodes_[conv_index];
}

template <typename T>
int Network<T>::conv_index_of(int node) const {
  for (std::size_t i = 0; i < conv_nodes_.size(); ++i) {
    if (conv_nodes_[i] == node) return static_cast<int>(i);
  }
  return -1;
}

template <typename T>
int Network<T>::logits_node() const {
  if (logits_node_ < 0) throw IndexError("network has no classifier layer");
  return logits_node_;
}

template <typename T>
int Network<T>::find(const std::string& name) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].name == name) return static_cast<int>(i);
  }
  throw IndexError("no layer named '" + name + "'");
}

template <typename T>
std::size_t Network<T>::parameter_count() const {
  std::size_t total = 0;
  for (const Layer<T>& l : layers_) {
    if (const auto* c = std::get_if<Conv<T>>(&l.op)) total += c->kernel.size();
    if (const auto* d = std::get_if<Dense<T>>(&l.op)) total += d->weight.size();
    if (std::holds_alternative<ScalarRescale<T>>(l.op)) total += 1;
  }
  return total;
}

template <typename T>
std::size_t Network<T>::additive_parameter_count() const {
  std::size_t total = 0;
  for (const Layer<T>& l : layers_) {
    // Every layer kind is either linear with multiplicative parameters or a
    // parameter-free ReLU-family activation; none adds a constant.
    switch (l.kind()) {
      case LayerKind::conv:
      case LayerKind::avg_pool:
      case LayerKind::global_pool:
      case LayerKind::activation:
      case LayerKind::fc:
      case LayerKind::residual_add:
      case LayerKind::scalar_rescale:
        break;
    }
  }
  return total;
}

template <typename T>
template <typename U>
Network<U> Network<T>::cast() const {
  Network<U> out(arch_, input_shape_, classes_);
  for (const Layer<T>& l : layers_) {
    LayerOp<U> op = std::visit(
        [](const auto& o) -> LayerOp<U> {
          using Op = std::decay_t<decltype(o)>;
          if constexpr (std::is_same_v<Op, Conv<T>>) {
            return Conv<U>{o.kernel.template cast<U>(), o.stride};
          } else if constexpr (std::is_same_v<Op, Dense<T>>) {
            return Dense<U>{o.weight.template cast<U>()};
          } else if constexpr (std::is_same_v<Op, ScalarRescale<T>>) {
            return ScalarRescale<U>{static_cast<U>(o.scale)};
          } else {
            return o;
          }
        },
        l.op);
    out.add(l.name, std::move(op), l.input);
  }
  return out;
}

namespace {

template <typename T>
Tensor<T> he_normal(Shape shape, std::size_t fan_in, double gain, Rng& rng) {
  Tensor<T> t(std::move(shape));
  const double sd = gain * std::sqrt(2.0 / static_cast<double>(fan_in));
  for (T& v : t.data()) v = static_cast<T>(rng.normal(0.0, sd));
  return t;
}

template <typename T>
Conv<T> conv3x3(std::size_t cin, std::size_t cout, std::size_t stride, double gain, Rng& rng) {
  return Conv<T>{he_normal<T>({3, 3, cin, cout}, 9 * cin, gain, rng), stride};
}

}  // namespace

template <typename T>
Network<T> build_vgg7(std::uint64_t seed, WeightInit) {
  Rng rng(seed);
  Network<T> net(Architecture::vgg7, {32, 32, 3}, 10);
  const std::size_t widths[6][2] = {{3, 32}, {32, 32}, {32, 64}, {64, 64}, {64, 96}, {96, 96}};
  int pools = 0;
  for (std::size_t i = 0; i < 6; ++i) {
    const std::string id = std::to_string(i);
    net.add("Conv" + id, conv3x3<T>(widths[i][0], widths[i][1], 1, 1.0, rng));
    net.add("ReLU" + id, Activation{ActivationKind::relu});
    if (i == 1 || i == 3) net.add("AvgPool" + std::to_string(pools++), AvgPool{3, 2});
  }
  net.add("GlobalPool", GlobalPool{});
  net.add("FC", Dense<T>{he_normal<T>({96, 10}, 96, 1.0, rng)});
  net.add("ReLU6", Activation{ActivationKind::relu6});
  return net;
}

template <typename T>
Network<T> build_fixup_resnet20(std::uint64_t seed, WeightInit init) {
  Rng rng(seed);
  Network<T> net(Architecture::fixup_resnet20, {32, 32, 3}, 10);
  const bool fixup = init == WeightInit::fixup;
  constexpr std::size_t kBlocks = 9;
  // Fixup scales the first branch conv by blocks^(-1/(2m-2)) with m = 2 layers per branch.
  const double branch_gain = fixup ? 1.0 / std::sqrt(static_cast<double>(kBlocks)) : 1.0;

  net.add("Conv0", conv3x3<T>(3, 32, 1, 1.0, rng));
  int block_in = net.add("ReLU0", Activation{ActivationKind::relu});
  std::size_t width = 32;
  for (std::size_t b = 0; b < kBlocks; ++b) {
    const std::size_t out_width = b < 3 ? 32 : (b < 6 ? 64 : 96);
    const bool downsample = out_width != width;
    const std::size_t stride = downsample ? 2 : 1;
    const std::string c1 = std::to_string(2 * b + 1);
    const std::string c2 = std::to_string(2 * b + 2);
    net.add("Conv" + c1, conv3x3<T>(width, out_width, stride, branch_gain, rng), block_in);
    net.add("ReLU" + c1, Activation{ActivationKind::relu});
    Conv<T> second = conv3x3<T>(out_width, out_width, 1, 1.0, rng);
    if (fixup) second.kernel.fill(T(0));
    net.add("Conv" + c2, std::move(second));
    net.add("Rescale" + c2, ScalarRescale<T>{T(1)});
    net.add("Residual" + std::to_string(b),
            ResidualAdd{block_in, downsample ? ShortcutKind::avgpool_pad : ShortcutKind::identity, stride});
    block_in = net.add("ReLU" + c2, Activation{ActivationKind::relu});
    width = out_width;
  }
  net.add("GlobalPool", GlobalPool{});
  Dense<T> fc{he_normal<T>({96, 10}, 96, 1.0, rng)};
  if (fixup) fc.weight.fill(T(0));
  net.add("FC", std::move(fc));
  net.add("ReLU19", Activation{ActivationKind::relu});
  return net;
}

template <typename T>
Network<T> build_tiny(Shape input_shape, std::size_t classes, std::uint64_t seed) {
  Rng rng(seed);
  if (input_shape.size() != 3) throw ShapeError("tiny network input must be (H, W, C)");
  Network<T> net(Architecture::tiny, input_shape, classes);
  net.add("Conv0", conv3x3<T>(input_shape[2], 4, 1, 1.0, rng));
  net.add("ReLU0", Activation{ActivationKind::relu});
  net.add("Conv1", conv3x3<T>(4, 4, 1, 1.0, rng));
  net.add("ReLU1", Activation{ActivationKind::relu});
  net.add("AvgPool0", AvgPool{3, 2});
  net.add("Conv2", conv3x3<T>(4, 4, 1, 1.0, rng));
  net.add("ReLU2", Activation{ActivationKind::relu});
  net.add("GlobalPool", GlobalPool{});
  net.add("FC", Dense<T>{he_normal<T>({4, classes}, 4, 1.0, rng)});
  return net;
}

template <typename T>
Network<T> build(Architecture arch, std::uint64_t seed, WeightInit init) {
  switch (arch) {
    case Architecture::vgg7:
      return build_vgg7<T>(seed, init);
    case Architecture::fixup_resnet20:
      return build_fixup_resnet20<T>(seed, init);
    case Architecture::tiny:
      return build_tiny<T>({32, 32, 3}, 10, seed);
    case Architecture::custom:
      break;
  }
  throw UnsupportedError("custom architectures have no builder");
}

template <typename T>
ForwardResult<T> forward(const Network<T>& net, const Tensor<T>& x) {
  if (x.shape() != net.input_shape()) {
    throw ShapeError("input " + to_string(x.shape()) + " does not match network input " +
                     to_string(net.input_shape()));
  }
  if (net.node_count() == 0) throw ShapeError("network has no layers");
  const detail::Grid in_grid = detail::grid_of(net.input_shape());
  detail::ActivationHook<T> live = [&net](int node, detail::Patch<T>& values) {
    detail::apply_activation(values, std::get<Activation>(net.layer(node).op).kind);
  };
  auto run = detail::propagate(net, detail::to_patch(x, in_grid), net.last(), live, {}, true);
  ForwardResult<T> result;
  result.outputs.reserve(net.node_count());
  for (int n = 0; n < static_cast<int>(net.node_count()); ++n) {
    const Shape& shape = net.shape_of(n);
    result.outputs.push_back(
        detail::to_tensor(run.outputs[static_cast<std::size_t>(n)], detail::grid_of(shape)).reshaped(shape));
  }
  result.logits = result.outputs[static_cast<std::size_t>(net.logits_node())];
  return result;
}

template <typename T>
Tensor<T> logits(const Network<T>& net, const Tensor<T>& x) {
  if (x.shape() != net.input_shape()) {
    throw ShapeError("input " + to_string(x.shape()) + " does not match network input " +
                     to_string(net.input_shape()));
  }
  const int target = net.logits_node();
  const detail::Grid in_grid = detail::grid_of(net.input_shape());
  detail::ActivationHook<T> live = [&net](int node, detail::Patch<T>& values) {
    detail::apply_activation(values, std::get<Activation>(net.layer(node).op).kind);
  };
  auto run = detail::propagate(net, detail::to_patch(x, in_grid), target, live, {}, false);
  const auto& out = run.outputs[static_cast<std::size_t>(target)];
  return Tensor<T>(net.shape_of(target), out.data);
}

template <typename T>
std::size_t argmax(const Tensor<T>& v) {
  if (v.size() == 0) throw ShapeError("argmax of an empty tensor");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

template <typename T>
std::size_t predict(const Network<T>& net, const Tensor<T>& x) {
  return argmax(logits(net, x));
}

#define ABM_INSTANTIATE_NETWORK(T)                                                     \
  template class Network<T>;                                                           \
  template Network<T> build_vgg7<T>(std::uint64_t, WeightInit);                        \
  template Network<T> build_fixup_resnet20<T>(std::uint64_t, WeightInit);              \
  template Network<T> build_tiny<T>(Shape, std::size_t, std::uint64_t);                \
  template Network<T> build<T>(Architecture, std::uint64_t, WeightInit);               \
  template ForwardResult<T> forward(const Network<T>&, const Tensor<T>&);              \
  template Tensor<T> logits(const Network<T>&, const Tensor<T>&);                      \
  template std::size_t predict(const Network<T>&, const Tensor<T>&);                   \
  template std::size_t argmax(const Tensor<T>&);

ABM_INSTANTIATE_NETWORK(float)
ABM_INSTANTIATE_NETWORK(double)

template Network<double> Network<float>::cast<double>() const;
template Network<float> Network<double>::cast<float>() const;
template Network<float> Network<float>::cast<float>() const;
template Network<double> Network<double>::cast<double>() const;

#undef ABM_INSTANTIATE_NETWORK

}  // namespace abm
