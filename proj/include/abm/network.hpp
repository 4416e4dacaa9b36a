#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "abm/tensor.hpp"

namespace abm {

enum class Architecture : std::uint8_t { custom = 0, vgg7 = 1, fixup_resnet20 = 2, tiny = 3 };

const char* to_string(Architecture arch);
Architecture parse_architecture(const std::string& name);

enum class ShortcutKind : std::uint8_t { identity = 0, avgpool_pad = 1 };

enum class LayerKind : std::uint8_t {
  conv,
  avg_pool,
  global_pool,
  activation,
  fc,
  residual_add,
  scalar_rescale
};

const char* to_string(LayerKind kind);

template <typename T>
struct Conv {
  Tensor<T> kernel;  // (r1, r2, Cin, Cout)
  std::size_t stride = 1;
};

struct AvgPool {
  std::size_t window = 3;
  std::size_t stride = 2;
};

struct GlobalPool {};

struct Activation {
  ActivationKind kind = ActivationKind::relu;
};

template <typename T>
struct Dense {
  Tensor<T> weight;  // (in, out)
};

/// Sums the layer's input (the residual branch) with the output of node `skip`.
/// avgpool_pad subsamples the shortcut with a 1x1 window at the branch stride and
/// appends zero channels.
struct ResidualAdd {
  int skip = -1;
  ShortcutKind shortcut = ShortcutKind::identity;
  std::size_t stride = 1;
};

template <typename T>
struct ScalarRescale {
  T scale = T(1);
};

template <typename T>
using LayerOp = std::variant<Conv<T>, AvgPool, GlobalPool, Activation, Dense<T>, ResidualAdd,
                             ScalarRescale<T>>;

/// Node index standing for the network input.
inline constexpr int kInputNode = -1;

template <typename T>
struct Layer {
  std::string name;
  int input = kInputNode;
  LayerOp<T> op;
  Shape output_shape;

  [[nodiscard]] LayerKind kind() const { return static_cast<LayerKind>(op.index()); }
};

enum class WeightInit : std::uint8_t {
  he_normal,  // every conv / dense weight ~ N(0, 2 / fan_in)
  fixup,      // residual-branch scaling with zero-initialised last branch conv and classifier
};

/// Feed-forward graph of bias-free layers. Layers are stored in evaluation order;
/// each reads the output of an earlier node (or the input). Structure is fixed
/// after construction; only parameter values may be edited.
template <typename T>
class Network {
 public:
  Network() = default;
  Network(Architecture arch, Shape input_shape, std::size_t classes);

  /// Appends a layer reading from `input` (default: the previous node) and returns its index.
  int add(std::string name, LayerOp<T> op, int input);
  int add(std::string name, LayerOp<T> op) { return add(std::move(name), std::move(op), last()); }

  [[nodiscard]] Architecture architecture() const { return arch_; }
  [[nodiscard]] const Shape& input_shape() const { return input_shape_; }
  [[nodiscard]] std::size_t classes() const { return classes_; }
  [[nodiscard]] const std::vector<Layer<T>>& layers() const { return layers_; }
  [[nodiscard]] std::vector<Layer<T>>& layers() { return layers_; }
  [[nodiscard]] const Layer<T>& layer(int node) const;
  [[nodiscard]] std::size_t node_count() const { return layers_.size(); }
  [[nodiscard]] int last() const { return static_cast<int>(layers_.size()) - 1; }

  /// Shape of a node output; kInputNode gives the input shape.
  [[nodiscard]] const Shape& shape_of(int node) const;

  [[nodiscard]] std::size_t conv_count() const { return conv_nodes_.size(); }
  /// Node of ConvN. Throws IndexError.
  [[nodiscard]] int conv_node(std::size_t conv_index) const;
  /// ConvN index of a conv node, or -1.
  [[nodiscard]] int conv_index_of(int node) const;
  /// The dense layer whose output is the logit vector.
  [[nodiscard]] int logits_node() const;
  /// Node whose name matches (e.g. "Conv3", "FC"). Throws IndexError.
  [[nodiscard]] int find(const std::string& name) const;

  [[nodiscard]] std::size_t parameter_count() const;
  /// Additive (bias-like) parameters in the graph. Always zero for graphs this type can express.
  [[nodiscard]] std::size_t additive_parameter_count() const;

  template <typename U>
  [[nodiscard]] Network<U> cast() const;

 private:
  Architecture arch_ = Architecture::custom;
  Shape input_shape_;
  std::size_t classes_ = 0;
  std::vector<Layer<T>> layers_;
  std::vector<int> conv_nodes_;
  int logits_node_ = -1;
};

template <typename T>
Network<T> build_vgg7(std::uint64_t seed = 0, WeightInit init = WeightInit::he_normal);

template <typename T>
Network<T> build_fixup_resnet20(std::uint64_t seed = 0, WeightInit init = WeightInit::he_normal);

/// Three 3x3 convs with 4 channels, one average pool, global pool and classifier.
template <typename T>
Network<T> build_tiny(Shape input_shape = {32, 32, 3}, std::size_t classes = 10,
                      std::uint64_t seed = 0);

template <typename T>
Network<T> build(Architecture arch, std::uint64_t seed = 0, WeightInit init = WeightInit::he_normal);

template <typename T>
struct ForwardResult {
  Tensor<T> logits;                // classifier output before its activation
  std::vector<Tensor<T>> outputs;  // outputs[n] = output of node n
};

/// Live (nonlinear) evaluation of every node.
template <typename T>
ForwardResult<T> forward(const Network<T>& net, const Tensor<T>& x);

template <typename T>
Tensor<T> logits(const Network<T>& net, const Tensor<T>& x);

template <typename T>
std::size_t predict(const Network<T>& net, const Tensor<T>& x);

template <typename T>
std::size_t argmax(const Tensor<T>& v);

}  // namespace abm
