#include "abm/adjoint.hpp"

#include "doctest.h"
#include "oracles.hpp"
#include "random_nets.hpp"
#include "support.hpp"

using namespace abm;

namespace {

using test::jacobian_by_columns;
using test::transpose_apply;

// Live pre-activation outputs of every conv and of the logits.
std::vector<int> linear_targets(const Network<double>& net) {
  std::vector<int> nodes;
  for (std::size_t i = 0; i < net.conv_count(); ++i) nodes.push_back(net.conv_node(i));
  nodes.push_back(net.logits_node());
  return nodes;
}

}  // namespace

TEST_SUITE("adjoint") {
  TEST_CASE("positive weights and input open every gate") {
    Network<double> net(Architecture::custom, {4, 4, 1}, 2);
    net.add("Conv0", Conv<double>{Tensor<double>(Shape{3, 3, 1, 2}, 0.5), 1});
    net.add("ReLU0", Activation{});
    net.add("Conv1", Conv<double>{Tensor<double>(Shape{3, 3, 2, 2}, 0.25), 1});
    net.add("ReLU1", Activation{});
    net.add("GlobalPool", GlobalPool{});
    net.add("FC", Dense<double>{Tensor<double>(Shape{2, 2}, 1.0)});
    const auto tr = trace(net, Tensor<double>(Shape{4, 4, 1}, 1.0));
    for (int n : {1, 3}) {
      for (double g : tr.gates[static_cast<std::size_t>(n)].data()) CHECK(g == 1.0);
    }
    SUBCASE("open gates make the frozen map the plain linear stack") {
      Rng rng(1);
      const auto v = test::random_tensor<double>({4, 4, 1}, rng);
      const auto got = jvp(tr, net, v, net.find("Conv1"));
      const auto want = conv2d(conv2d(v, std::get<Conv<double>>(net.layer(0).op).kernel, 1),
                               std::get<Conv<double>>(net.layer(2).op).kernel, 1);
      CHECK(test::max_abs_diff(got, want) < 1e-13);
    }
  }

  TEST_CASE("gates depend only on the sign of the evaluation point") {
    Rng rng(2);
    const auto net = build_vgg7<float>(3);
    const auto x = test::random_tensor<float>({32, 32, 3}, rng);
    const auto a = trace(net, x, {0.125});
    const auto b = trace(net, x, {1.0});
    CHECK(a.gates == b.gates);
  }

  TEST_CASE("zero input closes every ReLU gate") {
    const auto net = build_tiny<double>({8, 8, 1}, 2, 1);
    const auto tr = trace(net, Tensor<double>(Shape{8, 8, 1}));
    for (const auto& g : tr.gates)
      for (double v : g.data()) CHECK(v == 0.0);
  }

  TEST_CASE("k must be positive") {
    const auto net = build_tiny<double>({8, 8, 1}, 2, 1);
    CHECK_THROWS(trace(net, Tensor<double>(Shape{8, 8, 1}), {0.0}));
    CHECK_THROWS(trace(net, Tensor<double>(Shape{8, 8, 1}), {-1.0}));
  }

  TEST_CASE("zero tangent and zero cotangent map to zero") {
    Rng rng(3);
    const auto net = build_tiny<double>({8, 8, 1}, 2, 1);
    const auto tr = trace(net, test::random_tensor<double>({8, 8, 1}, rng));
    CHECK(test::max_abs_value(jvp(tr, net, Tensor<double>(Shape{8, 8, 1}), net.logits_node())) == 0.0);
    CHECK(test::max_abs_value(vjp(tr, net, {net.logits_node(), Tensor<double>(Shape{2})})) == 0.0);
  }

  TEST_CASE("single classifier: vjp of a basis cotangent is the weight column") {
    Rng rng(4);
    Network<double> net(Architecture::custom, {1, 1, 5}, 3);
    net.add("GlobalPool", GlobalPool{});
    const auto w = test::random_tensor<double>({5, 3}, rng);
    net.add("FC", Dense<double>{w});
    const auto tr = trace(net, test::random_tensor<double>({1, 1, 5}, rng));
    for (std::size_t k = 0; k < 3; ++k) {
      Tensor<double> e(Shape{3});
      e[k] = 1.0;
      const auto h = vjp(tr, net, {net.logits_node(), e});
      for (std::size_t c = 0; c < 5; ++c) CHECK(h[c] == w[c * 3 + k]);
    }
  }

  TEST_CASE("vjp equals the transpose of the column-assembled Jacobian") {
    Rng rng(5);
    Network<double> net(Architecture::custom, {4, 4, 1}, 2);
    net.add("Conv0", Conv<double>{test::random_tensor<double>({2, 2, 1, 3}, rng), 1});
    net.add("ReLU0", Activation{});
    net.add("GlobalPool", GlobalPool{});
    net.add("FC", Dense<double>{test::random_tensor<double>({3, 2}, rng)});
    for (int trial = 0; trial < 10; ++trial) {
      const auto tr = trace(net, test::random_tensor<double>({4, 4, 1}, rng));
      const auto J = jacobian_by_columns(tr, net, net.logits_node());
      const auto cot = test::random_tensor<double>({2}, rng);
      const auto got = vjp(tr, net, {net.logits_node(), cot});
      CHECK(test::max_abs_diff(got, transpose_apply(J, cot, net.input_shape())) < 1e-14);
    }
  }

  TEST_CASE("adjoint identity on random tiny networks (binary64)") {
    Rng rng(6);
    for (int trial = 0; trial < 200; ++trial) {
      const auto net = test::random_network<double>(rng, trial % 2 ? ActivationKind::leaky_relu : ActivationKind::relu);
      const auto tr = trace(net, test::random_tensor<double>(net.input_shape(), rng));
      for (int node : linear_targets(net)) {
        const auto v = test::random_tensor<double>(net.input_shape(), rng);
        const auto cot = test::random_tensor<double>(net.shape_of(node), rng);
        const double lhs = inner_product(jvp(tr, net, v, node), cot);
        const double rhs = inner_product(v, vjp(tr, net, {node, cot}));
        CHECK(std::abs(lhs - rhs) <= 1e-10);
      }
    }
  }

  TEST_CASE("adjoint identity on VGG7 (binary32)") {
    Rng rng(7);
    const auto net = build_vgg7<float>(8);
    const auto tr = trace(net, test::random_tensor<float>({32, 32, 3}, rng));
    for (int node : {net.conv_node(3), net.logits_node()}) {
      const auto v = test::random_tensor<float>({32, 32, 3}, rng);
      const auto cot = test::random_tensor<float>(net.shape_of(node), rng);
      const double lhs = inner_product(jvp(tr, net, v, node), cot);
      const double rhs = inner_product(v, vjp(tr, net, {node, cot}));
      CHECK(std::abs(lhs - rhs) <= 1e-4 * std::max(std::abs(lhs), 1.0));
    }
  }

  TEST_CASE("frozen map at z(x) reproduces the live pre-activations at x") {
    Rng rng(9);
    for (int trial = 0; trial < 100; ++trial) {
      const auto net = test::random_network<double>(rng, trial % 2 ? ActivationKind::leaky_relu : ActivationKind::relu);
      const auto x = test::random_tensor<double>(net.input_shape(), rng);
      const auto live = forward(net, x);
      const auto tr = trace(net, x, {0.125});
      for (int node : linear_targets(net)) {
        const auto& want = live.outputs[static_cast<std::size_t>(node)];
        const auto got = jvp(tr, net, x, node);
        CHECK(test::max_abs_diff(got, want) <= 1e-12 * std::max(1.0, test::max_abs_value(want)));
      }
    }
  }

  TEST_CASE("VGG7 logits through the frozen map (binary32)") {
    Rng rng(10);
    const auto net = build_vgg7<float>(11);
    const auto x = test::random_tensor<float>({32, 32, 3}, rng);
    const auto want = logits(net, x);
    const auto got = jvp(trace(net, x), net, x, net.logits_node());
    for (std::size_t k = 0; k < 10; ++k) {
      CHECK(std::abs(got[k] - want[k]) <= 1e-5 * std::max(std::abs(want[k]), 1e-3f));
    }
  }

  TEST_CASE("vjp is bitwise identical for k in {1/8, 1, 3}") {
    Rng rng(12);
    const auto net = build_tiny<float>({8, 8, 3}, 4, 2);
    const auto x = test::random_tensor<float>({8, 8, 3}, rng);
    const auto cot = test::random_tensor<float>({4}, rng);
    const auto ref = vjp(trace(net, x, {0.125}), net, {net.logits_node(), cot});
    for (double k : {1.0, 3.0}) CHECK(vjp(trace(net, x, {k}), net, {net.logits_node(), cot}) == ref);
  }

  TEST_CASE("the hypersurface map is not linear in the input") {
    Network<double> net(Architecture::custom, {1, 1, 1}, 1);
    net.add("Conv0", Conv<double>{Tensor<double>(Shape{1, 1, 1, 1}, 1.0), 1});
    net.add("ReLU0", Activation{});
    net.add("GlobalPool", GlobalPool{});
    net.add("FC", Dense<double>{Tensor<double>(Shape{1, 1}, 1.0)});
    const Tensor<double> x(Shape{1, 1, 1}, 1.0), y(Shape{1, 1, 1}, -2.0);
    const Tensor<double> e(Shape{1}, 1.0);
    auto surface = [&](const Tensor<double>& at) { return vjp(trace(net, at), net, {net.logits_node(), e}); };
    CHECK(surface(x)[0] == 1.0);
    CHECK(surface(y)[0] == 0.0);
    CHECK(surface(x + y)[0] == 0.0);
    CHECK(surface(x + y)[0] != surface(x)[0] + surface(y)[0]);
  }

  TEST_CASE("targets beyond the logits or unknown nodes are rejected") {
    Rng rng(13);
    const auto net = build_vgg7<float>(1);
    const auto tr = trace(net, test::random_tensor<float>({32, 32, 3}, rng));
    CHECK_THROWS_AS(jvp(tr, net, Tensor<float>(Shape{32, 32, 3}), net.last()), UnsupportedError);
    CHECK_THROWS_AS(jvp(tr, net, Tensor<float>(Shape{32, 32, 3}), 999), IndexError);
    CHECK_THROWS_AS(vjp(tr, net, {net.logits_node(), Tensor<float>(Shape{9})}), ShapeError);
  }

  TEST_CASE("explicit Jacobian sweep agrees with jvp columns and vjp rows") {
    Rng rng(14);
    const auto net = build_tiny<double>({6, 7, 2}, 3, 4);
    const auto x = test::random_tensor<double>({6, 7, 2}, rng);
    const auto tr = trace(net, x);
    for (int node : {net.conv_node(1), net.conv_node(2), net.logits_node()}) {
      const auto oracle = jacobian_by_columns(tr, net, node);
      for (std::size_t tile : {1u, 3u, 4u}) {
        const auto J = jacobian(tr, net, node, {tile, 1});
        CHECK(test::max_abs_diff(J, oracle) < 1e-13);
      }
      const auto contracted = contract_jacobian(tr, net, {node}, x, {3, 2});
      CHECK(test::max_abs_diff(contracted[0], forward(net, x).outputs[static_cast<std::size_t>(node)]) < 1e-12);
    }
  }
}
