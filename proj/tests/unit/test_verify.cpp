#include "abm/verify.hpp"

#include <cfloat>
#include <cmath>
#include <limits>

#include "doctest.h"
#include "random_nets.hpp"
#include "support.hpp"

using namespace abm;

namespace {

std::size_t bin_total(const LayerErrors& l) {
  std::size_t n = 0;
  for (std::size_t b : l.bins) n += b;
  return n;
}

std::size_t line_count(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_SUITE("verify") {
  TEST_CASE("relative errors") {
    const Tensor<float> f(Shape{3}, std::vector<float>{1.0f, 0.0f, -2.0f});
    CHECK(relative_errors(f, f) == Tensor<double>(Shape{3}));
    CHECK(kZeroSubstitute == static_cast<double>(FLT_MIN));
    const Tensor<double> p(Shape{2}, std::vector<double>{1.01, 1e-30});
    const Tensor<double> a(Shape{2}, std::vector<double>{1.0, 0.0});
    const auto e = relative_errors(p, a);
    CHECK(e[0] == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(std::isfinite(e[1]));
    CHECK(e[1] == doctest::Approx(1e-30 / static_cast<double>(FLT_MIN)));
    CHECK(e[1] > 1e7);
  }

  TEST_CASE("decade bins are closed on the right") {
    CHECK(error_bin(0.0) == 0);
    CHECK(error_bin(1e-12) == 0);
    CHECK(error_bin(1.5e-12) == 1);
    CHECK(error_bin(1e-2) == 10);
    CHECK(error_bin(0.011) == 11);
    CHECK(error_bin(1.0) == 12);
    CHECK(error_bin(2.0) == 13);
    CHECK(error_bin(std::numeric_limits<double>::infinity()) == 13);
    CHECK(error_bin(std::numeric_limits<double>::quiet_NaN()) == 13);
    LayerErrors l;
    for (double e : {0.0, 1e-10, 5e-3, 1e-2, 0.5}) l.add(e);
    CHECK(l.fraction_below(1e-2) == doctest::Approx(0.8));
    CHECK(l.fraction_below(1e-9) == doctest::Approx(0.4));
    CHECK(l.max_error == 0.5);
    CHECK_THROWS(l.fraction_below(0.05));
  }

  TEST_CASE("tiny binary64 networks verify exactly on both routes") {
    Rng rng(41);
    const auto net = build_tiny<double>({8, 8, 1}, 2, 5);
    std::vector<Tensor<double>> inputs;
    for (int n = 0; n < 3; ++n) inputs.push_back(test::random_tensor<double>({8, 8, 1}, rng));
    for (VerifyRoute route : {VerifyRoute::jacobian_sweep, VerifyRoute::surface_per_unit}) {
      VerifyOptions opts;
      opts.route = route;
      opts.sweep.tile = 3;
      const auto report = verify_layers(net, inputs, opts);
      CHECK(report.inputs == 3);
      REQUIRE(report.layers.size() == 3);
      CHECK(report.layers[0].layer == "Conv1");
      CHECK(report.layers[2].layer == "FC");
      CHECK(report.layers[2].mode == Mode::rm0);
      for (const auto& l : report.layers) {
        CHECK(l.count == l.units_per_input * 3);
        CHECK(bin_total(l) == l.count);
        CHECK(l.fraction_below(1e-9) == 1.0);
      }
      CHECK(report.passes());
    }
  }

  TEST_CASE("random binary64 networks verify exactly") {
    Rng rng(42);
    for (int trial = 0; trial < 20; ++trial) {
      const auto net = test::random_network<double>(rng, trial % 2 ? ActivationKind::leaky_relu : ActivationKind::relu);
      const auto report = verify_layers(net, {test::random_tensor<double>(net.input_shape(), rng)});
      for (const auto& l : report.layers) CHECK(l.fraction_below(1e-9) == 1.0);
    }
  }

  TEST_CASE("reports merge associatively and serialize one row per layer") {
    Rng rng(43);
    const auto net = build_tiny<float>({8, 8, 3}, 4, 6);
    const auto a = test::random_tensor<float>({8, 8, 3}, rng);
    const auto b = test::random_tensor<float>({8, 8, 3}, rng);
    const auto both = verify_layers(net, {a, b});
    VerificationReport merged;
    merged.merge(verify_layers(net, {a}));
    merged.merge(verify_layers(net, {b}));
    CHECK(merged.inputs == 2);
    for (std::size_t l = 0; l < both.layers.size(); ++l) {
      CHECK(merged.layers[l].bins == both.layers[l].bins);
      CHECK(merged.layers[l].max_error == both.layers[l].max_error);
    }
    CHECK(merged.summary_csv() == both.summary_csv());
    CHECK(line_count(both.summary_csv()) == 1 + both.layers.size());
    CHECK(line_count(both.histogram_csv()) == 1 + both.layers.size() * kErrorBins);
    CHECK(both.summary_csv().rfind("layer,units,fraction_le_1e-2,fraction_le_1e-4,fraction_le_1e-9,max_error\n", 0) == 0);
  }

  TEST_CASE("a failing layer fails the floor") {
    VerificationReport r;
    LayerErrors l;
    l.layer = "Conv1";
    for (int n = 0; n < 9999; ++n) l.add(0.0);
    l.add(1.0);
    r.layers.push_back(l);
    CHECK(r.passes(0.9999));
    r.layers[0].add(1.0);
    CHECK_FALSE(r.passes(0.9999));
  }

  TEST_CASE("VGG7 binary32 verification on one input clears the floor") {
    Rng rng(44);
    const auto net = build_vgg7<float>(45);
    const auto report = verify_layers(net, {test::random_tensor<float>({32, 32, 3}, rng)});
    CHECK(report.layers.size() == 6);
    CHECK(report.layers[0].count == 32768);
    CHECK(report.passes(0.9999));
  }

  TEST_CASE("hyperplane comparison") {
    Rng rng(46);
    const auto net = build_tiny<double>({8, 8, 3}, 4, 7);
    const auto x = test::random_tensor<double>({8, 8, 3}, rng);
    SUBCASE("unperturbed input: all three agree") {
      const auto c = compare_hyperplanes(net, x, x);
      REQUIRE(c.rows.size() == 4);
      for (const auto& r : c.rows) {
        CHECK(r.fresh == doctest::Approx(r.forward).epsilon(1e-12));
        CHECK(r.stale == r.fresh);
      }
    }
    SUBCASE("perturbed input: fresh tracks forward, stale does not have to") {
      const auto xp = x + test::random_tensor<double>({8, 8, 3}, rng, 0.5);
      const auto c = compare_hyperplanes(net, x, xp);
      CHECK(c.max_fresh_error() <= 1e-10);
      CHECK(c.argmax_fresh() == c.argmax_forward());
      CHECK(trace(net, x).gates != trace(net, xp).gates);
      bool stale_differs = false;
      for (const auto& r : c.rows) stale_differs = stale_differs || std::abs(r.stale - r.forward) > 1e-9;
      CHECK(stale_differs);
      CHECK(line_count(c.csv()) == 5);
    }
  }
}
