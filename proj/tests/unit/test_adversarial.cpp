#include "abm/adversarial.hpp"
#include "abm/dataset.hpp"
#include "abm/trainer.hpp"

#include <cmath>
#include <limits>

#include "binary_io.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace abm;

namespace {

const Network<float>& trained_tiny() {
  static const Network<float> net = [] {
    const auto dir = test::scratch_dir("adversarial_data");
    write_synthetic_cifar(dir, 5, 200, 100);
    DatasetConfig dc;
    dc.data_dir = dir;
    dc.val_count = 100;
    TrainConfig tc;
    tc.epochs = 10;
    tc.batch_size = 50;
    tc.lr_schedule = {{0, 0.2}};
    tc.augment = false;
    return train(build_tiny<float>({32, 32, 3}, 10, 12), load_cifar10(dc), dc, tc).best;
  }();
  return net;
}

struct Fixture {
  const Network<float>& net = trained_tiny();
  Tensor<float> x;
  std::size_t label = 0;

  Fixture() {
    Rng rng(40);
    x = test::random_tensor<float>({32, 32, 3}, rng, 0.5);
    label = predict(net, x);
  }
};

Tensor<float> add(const Tensor<float>& a, const Tensor<float>& b) {
  Tensor<float> out = a;
  out += b;
  return out;
}

double max_abs(const Tensor<float>& t) { return test::max_abs_value(t); }

}  // namespace

TEST_SUITE("adversarial") {
  TEST_CASE("zero epsilon leaves the input alone") {
    Fixture f;
    AdversarialConfig cfg;
    cfg.epsilon = 0.0;
    const auto p = untargeted_attack(f.net, f.x, f.label, cfg);
    CHECK(max_abs(p.delta) == 0.0);
    CHECK(!p.success);
    CHECK(p.achieved == static_cast<long>(f.label));
    CHECK(p.steps == cfg.steps);
    cfg.epsilon = -0.1;
    CHECK_THROWS_AS(untargeted_attack(f.net, f.x, f.label, cfg), Error);
  }

  TEST_CASE("untargeted attack flips the prediction within its step budget") {
    Fixture f;
    AdversarialConfig cfg;
    cfg.steps = 40;
    const auto p = untargeted_attack(f.net, f.x, f.label, cfg);
    CHECK(p.success);
    CHECK(!p.degenerate);
    CHECK(p.steps >= 1);
    CHECK(p.steps <= cfg.steps);
    CHECK(max_abs(p.delta) <= static_cast<double>(p.steps) * cfg.epsilon + 1e-6);
    CHECK(p.achieved == static_cast<long>(predict(f.net, add(f.x, p.delta))));
    CHECK(p.achieved != static_cast<long>(f.label));
    CHECK(p.l2 == doctest::Approx(static_cast<double>(l2_norm(p.delta))));
    for (float v : p.delta.data()) CHECK(std::isfinite(v));
  }

  TEST_CASE("attacks on an input that is already misclassified are degenerate") {
    Fixture f;
    const auto wrong = (f.label + 1) % 10;
    const auto p = untargeted_attack(f.net, f.x, wrong, AdversarialConfig{});
    CHECK(p.degenerate);
    CHECK(!p.success);
    CHECK(max_abs(p.delta) == 0.0);
  }

  TEST_CASE("targeted attack reaches its class; the current class is degenerate") {
    Fixture f;
    const auto same = targeted_least_likely(f.net, f.x, f.label, AdversarialConfig{});
    CHECK(same.degenerate);
    CHECK(same.success);
    CHECK(max_abs(same.delta) == 0.0);

    AdversarialConfig cfg;
    cfg.steps = 60;
    const std::size_t target = least_likely_class(f.net, f.x);
    REQUIRE(target != f.label);
    const auto p = targeted_least_likely(f.net, f.x, target, cfg);
    CHECK(p.success);
    CHECK(predict(f.net, add(f.x, p.delta)) == target);
    CHECK(max_abs(p.delta) <= static_cast<double>(p.steps) * cfg.epsilon + 1e-6);
    CHECK_THROWS_AS(targeted_least_likely(f.net, f.x, 10, cfg), IndexError);
  }

  TEST_CASE("least likely class has the smallest logit") {
    Fixture f;
    const auto z = logits(f.net, f.x);
    const auto k = least_likely_class(f.net, f.x);
    for (std::size_t c = 0; c < z.size(); ++c) CHECK(z[k] <= z[c]);
  }

  TEST_CASE("S_B1, the scaled set and the Gaussian contrast set") {
    Fixture f;
    AdversarialConfig cfg;
    cfg.steps = 60;
    cfg.seed = 9;
    const auto sb1 = build_sb1(f.net, f.x, f.label, cfg);
    REQUIRE(sb1.items.size() == 10);
    CHECK(sb1.items[f.label].degenerate);
    CHECK(max_abs(sb1.items[f.label].delta) == 0.0);
    for (std::size_t c = 0; c < 10; ++c) {
      CHECK(sb1.items[c].target == static_cast<long>(c));
      CHECK(sb1.items[c].source == static_cast<long>(c));
      if (c != f.label) CHECK(max_abs(sb1.items[c].delta) > 0.0);
    }

    cfg.scaled_count = 5;
    cfg.gaussian_count = 6;
    const auto sb2 = build_sb2(f.net, f.x, f.label, sb1, cfg);
    std::size_t scaled = 0, gaussian = 0;
    for (const auto& p : sb2.set.items) {
      const auto z = logits(f.net, add(f.x, p.delta));
      const std::size_t pred = argmax(z);
      CHECK(p.l2 == doctest::Approx(static_cast<double>(l2_norm(p.delta))));
      if (p.provenance == Provenance::scaled) {
        ++scaled;
        CHECK(pred != f.label);
        CHECK(z[pred] > cfg.threshold + z[f.label]);
        CHECK(p.beta > 0.0);
        CHECK(p.beta <= 1.0);
        CHECK(p.source != static_cast<long>(f.label));
      } else {
        ++gaussian;
        CHECK(p.provenance == Provenance::gaussian);
        CHECK(pred == f.label);
      }
    }
    CHECK(scaled == std::min<std::size_t>(sb2.qualified, 5));
    CHECK(sb2.qualified > 0);
    CHECK(gaussian == 6);
    CHECK(!sb2.gaussian_exhausted);
    CHECK(sb2.gaussian_variance > 0.0);

    const auto again = build_sb2(f.net, f.x, f.label, sb1, cfg);
    CHECK(manifest_csv(again.set) == manifest_csv(sb2.set));
    const auto dir = test::scratch_dir("sb2_repro");
    write_perturbation_set(sb2.set, dir / "a.abma");
    write_perturbation_set(again.set, dir / "b.abma");
    CHECK(detail::read_file(dir / "a.abma") == detail::read_file(dir / "b.abma"));

    cfg.threshold = std::numeric_limits<double>::infinity();
    const auto none = build_sb2(f.net, f.x, f.label, sb1, cfg);
    CHECK(none.qualified == 0);
    for (const auto& p : none.set.items) CHECK(p.provenance == Provenance::gaussian);
  }

  TEST_CASE("beta scan visits 1.0 down to beta_step") {
    Fixture f;
    PerturbationSet<float> sb1;
    sb1.input_shape = f.x.shape();
    Perturbation<float> big;
    big.delta = Tensor<float>(f.x.shape());
    AdversarialConfig cfg;
    cfg.steps = 60;
    const auto strong = untargeted_attack(f.net, f.x, f.label, cfg);
    big.delta = strong.delta;
    big.delta *= 50.0f;
    sb1.items.push_back(big);
    cfg.gaussian_count = 0;
    cfg.threshold = -std::numeric_limits<double>::infinity();
    const auto sb2 = build_sb2(f.net, f.x, f.label, sb1, cfg);
    std::vector<double> betas;
    for (const auto& p : sb2.set.items) betas.push_back(p.beta);
    std::sort(betas.rbegin(), betas.rend());
    REQUIRE(!betas.empty());
    CHECK(betas.front() == 1.0);
    for (std::size_t j = 1; j < betas.size(); ++j) CHECK(betas[j - 1] - betas[j] == doctest::Approx(0.05));
    CHECK(betas.size() <= 20);
  }

  TEST_CASE("perturbation archives round-trip and detect corruption") {
    Rng rng(3);
    PerturbationSet<float> set;
    set.input_shape = {4, 4, 3};
    for (int i = 0; i < 3; ++i) {
      Perturbation<float> p;
      p.delta = test::random_tensor<float>({4, 4, 3}, rng);
      p.provenance = static_cast<Provenance>(i);
      p.target = i - 1;
      p.achieved = 2 * i;
      p.beta = 0.25 * i;
      p.source = i;
      p.steps = static_cast<std::size_t>(i + 4);
      p.success = i % 2 == 0;
      p.degenerate = i == 1;
      p.l2 = static_cast<double>(l2_norm(p.delta));
      set.items.push_back(p);
    }
    const auto dir = test::scratch_dir("abma");
    write_perturbation_set(set, dir / "s.abma");
    const auto back = read_perturbation_set<float>(dir / "s.abma");
    REQUIRE(back.items.size() == 3);
    CHECK(back.input_shape == set.input_shape);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(back.items[i].delta == set.items[i].delta);
      CHECK(back.items[i].provenance == set.items[i].provenance);
      CHECK(back.items[i].target == set.items[i].target);
      CHECK(back.items[i].beta == set.items[i].beta);
      CHECK(back.items[i].steps == set.items[i].steps);
      CHECK(back.items[i].success == set.items[i].success);
      CHECK(back.items[i].degenerate == set.items[i].degenerate);
    }
    CHECK(manifest_csv(back) == manifest_csv(set));
    const auto as_double = read_perturbation_set<double>(dir / "s.abma");
    CHECK(as_double.items[2].delta[5] == static_cast<double>(set.items[2].delta[5]));

    auto bytes = detail::read_file(dir / "s.abma");
    bytes[40] ^= 1;
    detail::write_file(dir / "bad.abma", bytes);
    CHECK_THROWS_AS(read_perturbation_set<float>(dir / "bad.abma"), FormatError);
    bytes.resize(bytes.size() / 2);
    detail::write_file(dir / "short.abma", bytes);
    CHECK_THROWS_AS(read_perturbation_set<float>(dir / "short.abma"), FormatError);
  }

  TEST_CASE("manifest rows") {
    PerturbationSet<float> set;
    set.input_shape = {1, 1, 1};
    Perturbation<float> p;
    p.delta = Tensor<float>(Shape{1, 1, 1});
    p.delta[0] = 3.0f;
    p.l2 = 3.0;
    p.provenance = Provenance::scaled;
    p.target = 2;
    p.achieved = 2;
    p.beta = 0.85;
    p.source = 2;
    p.success = true;
    set.items.push_back(p);
    CHECK(manifest_csv(set) ==
          "index,provenance,target,achieved,l2,beta,source,steps,success,degenerate\n0,scaled,2,2,3,0.85,2,0,1,0\n");
  }

  TEST_CASE("principal-axis projection") {
    // Points a_i * u + b_i * v with orthogonal u, v and var(a) >> var(b).
    Rng rng(8);
    const std::vector<double> u = {0.6, 0.8, 0.0, 0.0}, v = {0.0, 0.0, 1.0, 0.0};
    std::vector<double> a, b;
    for (int i = 0; i < 12; ++i) {
      a.push_back(rng.normal(0.0, 5.0));
      b.push_back(rng.normal(0.0, 0.5));
    }
    const auto centre = [](std::vector<double> s) {
      double m = 0.0;
      for (double e : s) m += e;
      m /= static_cast<double>(s.size());
      for (double& e : s) e -= m;
      return s;
    };
    const auto ca = centre(a);
    auto cb = centre(b);
    double ab = 0.0, aa = 0.0;
    for (int i = 0; i < 12; ++i) {
      ab += ca[i] * cb[i];
      aa += ca[i] * ca[i];
    }
    for (int i = 0; i < 12; ++i) cb[i] -= ab / aa * ca[i];
    std::vector<std::vector<double>> rows;
    for (int i = 0; i < 12; ++i) {
      std::vector<double> r(4);
      for (int d = 0; d < 4; ++d) r[d] = 2.0 + ca[i] * u[d] + cb[i] * v[d];
      rows.push_back(r);
    }
    const auto proj = project_top2(rows);
    double var_a = 0.0, var_b = 0.0;
    for (int i = 0; i < 12; ++i) {
      // The largest loading of axis 0 is u's second entry (0.8 > 0), so the sign follows a.
      CHECK(proj.coords[i][0] == doctest::Approx(ca[i]).epsilon(1e-8));
      CHECK(proj.coords[i][1] == doctest::Approx(cb[i]).epsilon(1e-8));
      var_a += ca[i] * ca[i];
      var_b += cb[i] * cb[i];
    }
    CHECK(proj.variance[0] == doctest::Approx(var_a / 11));
    CHECK(proj.variance[1] == doctest::Approx(var_b / 11));
    CHECK(project_top2({{1.0, 2.0}}).coords[0] == std::array<double, 2>{0.0, 0.0});
  }

  TEST_CASE("experiment A: perturbed-trace hyperplanes reproduce the perturbed logits") {
    Fixture f;
    auto net = f.net.cast<double>();
    Tensor<double> x(f.x.shape());
    for (std::size_t e = 0; e < x.size(); ++e) x[e] = f.x[e];
    AdversarialConfig cfg;
    cfg.steps = 40;
    const auto a = run_experiment_a(net, x, predict(net, x), cfg);
    REQUIRE(a.attack.success);
    CHECK(a.comparison.rows.size() == 10);
    CHECK(a.comparison.max_fresh_error() <= 1e-9);
    CHECK(a.comparison.argmax_fresh() == a.comparison.argmax_forward());
    CHECK(static_cast<long>(a.comparison.argmax_forward()) == a.attack.achieved);
  }
}
