// Acceptance runner: checks every acceptance criterion and prints one PASS/FAIL line each.
// Exit status is 0 only when every selected criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <iterator>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "abm/adjoint.hpp"
#include "abm/adversarial.hpp"
#include "abm/backmap.hpp"
#include "abm/cli.hpp"
#include "abm/dataset.hpp"
#include "abm/render.hpp"
#include "abm/trainer.hpp"
#include "abm/verify.hpp"
#include "oracles.hpp"
#include "random_nets.hpp"
#include "render_goldens.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace abm;

namespace {

// Pinned tolerances and budgets.
constexpr std::size_t kLinearizationNets = 1000;
constexpr double kLinearizationTol = 1e-9;
constexpr double kLinearizationSeconds = 60.0;

constexpr std::size_t kVerifyInputs = 100;
constexpr double kVerifyThreshold = 1e-2;
constexpr double kVerifyFloor = 0.9999;
constexpr double kVerifySeconds = 600.0;

constexpr double kLatticeTol32 = 1e-4;
constexpr double kLatticeTol64 = 1e-10;
constexpr double kLatticeSeconds = 300.0;

constexpr double kDenseOracleTol = 1e-12;
constexpr std::size_t kDenseOracleMaxParams = 500;

constexpr double kHyperplaneTol = 1e-2;
constexpr std::size_t kAttackImages = 50;

constexpr double kLedgerSeconds = 1.0;
constexpr double kChanceAccuracy = 0.10;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Settings {
  fs::path work;
  fs::path data;
  std::size_t train_epochs = 20;
  std::size_t train_subset = 5000;
};

class Stopwatch {
 public:
  [[nodiscard]] double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fixed(double v, int digits = 1) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

std::string sci(double v) {
  std::ostringstream s;
  s << std::scientific << std::setprecision(2) << v;
  return s.str();
}

template <typename T>
Tensor<T> normal_input(const Shape& shape, Rng& rng) {
  return test::random_tensor<T>(shape, rng);
}

// Nodes whose outputs feed an activation, plus the classifier output.
template <typename T>
std::vector<int> preactivation_nodes(const Network<T>& net) {
  std::vector<int> nodes;
  for (const auto& layer : net.layers()) {
    if (layer.kind() == LayerKind::activation && layer.input != kInputNode) nodes.push_back(layer.input);
  }
  nodes.push_back(net.logits_node());
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
  return nodes;
}

// 1. Frozen-trace jvp reproduces every forward pre-activation.
Outcome exact_linearization(const Settings&) {
  Stopwatch clock;
  Rng rng(1);
  std::size_t units = 0, bad = 0;
  double worst = 0.0;
  for (std::size_t n = 0; n < kLinearizationNets; ++n) {
    const auto net = test::random_network<double>(rng, ActivationKind::relu);
    const auto x = normal_input<double>(net.input_shape(), rng);
    const auto tr = trace(net, x);
    const auto live = forward(net, x);
    for (int node : preactivation_nodes(net)) {
      const auto frozen = jvp(tr, net, x, node);
      const auto err = relative_errors(frozen, live.outputs[static_cast<std::size_t>(node)]);
      for (double e : err.data()) {
        ++units;
        if (!(std::abs(e) <= kLinearizationTol)) ++bad;
        worst = std::max(worst, std::abs(e));
      }
    }
  }
  const double t = clock.seconds();
  return {bad == 0 && t < kLinearizationSeconds,
          std::to_string(kLinearizationNets) + " nets, " + std::to_string(units) + " units, " + std::to_string(bad) +
              " above " + sci(kLinearizationTol) + ", max " + sci(worst) + ", " + fixed(t, 2) + " s"};
}

// 2. Layer-wise verification on random-weight VGG7 and Fixup-ResNet20.
Outcome protocol_verification(const Settings&) {
  Stopwatch clock;
  bool pass = true;
  std::string detail;
  for (Architecture arch : {Architecture::vgg7, Architecture::fixup_resnet20}) {
    const auto net = build<float>(arch, 0, WeightInit::he_normal);
    Rng rng(2);
    std::vector<Tensor<float>> inputs;
    for (std::size_t n = 0; n < kVerifyInputs; ++n) inputs.push_back(normal_input<float>(net.input_shape(), rng));
    const auto report = verify_layers(net, inputs);
    double lowest = 1.0;
    std::string lowest_layer;
    for (const auto& layer : report.layers) {
      const double f = layer.fraction_below(kVerifyThreshold);
      if (f < lowest || lowest_layer.empty()) {
        lowest = f;
        lowest_layer = layer.layer;
      }
    }
    pass = pass && report.passes(kVerifyFloor);
    detail += std::string(to_string(arch)) + " lowest " + lowest_layer + " " + fixed(100.0 * lowest, 4) + "%; ";
  }
  const double t = clock.seconds();
  pass = pass && t < kVerifySeconds;
  return {pass, detail + std::to_string(kVerifyInputs) + " inputs each, floor " + fixed(100.0 * kVerifyFloor, 2) +
                    "%, " + fixed(t) + " s"};
}

template <typename T>
struct LatticeDeviation {
  double worst = 0.0;
  double scale = 0.0;
};

template <typename T>
Tensor<T> summed(const std::vector<Tensor<T>>& parts, const Shape& shape) {
  Tensor<T> s(shape);
  for (const auto& p : parts) s += p;
  return s;
}

// Checks the four lattice identities on one out-channel of one conv layer:
// sum over s of rm4 against rm3 for three in-channels, sum over j of rm4 against rm2
// for three offsets, and rm1 against the sums of every rm2 and every rm3.
template <typename T>
LatticeDeviation<T> lattice_deviation(const Network<T>& net, int layer, Rng& rng) {
  const auto tr = trace(net, normal_input<T>(net.input_shape(), rng));
  const auto& kernel = std::get<Conv<T>>(net.layer(net.conv_node(static_cast<std::size_t>(layer))).op).kernel;
  const auto out = net.shape_of(net.conv_node(static_cast<std::size_t>(layer)));
  const long S = static_cast<long>(out[0] * out[1]), J = static_cast<long>(kernel.dim(2));
  const long i = static_cast<long>(kernel.dim(3)) / 2;
  const Shape shape = net.input_shape();
  LatticeDeviation<T> d;
  auto note = [&](const Tensor<T>& sum, const Tensor<T>& want) {
    d.worst = std::max(d.worst, test::max_abs_diff(sum, want));
    d.scale = std::max(d.scale, test::max_abs_value(want));
  };

  for (long j : {0L, J / 2, J - 1}) {
    std::vector<Tensor<T>> parts;
    for (long s = 0; s < S; ++s) parts.push_back(rm4(net, tr, layer, j, i, s).values);
    note(summed(parts, shape), rm3(net, tr, layer, j, i).values);
  }
  for (long s : {0L, S / 2, S - 1}) {
    std::vector<Tensor<T>> parts;
    for (long j = 0; j < J; ++j) parts.push_back(rm4(net, tr, layer, j, i, s).values);
    note(summed(parts, shape), rm2(net, tr, layer, i, s).values);
  }
  std::vector<Tensor<T>> rm2_parts, rm3_parts;
  for (long s = 0; s < S; ++s) rm2_parts.push_back(rm2(net, tr, layer, i, s).values);
  for (long j = 0; j < J; ++j) rm3_parts.push_back(rm3(net, tr, layer, j, i).values);
  const auto r1 = rm1(net, tr, layer, i).values;
  note(summed(rm2_parts, shape), r1);
  note(summed(rm3_parts, shape), r1);
  return d;
}

// 3. Decomposition lattice on one deep conv layer of each architecture.
Outcome decomposition_lattice(const Settings&) {
  Stopwatch clock;
  Rng rng(3);
  bool pass = true;
  std::string detail;
  const std::pair<Architecture, int> layers[] = {{Architecture::vgg7, 5}, {Architecture::fixup_resnet20, 13}};
  for (const auto& [arch, layer] : layers) {
    const auto d32 = lattice_deviation(build<float>(arch, 0), layer, rng);
    const auto d64 = lattice_deviation(build<double>(arch, 0), layer, rng);
    pass = pass && d32.worst <= kLatticeTol32 && d64.worst <= kLatticeTol64;
    detail += std::string(to_string(arch)) + " Conv" + std::to_string(layer) + " binary32 " + sci(d32.worst) +
              " (values up to " + sci(d32.scale) + "), binary64 " + sci(d64.worst) + "; ";
  }
  const double t = clock.seconds();
  pass = pass && t < kLatticeSeconds;
  return {pass, detail + fixed(t) + " s"};
}

Tensor<double> column_of(const Tensor<double>& J, std::size_t p, const Shape& shape) {
  Tensor<double> c(shape);
  for (std::size_t u = 0; u < c.size(); ++u) c[u] = J[u * J.dim(1) + p];
  return c;
}

// Oracle surface for one index, from Jacobians assembled column by column out of jvp.
struct DenseOracle {
  const Network<double>& net;
  const ActivationTrace<double>& tr;
  std::map<int, Tensor<double>> jacobians;

  const Tensor<double>& jacobian(int node) {
    auto it = jacobians.find(node);
    if (it == jacobians.end()) it = jacobians.emplace(node, test::jacobian_by_columns(tr, net, node)).first;
    return it->second;
  }

  Tensor<double> surface(Mode mode, const SurfaceIndex& idx) {
    const Shape& in_shape = net.input_shape();
    if (mode == Mode::rm0) {
      const int node = net.logits_node();
      Tensor<double> cot(net.shape_of(node));
      cot[static_cast<std::size_t>(idx.k)] = 1.0;
      return test::transpose_apply(jacobian(node), cot, in_shape);
    }
    const int node = net.conv_node(static_cast<std::size_t>(idx.layer));
    const Shape out = net.shape_of(node);
    const std::size_t positions = out[0] * out[1], cout = out[2];
    if (mode == Mode::rm1 || mode == Mode::rm2) {
      Tensor<double> cot(out);
      for (std::size_t s = 0; s < positions; ++s) {
        if (mode == Mode::rm1 || static_cast<long>(s) == idx.s) cot[s * cout + static_cast<std::size_t>(idx.i)] = 1.0;
      }
      return test::transpose_apply(jacobian(node), cot, in_shape);
    }
    const int input = net.layer(node).input;
    const auto& conv = std::get<Conv<double>>(net.layer(node).op);
    const auto& J = jacobian(input);
    Tensor<double> h(in_shape);
    for (std::size_t p = 0; p < h.size(); ++p) {
      const auto partial = test::partial_conv(column_of(J, p, net.shape_of(input)), conv.kernel, conv.stride,
                                              static_cast<std::size_t>(idx.j), static_cast<std::size_t>(idx.i));
      for (std::size_t s = 0; s < positions; ++s) {
        if (mode == Mode::rm3 || static_cast<long>(s) == idx.s) h[p] += partial[s * cout + static_cast<std::size_t>(idx.i)];
      }
    }
    return h;
  }
};

// 4. Every surface of a tiny network equals the transpose of its dense Jacobian applied to the cotangent.
Outcome dense_oracle(const Settings&) {
  const auto net = build_tiny<double>({8, 8, 1}, 10, 4);
  Rng rng(4);
  const auto tr = trace(net, normal_input<double>(net.input_shape(), rng));
  DenseOracle oracle{net, tr, {}};
  std::size_t surfaces = 0;
  double worst = 0.0;
  std::vector<std::pair<Mode, int>> requests = {{Mode::rm0, -1}};
  for (int layer = 1; layer < static_cast<int>(net.conv_count()); ++layer) {
    for (Mode mode : {Mode::rm1, Mode::rm2, Mode::rm3, Mode::rm4}) requests.emplace_back(mode, layer);
  }
  for (const auto& [mode, layer] : requests) {
    ReconstructionRequest req;
    req.mode = mode;
    req.layer = layer;
    batch_reconstruct<double>(net, tr, req, [&](std::size_t, const Hypersurface<double>& h) {
      worst = std::max(worst, test::max_abs_diff(h.values, oracle.surface(mode, h.index)));
      ++surfaces;
      return true;
    });
  }
  const std::size_t params = net.parameter_count();
  return {worst <= kDenseOracleTol && params <= kDenseOracleMaxParams,
          std::to_string(surfaces) + " surfaces over RM0-RM4, " + std::to_string(params) + " parameters, max deviation " +
              sci(worst)};
}

template <typename T>
std::vector<Hypersurface<T>> surface_sample(const Network<T>& net, const ActivationTrace<T>& tr) {
  std::vector<Hypersurface<T>> out;
  for (long k = 0; k < static_cast<long>(net.classes()); ++k) out.push_back(rm0(net, tr, k));
  for (int layer = 1; layer < static_cast<int>(net.conv_count()); ++layer) {
    const Shape& grid = net.shape_of(net.conv_node(static_cast<std::size_t>(layer)));
    const long s = static_cast<long>(grid[0] * grid[1]) / 2;
    out.push_back(rm1(net, tr, layer, 0));
    out.push_back(rm2(net, tr, layer, 0, s));
    out.push_back(rm3(net, tr, layer, 0, 0));
    out.push_back(rm4(net, tr, layer, 0, 0, s));
  }
  return out;
}

template <typename T>
bool k_invariant(const Network<T>& net, Rng& rng, double& worst_ratio, std::size_t& compared) {
  const auto x = normal_input<T>(net.input_shape(), rng);
  const auto base = trace(net, x, {0.125});
  const auto base_surfaces = surface_sample(net, base);
  bool ok = true;
  for (double k : {1.0, 3.0}) {
    const auto tr = trace(net, x, {k});
    ok = ok && tr.gates == base.gates;
    const auto surfaces = surface_sample(net, tr);
    for (std::size_t n = 0; n < surfaces.size(); ++n) {
      const double scale = test::max_abs_value(base_surfaces[n].values);
      const double diff = test::max_abs_diff(surfaces[n].values, base_surfaces[n].values);
      const double limit = std::numeric_limits<T>::epsilon() * scale;
      ok = ok && diff <= limit;
      worst_ratio = std::max(worst_ratio, scale > 0 ? diff / scale : diff);
      ++compared;
    }
  }
  return ok;
}

// 5. Gates and surfaces do not depend on the evaluation-point scale k.
Outcome k_invariance(const Settings&) {
  Rng rng(5);
  double worst = 0.0;
  std::size_t compared = 0;
  bool ok = k_invariant(build<float>(Architecture::vgg7, 5), rng, worst, compared);
  ok = k_invariant(build<float>(Architecture::fixup_resnet20, 5), rng, worst, compared) && ok;
  ok = k_invariant(build_tiny<double>({8, 8, 3}, 10, 5), rng, worst, compared) && ok;
  return {ok, "k in {1/8, 1, 3}: gates identical, " + std::to_string(compared) +
                  " surfaces compared, max relative change " + sci(worst)};
}

struct TrainedModel {
  bool ready = false;
  std::string error;
  Network<float> net;
  DatasetConfig data_config;
  CifarSplits data;
  double best_val_acc = 0.0;
  std::size_t best_epoch = 0;
  double seconds = 0.0;
};

TrainedModel& trained_vgg7(const Settings& settings) {
  static TrainedModel model;
  static bool attempted = false;
  if (attempted) return model;
  attempted = true;
  try {
    Stopwatch clock;
    fs::path dir = settings.data;
    if (dir.empty()) {
      dir = settings.work / "synthetic_cifar";
      if (!fs::exists(dir / "test_batch.bin")) write_synthetic_cifar(dir, 2024, 1500, 1000);
    }
    model.data_config.data_dir = dir;
    model.data_config.val_count = 1000;
    model.data_config.train_limit = settings.train_subset;
    model.data_config.seed = 9;
    model.data = load_cifar10(model.data_config);
    TrainConfig config;
    config.epochs = settings.train_epochs;
    config.seed = 9;
    config.log_csv = settings.work / "vgg7_train_log.csv";
    fs::create_directories(settings.work);
    auto result = train(build_vgg7<float>(9), model.data, model.data_config, config);
    model.net = std::move(result.best);
    model.best_val_acc = result.best_val_acc;
    model.best_epoch = result.best_epoch;
    model.seconds = clock.seconds();
    model.ready = true;
  } catch (const std::exception& e) {
    model.error = e.what();
  }
  return model;
}

// 6. On the trained VGG7, the fresh hyperplanes of successful untargeted perturbations reproduce the logits.
Outcome experiment_a(const Settings& settings) {
  auto& model = trained_vgg7(settings);
  if (!model.ready) return {false, "training failed: " + model.error};
  AdversarialConfig config;
  std::size_t attacked = 0, flipped = 0, consistent = 0, stale_agree = 0;
  double worst = 0.0;
  for (std::size_t n = 0; n < model.data.test.size() && attacked < kAttackImages; ++n) {
    const auto x = normalize_image<float>(model.data.test.unit_image(n), model.data_config);
    const std::size_t label = model.data.test.labels[n];
    if (predict(model.net, x) != label) continue;
    ++attacked;
    const auto result = run_experiment_a(model.net, x, label, config);
    if (!result.attack.success) continue;
    ++flipped;
    const auto& c = result.comparison;
    worst = std::max(worst, c.max_fresh_error());
    if (c.max_fresh_error() <= kHyperplaneTol && c.argmax_fresh() == c.argmax_forward()) ++consistent;
    if (c.argmax_stale() == c.argmax_forward()) ++stale_agree;
  }
  return {flipped > 0 && consistent == flipped,
          std::to_string(flipped) + "/" + std::to_string(attacked) + " correctly classified test images flipped (eps " +
              fixed(config.epsilon, 2) + ", " + std::to_string(config.steps) + " steps); M2 within " +
              sci(kHyperplaneTol) + " of M1 with matching argmax on " + std::to_string(consistent) + "/" +
              std::to_string(flipped) + ", max error " + sci(worst) + "; stale argmax matches on " +
              std::to_string(stale_agree) + "/" + std::to_string(flipped)};
}

std::vector<std::vector<std::size_t>> ledger_extents(const std::vector<LedgerRow>& rows, Mode mode) {
  std::vector<std::vector<std::size_t>> out;
  for (const auto& r : rows) {
    if (r.mode == mode) out.push_back(r.applicable ? r.extents : std::vector<std::size_t>{});
  }
  return out;
}

// 7. Surface counts and shapes for every layer and mode of both architectures.
Outcome shape_ledger_check(const Settings&) {
  Stopwatch clock;
  using V = std::vector<std::vector<std::size_t>>;
  bool ok = true;

  const auto vgg = build_vgg7<float>(0);
  const auto vrows = shape_ledger(vgg);
  ok = ok && ledger_extents(vrows, Mode::rm4) ==
                 V{{}, {32, 32, 32, 32}, {16, 16, 32, 64}, {16, 16, 64, 64}, {8, 8, 64, 96}, {8, 8, 96, 96}, {}};
  ok = ok && ledger_extents(vrows, Mode::rm3) == V{{}, {32, 32}, {32, 64}, {64, 64}, {64, 96}, {96, 96}, {}};
  ok = ok && ledger_extents(vrows, Mode::rm2) ==
                 V{{}, {32, 32, 32}, {16, 16, 64}, {16, 16, 64}, {8, 8, 96}, {8, 8, 96}, {}};
  ok = ok && ledger_extents(vrows, Mode::rm1) == V{{}, {32}, {64}, {64}, {96}, {96}, {}};
  ok = ok && ledger_extents(vrows, Mode::rm0) == V{{}, {}, {}, {}, {}, {}, {10}};
  ok = ok && index_space(vgg, Mode::rm4, 1).size() == 1024u * 32u * 32u;

  const auto fixup = build_fixup_resnet20<float>(0);
  const auto frows = shape_ledger(fixup);
  V rm4_want{{}}, rm3_want{{}}, rm2_want{{}}, rm1_want{{}};
  for (int c = 1; c <= 18; ++c) {
    const std::size_t side = c <= 6 ? 32 : c <= 12 ? 16 : 8;
    const std::size_t out = c <= 6 ? 32 : c <= 12 ? 64 : 96;
    const std::size_t in = c == 7 ? 32 : c == 13 ? 64 : out;
    rm4_want.push_back({side, side, in, out});
    rm3_want.push_back({in, out});
    rm2_want.push_back({side, side, out});
    rm1_want.push_back({out});
  }
  for (auto* v : {&rm4_want, &rm3_want, &rm2_want, &rm1_want}) v->push_back({});
  V rm0_want(19);
  rm0_want.push_back({10});
  ok = ok && ledger_extents(frows, Mode::rm4) == rm4_want && ledger_extents(frows, Mode::rm3) == rm3_want &&
       ledger_extents(frows, Mode::rm2) == rm2_want && ledger_extents(frows, Mode::rm1) == rm1_want &&
       ledger_extents(frows, Mode::rm0) == rm0_want;

  std::size_t rows = 0;
  for (const auto* table : {&vrows, &frows}) {
    for (const auto& r : *table) {
      ++rows;
      if (r.applicable) ok = ok && r.surface_shape == Shape{32, 32, 3};
    }
  }
  const double t = clock.seconds();
  return {ok && t < kLedgerSeconds, std::to_string(rows) + " (layer, mode) rows, " + fixed(1000.0 * t, 1) + " ms"};
}

std::vector<std::uint8_t> file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// 8. Rendered sheets are byte-identical to the committed golden PNGs.
Outcome render_goldens(const Settings&) {
  std::size_t matched = 0, total = 0;
  std::string mismatches;
  for (const auto& g : test::golden_renders()) {
    ++total;
    const fs::path path = fs::path(ABM_GOLDEN_DIR) / g.file;
    if (fs::exists(path) && encode_png(g.image) == file_bytes(path)) {
      ++matched;
    } else {
      mismatches += " " + g.file;
    }
  }
  return {matched == total, std::to_string(matched) + "/" + std::to_string(total) + " golden images byte-identical" +
                                (mismatches.empty() ? "" : "; differ:" + mismatches)};
}

// 9. Desk-scale VGG7 training beats chance on the validation split.
Outcome trainer_smoke(const Settings& settings) {
  auto& model = trained_vgg7(settings);
  if (!model.ready) return {false, "training failed: " + model.error};
  return {model.best_val_acc > kChanceAccuracy,
          "best validation accuracy " + fixed(100.0 * model.best_val_acc, 1) + "% at epoch " +
              std::to_string(model.best_epoch) + " of " + std::to_string(settings.train_epochs) + " on " +
              std::to_string(model.data.train.size()) + " training images, " + fixed(model.seconds) + " s"};
}

using Snapshot = std::map<std::string, std::vector<std::uint8_t>>;

Snapshot snapshot(const fs::path& root) {
  Snapshot files;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (entry.is_regular_file()) files[fs::relative(entry.path(), root).string()] = file_bytes(entry.path());
  }
  return files;
}

// 10. Every subcommand rerun with the same seed and inputs writes byte-identical files.
Outcome cli_determinism(const Settings& settings) {
  const fs::path root = settings.work / "cli";
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string data = (root / "data").string(), model = (root / "train" / "model.abm").string();
  auto out = [&](const std::string& name) { return (root / name).string(); };
  const std::vector<std::vector<std::string>> commands = {
      {"synth", "--output", data, "--seed", "5", "--per-file", "60", "--test-count", "20"},
      {"train", "--arch", "tiny", "--data", data, "--output", out("train"), "--epochs", "2", "--batch", "20",
       "--val-count", "20", "--subset", "100", "--seed", "3"},
      {"verify", "--model", model, "--data", data, "--inputs", "3", "--output", out("verify")},
      {"backmap", "--model", model, "--data", data, "--image", "1", "--rm", "3", "--layer", "1", "--render",
       "--csv", "--output", out("backmap_rm3")},
      {"backmap", "--model", model, "--rm", "0", "--seed", "4", "--render", "--output", out("backmap_rm0")},
      {"adversarial", "--model", model, "--data", data, "--image", "2", "--experiment", "a", "--output",
       out("adversarial_a")},
      {"adversarial", "--model", model, "--data", data, "--image", "2", "--experiment", "b1", "--output",
       out("adversarial_b1")},
      {"adversarial", "--model", model, "--data", data, "--image", "2", "--experiment", "b2", "--output",
       out("adversarial_b2")},
  };
  auto run_all = [&](std::vector<int>& codes, std::string& failure) {
    for (const auto& args : commands) {
      std::ostringstream o, e;
      const int code = run_cli(args, o, e);
      codes.push_back(code);
      if (code == kExitUsage) failure += " " + args[0] + ": " + e.str();
    }
  };
  std::vector<int> first_codes, second_codes;
  std::string failure;
  run_all(first_codes, failure);
  const auto first = snapshot(root);
  run_all(second_codes, failure);
  const auto second = snapshot(root);
  if (!failure.empty()) return {false, "command failed:" + failure};

  std::size_t differing = 0;
  std::string names;
  for (const auto& [name, bytes] : first) {
    const auto it = second.find(name);
    if (it == second.end() || it->second != bytes) {
      ++differing;
      names += " " + name;
    }
  }
  const bool same_set = first.size() == second.size();
  return {differing == 0 && same_set && first_codes == second_codes,
          std::to_string(commands.size()) + " commands (synth, train, verify, backmap, adversarial a/b1/b2), " +
              std::to_string(first.size()) + " artifacts, " + std::to_string(differing) + " differ" + names};
}

struct Criterion {
  int number;
  const char* name;
  std::function<Outcome(const Settings&)> check;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks; prints one PASS/FAIL line per criterion"};
  std::vector<int> only;
  Settings settings;
  std::string work = (fs::temp_directory_path() / "abm_acceptance").string();
  std::string data;
  app.add_option("--only", only, "Criterion numbers to run (default: all)")->check(CLI::Range(1, 10));
  app.add_option("--work", work, "Scratch directory")->capture_default_str();
  app.add_option("--data", data, "CIFAR-10 binary directory; a synthetic set is written when absent");
  app.add_option("--train-epochs", settings.train_epochs, "Epochs of the shared VGG7 training run")
      ->capture_default_str();
  app.add_option("--train-subset", settings.train_subset, "Training images of the shared VGG7 run")
      ->capture_default_str();
  CLI11_PARSE(app, argc, argv);
  if (data.empty()) {
    if (const char* env = std::getenv(kDataDirEnv)) data = env;
  }
  settings.work = work;
  settings.data = data;

  const std::vector<Criterion> criteria = {
      {1, "exact linearization", exact_linearization},
      {2, "layer-wise verification", protocol_verification},
      {3, "decomposition lattice", decomposition_lattice},
      {4, "dense Jacobian oracle", dense_oracle},
      {5, "k-invariance", k_invariance},
      {6, "experiment A hyperplanes", experiment_a},
      {7, "shape ledger", shape_ledger_check},
      {8, "render goldens", render_goldens},
      {9, "trainer smoke", trainer_smoke},
      {10, "CLI determinism", cli_determinism},
  };
  bool all = true;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.number) == only.end()) continue;
    Outcome outcome;
    try {
      outcome = c.check(settings);
    } catch (const std::exception& e) {
      outcome = {false, std::string("error: ") + e.what()};
    }
    all = all && outcome.pass;
    std::cout << (outcome.pass ? "PASS" : "FAIL") << "  " << c.number << ". " << c.name << ": " << outcome.detail
              << std::endl;
  }
  return all ? 0 : 1;
}
