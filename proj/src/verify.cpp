#include "abm/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace abm {

namespace {

std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

double relative_error(double predicted, double actual) {
  const double denom = actual == 0.0 ? kZeroSubstitute : actual;
  return (predicted - actual) / denom;
}

template <typename T>
std::vector<LayerErrors> empty_layers(const Network<T>& net) {
  std::vector<LayerErrors> layers;
  for (std::size_t c = 1; c < net.conv_count(); ++c) {
    LayerErrors e;
    e.layer = "Conv" + std::to_string(c);
    e.node = net.conv_node(c);
    e.mode = Mode::rm2;
    e.units_per_input = element_count(net.shape_of(e.node));
    layers.push_back(e);
  }
  LayerErrors fc;
  fc.layer = "FC";
  fc.node = net.logits_node();
  fc.mode = Mode::rm0;
  fc.units_per_input = net.classes();
  layers.push_back(fc);
  return layers;
}

template <typename T>
void record(LayerErrors& layer, const Tensor<T>& predicted, const Tensor<T>& actual) {
  require_same_shape(predicted.shape(), actual.shape(), "verification");
  for (std::size_t u = 0; u < actual.size(); ++u) {
    layer.add(std::abs(relative_error(static_cast<double>(predicted[u]), static_cast<double>(actual[u]))));
  }
}

// Predicted values of every unit of `layers` for one input, one surface at a time.
template <typename T>
std::vector<Tensor<T>> predict_by_surfaces(const Network<T>& net, const ActivationTrace<T>& tr, const Tensor<T>& x,
                                           const std::vector<LayerErrors>& layers, std::size_t workers) {
  std::vector<Tensor<T>> out;
  for (const auto& l : layers) {
    ReconstructionRequest req;
    req.mode = l.mode;
    req.layer = l.mode == Mode::rm0 ? -1 : net.conv_index_of(l.node);
    req.workers = workers;
    const Shape shape = net.shape_of(l.node);
    Tensor<T> predicted(shape);
    const std::size_t channels = shape.back();
    batch_reconstruct<T>(net, tr, req, [&](std::size_t, const Hypersurface<T>& h) {
      const std::size_t unit = l.mode == Mode::rm0 ? static_cast<std::size_t>(h.index.k)
                                                   : static_cast<std::size_t>(h.index.s) * channels +
                                                         static_cast<std::size_t>(h.index.i);
      predicted[unit] = static_cast<T>(inner_product(x, h.values));
      return true;
    });
    out.push_back(std::move(predicted));
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<double> relative_errors(const Tensor<T>& predicted, const Tensor<T>& actual) {
  require_same_shape(predicted.shape(), actual.shape(), "relative_errors");
  Tensor<double> e(actual.shape());
  for (std::size_t u = 0; u < e.size(); ++u) {
    e[u] = relative_error(static_cast<double>(predicted[u]), static_cast<double>(actual[u]));
  }
  return e;
}

std::size_t error_bin(double abs_error) {
  if (!(abs_error <= kBinEdges.back())) return kErrorBins - 1;
  return static_cast<std::size_t>(std::lower_bound(kBinEdges.begin(), kBinEdges.end(), abs_error) - kBinEdges.begin());
}

void LayerErrors::add(double abs_error) {
  ++bins[error_bin(abs_error)];
  ++count;
  if (std::isnan(abs_error) || abs_error > max_error) max_error = abs_error;
}

double LayerErrors::fraction_below(double threshold) const {
  const auto it = std::find(kBinEdges.begin(), kBinEdges.end(), threshold);
  if (it == kBinEdges.end()) throw Error("fraction_below needs a decade threshold between 1e-12 and 1");
  if (count == 0) return 0.0;
  std::size_t n = 0;
  for (std::size_t b = 0; b <= static_cast<std::size_t>(it - kBinEdges.begin()); ++b) n += bins[b];
  return static_cast<double>(n) / static_cast<double>(count);
}

void VerificationReport::merge(const VerificationReport& other) {
  if (layers.empty()) {
    *this = other;
    return;
  }
  if (other.layers.size() != layers.size()) throw Error("cannot merge reports over different layers");
  inputs += other.inputs;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& a = layers[l];
    const auto& b = other.layers[l];
    if (a.layer != b.layer) throw Error("cannot merge reports over different layers");
    a.count += b.count;
    for (std::size_t k = 0; k < kErrorBins; ++k) a.bins[k] += b.bins[k];
    if (std::isnan(b.max_error) || b.max_error > a.max_error) a.max_error = b.max_error;
  }
}

bool VerificationReport::passes(double floor) const {
  return std::all_of(layers.begin(), layers.end(), [&](const LayerErrors& l) { return l.fraction_below(1e-2) >= floor; });
}

std::string VerificationReport::summary_csv() const {
  std::string out = "layer,units,fraction_le_1e-2,fraction_le_1e-4,fraction_le_1e-9,max_error\n";
  for (const auto& l : layers) {
    out += l.layer + "," + std::to_string(l.count) + "," + format_number(l.fraction_below(1e-2)) + "," +
           format_number(l.fraction_below(1e-4)) + "," + format_number(l.fraction_below(1e-9)) + "," +
           format_number(l.max_error) + "\n";
  }
  return out;
}

std::string VerificationReport::histogram_csv() const {
  std::string out = "layer,lower,upper,count\n";
  for (const auto& l : layers) {
    for (std::size_t b = 0; b < kErrorBins; ++b) {
      const std::string lower = b == 0 ? "0" : format_number(kBinEdges[b - 1]);
      const std::string upper = b + 1 == kErrorBins ? "inf" : format_number(kBinEdges[b]);
      out += l.layer + "," + lower + "," + upper + "," + std::to_string(l.bins[b]) + "\n";
    }
  }
  return out;
}

template <typename T>
VerificationReport verify_layers(const Network<T>& net, const std::vector<Tensor<T>>& inputs,
                                 const VerifyOptions& options) {
  VerificationReport report;
  report.layers = empty_layers(net);
  std::vector<int> nodes;
  for (const auto& l : report.layers) nodes.push_back(l.node);
  for (const auto& x : inputs) {
    const auto live = forward(net, x);
    const auto tr = trace(net, x, options.z);
    const auto predicted = options.route == VerifyRoute::jacobian_sweep
                               ? contract_jacobian(tr, net, nodes, x, options.sweep)
                               : predict_by_surfaces(net, tr, x, report.layers, options.sweep.workers);
    for (std::size_t l = 0; l < nodes.size(); ++l) {
      record(report.layers[l], predicted[l], live.outputs[static_cast<std::size_t>(nodes[l])]);
    }
    ++report.inputs;
  }
  return report;
}

double HyperplaneComparison::max_fresh_error() const {
  double m = 0.0;
  for (const auto& r : rows) {
    const double e = std::abs(r.fresh - r.forward) / std::max(std::abs(r.forward), kZeroSubstitute);
    if (!(e <= m)) m = e;
  }
  return m;
}

namespace {
template <typename F>
std::size_t argmax_of(const std::vector<HyperplaneRow>& rows, F value) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < rows.size(); ++k) {
    if (value(rows[k]) > value(rows[best])) best = k;
  }
  return best;
}
}  // namespace

std::size_t HyperplaneComparison::argmax_forward() const {
  return argmax_of(rows, [](const HyperplaneRow& r) { return r.forward; });
}
std::size_t HyperplaneComparison::argmax_fresh() const {
  return argmax_of(rows, [](const HyperplaneRow& r) { return r.fresh; });
}
std::size_t HyperplaneComparison::argmax_stale() const {
  return argmax_of(rows, [](const HyperplaneRow& r) { return r.stale; });
}

std::string HyperplaneComparison::csv() const {
  std::string out = "class,forward,fresh,stale\n";
  for (std::size_t k = 0; k < rows.size(); ++k) {
    out += std::to_string(k) + "," + format_number(rows[k].forward) + "," + format_number(rows[k].fresh) + "," +
           format_number(rows[k].stale) + "\n";
  }
  return out;
}

template <typename T>
HyperplaneComparison compare_hyperplanes(const Network<T>& net, const Tensor<T>& x, const Tensor<T>& x_perturbed,
                                         EvaluationPoint z) {
  require_same_shape(x.shape(), x_perturbed.shape(), "compare_hyperplanes");
  const auto y = logits(net, x_perturbed);
  const auto fresh = trace(net, x_perturbed, z);
  const auto stale = trace(net, x, z);
  HyperplaneComparison c;
  for (std::size_t k = 0; k < net.classes(); ++k) {
    HyperplaneRow r;
    r.forward = static_cast<double>(y[k]);
    r.fresh = inner_product(x_perturbed, rm0(net, fresh, static_cast<long>(k)).values);
    r.stale = inner_product(x_perturbed, rm0(net, stale, static_cast<long>(k)).values);
    c.rows.push_back(r);
  }
  return c;
}

#define ABM_INSTANTIATE_VERIFY(T)                                                                               \
  template Tensor<double> relative_errors(const Tensor<T>&, const Tensor<T>&);                                  \
  template VerificationReport verify_layers(const Network<T>&, const std::vector<Tensor<T>>&, const VerifyOptions&); \
  template HyperplaneComparison compare_hyperplanes(const Network<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                                    EvaluationPoint);

ABM_INSTANTIATE_VERIFY(float)
ABM_INSTANTIATE_VERIFY(double)

}  // namespace abm
