#pragma once

#include <array>
#include <string>
#include <vector>

#include "abm/backmap.hpp"

namespace abm {

/// Denominator used wherever an actual value is exactly zero: the smallest
/// positive normal binary32 number.
inline constexpr double kZeroSubstitute = 1.17549435082228750797e-38;

/// (predicted - actual) / actual', where actual' replaces exact zeros with
/// kZeroSubstitute. Computed in binary64, elementwise.
template <typename T>
Tensor<double> relative_errors(const Tensor<T>& predicted, const Tensor<T>& actual);

/// Decade histogram of |relative error|. Bin 0 holds [0, 1e-12]; bin d for
/// d = 1..12 holds (1e-(13-d), 1e-(12-d)]; the last bin holds everything
/// above 1, including non-finite values.
inline constexpr std::size_t kErrorBins = 14;
inline constexpr std::array<double, kErrorBins - 1> kBinEdges = {1e-12, 1e-11, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6,
                                                                 1e-5,  1e-4,  1e-3,  1e-2, 1e-1, 1e0};
std::size_t error_bin(double abs_error);

struct LayerErrors {
  std::string layer;  // "Conv1", ..., "FC"
  int node = -1;
  Mode mode = Mode::rm2;
  std::size_t units_per_input = 0;
  std::size_t count = 0;
  std::array<std::size_t, kErrorBins> bins{};
  double max_error = 0.0;

  void add(double abs_error);
  /// Fraction of errors <= threshold; the threshold must be one of kBinEdges.
  [[nodiscard]] double fraction_below(double threshold) const;
};

struct VerificationReport {
  std::size_t inputs = 0;
  std::vector<LayerErrors> layers;

  /// Adds another report over the same layers.
  void merge(const VerificationReport& other);
  /// True when every layer's fraction at <= 1e-2 reaches `floor`.
  [[nodiscard]] bool passes(double floor = 0.9999) const;
  /// One row per layer: layer, units, fraction <= 1e-2, <= 1e-4, <= 1e-9, max error.
  [[nodiscard]] std::string summary_csv() const;
  /// One row per (layer, bin): layer, lower edge, upper edge, count.
  [[nodiscard]] std::string histogram_csv() const;
};

enum class VerifyRoute {
  /// Every unit's hypersurface as a row of the Jacobian built by the input-basis sweep.
  jacobian_sweep,
  /// One rm2 / rm0 surface per unit through the adjoint; only practical for small nets.
  surface_per_unit,
};

struct VerifyOptions {
  EvaluationPoint z{};
  VerifyRoute route = VerifyRoute::jacobian_sweep;
  SweepOptions sweep{};
};

/// Compares <x | H> against the live forward pre-activation for every unit of
/// Conv1..ConvN (rm2) and of the logits (rm0), for every input.
template <typename T>
VerificationReport verify_layers(const Network<T>& net, const std::vector<Tensor<T>>& inputs,
                                 const VerifyOptions& options = {});

struct HyperplaneRow {
  double forward = 0.0;   // logit of the perturbed input
  double fresh = 0.0;     // <x' | H_k> with gates traced at the perturbed input
  double stale = 0.0;     // <x' | H_k> with gates traced at the clean input
};

struct HyperplaneComparison {
  std::vector<HyperplaneRow> rows;

  /// max over classes of |fresh - forward| / max(|forward|, kZeroSubstitute).
  [[nodiscard]] double max_fresh_error() const;
  [[nodiscard]] std::size_t argmax_forward() const;
  [[nodiscard]] std::size_t argmax_fresh() const;
  [[nodiscard]] std::size_t argmax_stale() const;
  /// One row per class: class, forward, fresh, stale.
  [[nodiscard]] std::string csv() const;
};

template <typename T>
HyperplaneComparison compare_hyperplanes(const Network<T>& net, const Tensor<T>& x, const Tensor<T>& x_perturbed,
                                         EvaluationPoint z = {});

}  // namespace abm
