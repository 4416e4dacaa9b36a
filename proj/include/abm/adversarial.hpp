#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "abm/network.hpp"
#include "abm/verify.hpp"

namespace abm {

enum class AttackMode : std::uint8_t { untargeted_iterative, targeted_least_likely };

const char* to_string(AttackMode mode);
AttackMode parse_attack_mode(const std::string& name);

struct AdversarialConfig {
  AttackMode mode = AttackMode::untargeted_iterative;
  double epsilon = 0.04;  // per-step change of every input element
  std::size_t steps = 10;
  long target = -1;  // targeted mode only
  std::uint64_t seed = 0;
  double threshold = 0.5;  // logit margin required of a scaled perturbation
  double beta_step = 0.05;
  std::size_t scaled_count = 50;
  std::size_t gaussian_count = 50;
  std::size_t gaussian_retries = 100;
};

/// Throws Error for a negative or non-finite epsilon, a non-positive beta step
/// or a negative threshold.
void validate(const AdversarialConfig& config);

enum class Provenance : std::uint8_t { untargeted = 0, s_b1 = 1, scaled = 2, gaussian = 3 };

const char* to_string(Provenance p);

template <typename T>
struct Perturbation {
  Tensor<T> delta;
  Provenance provenance = Provenance::untargeted;
  long target = -1;     // class the attack aimed for (-1: away from the label)
  long achieved = -1;   // prediction on x + delta
  double l2 = 0.0;
  double beta = 1.0;    // scale applied to the source perturbation
  long source = -1;     // index of the source perturbation in its set
  std::size_t steps = 0;
  bool success = false;
  bool degenerate = false;  // nothing to do: input already misclassified or target already predicted
};

template <typename T>
struct PerturbationSet {
  Shape input_shape;
  std::vector<Perturbation<T>> items;
};

/// Basic iterative method: repeatedly adds epsilon * sign(d loss(label) / dx) until
/// the prediction leaves `label` or the steps run out. An input that is already
/// misclassified yields a zero, degenerate perturbation.
template <typename T>
Perturbation<T> untargeted_attack(const Network<T>& net, const Tensor<T>& x, std::size_t label,
                                  const AdversarialConfig& config);

/// Iterative least-likely method toward `target`: repeatedly subtracts
/// epsilon * sign(d loss(target) / dx) until the prediction becomes the target.
/// A target that is already predicted yields a zero, degenerate perturbation.
template <typename T>
Perturbation<T> targeted_least_likely(const Network<T>& net, const Tensor<T>& x, std::size_t target,
                                      const AdversarialConfig& config);

/// Class with the smallest logit.
template <typename T>
std::size_t least_likely_class(const Network<T>& net, const Tensor<T>& x);

/// One targeted perturbation per class; the entry for `label` is zero and degenerate.
template <typename T>
PerturbationSet<T> build_sb1(const Network<T>& net, const Tensor<T>& x, std::size_t label,
                             const AdversarialConfig& config);

template <typename T>
struct Sb2Result {
  PerturbationSet<T> set;  // scaled entries first, then Gaussian ones
  std::size_t qualified = 0;  // scaled candidates found before truncation
  double gaussian_mean = 0.0;
  double gaussian_variance = 0.0;
  std::size_t gaussian_rejections = 0;
  bool gaussian_exhausted = false;  // some Gaussian draw flipped the prediction on every retry
};

/// Scaled and Gaussian contrast set. Nonzero sb1 entries are visited in index
/// order; for each, beta runs from 1 down in steps of beta_step and every beta
/// whose scaled perturbation is misclassified with the predicted logit above
/// threshold + the label's logit is kept, stopping at the first beta that fails.
/// Candidates are shuffled with the seed and truncated to scaled_count. Gaussian
/// tensors use the pixel mean and variance of all sb1 entries and must leave
/// the prediction at `label`; each is redrawn up to gaussian_retries times.
template <typename T>
Sb2Result<T> build_sb2(const Network<T>& net, const Tensor<T>& x, std::size_t label, const PerturbationSet<T>& sb1,
                       const AdversarialConfig& config);

/// Archive layout (little-endian): "ABMA" | u16 version | u8 dtype | u32 H, W, C | u64 count
/// | per item: u8 provenance, i64 target, i64 achieved, f64 l2, f64 beta, i64 source,
///   u64 steps, u8 flags (bit 0 success, bit 1 degenerate), values | u32 CRC32.
template <typename T>
void write_perturbation_set(const PerturbationSet<T>& set, const std::filesystem::path& path);

template <typename T>
PerturbationSet<T> read_perturbation_set(const std::filesystem::path& path);

/// index,provenance,target,achieved,l2,beta,source,steps,success,degenerate
template <typename T>
std::string manifest_csv(const PerturbationSet<T>& set);

/// Coordinates of each row on the top two principal axes of the centred rows.
/// Axis signs are fixed so the largest-magnitude loading of each axis is positive.
struct Projection {
  std::vector<std::array<double, 2>> coords;
  std::array<double, 2> variance = {0.0, 0.0};
};

Projection project_top2(const std::vector<std::vector<double>>& rows);

/// Experiment A: untargeted attack on x plus the per-class logit / hyperplane table
/// for the perturbed input, with gates traced at the perturbed and the clean input.
template <typename T>
struct ExperimentA {
  Perturbation<T> attack;
  HyperplaneComparison comparison;
};

template <typename T>
ExperimentA<T> run_experiment_a(const Network<T>& net, const Tensor<T>& x, std::size_t label,
                                const AdversarialConfig& config, EvaluationPoint z = {});

}  // namespace abm
