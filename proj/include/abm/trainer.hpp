#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "abm/dataset.hpp"
#include "abm/network.hpp"

namespace abm {

/// From `epoch` (0-based) onwards the learning rate is `rate`.
struct LrStep {
  std::size_t epoch = 0;
  double rate = 0.0;

  bool operator==(const LrStep&) const = default;
};

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 100;
  std::vector<LrStep> lr_schedule = {{0, 0.01}};
  double l1_factor = 1e-4;
  std::uint64_t seed = 0;
  bool augment = true;
  std::size_t validate_every = 2;
  std::filesystem::path checkpoint;  // best model so far; empty disables
  std::filesystem::path log_csv;     // per-epoch log; empty disables
};

/// Throws Error unless epochs and batch size are positive and the schedule starts
/// at epoch 0 with non-negative, non-increasing rates at increasing epochs.
void validate(const TrainConfig& config);

double learning_rate(const TrainConfig& config, std::size_t epoch);

template <typename T>
struct LossGradient {
  double loss = 0.0;  // mean cross-entropy plus the L1 penalty
  double cross_entropy = 0.0;
  std::vector<Tensor<T>> grads;  // per node, empty for nodes without parameters
};

/// Softmax cross-entropy of the classifier output (before any final activation),
/// averaged over the batch, plus l1_factor times the sum of |w| over conv kernels
/// and dense weights. The L1 subgradient at 0 is 0.
template <typename T>
LossGradient<T> loss_and_gradient(const Network<T>& net, const std::vector<Tensor<T>>& inputs,
                                  const std::vector<std::uint8_t>& labels, double l1_factor);

template <typename T>
struct InputGradient {
  double loss = 0.0;  // cross-entropy for the given label, no penalty
  Tensor<T> gradient;  // d loss / d x, input-shaped
};

/// Gradient of the softmax cross-entropy of one input with respect to the input.
template <typename T>
InputGradient<T> input_gradient(const Network<T>& net, const Tensor<T>& x, std::size_t label);

/// w -= rate * grad for every parameter.
template <typename T>
void descend(Network<T>& net, const std::vector<Tensor<T>>& grads, double rate);

/// Batched classifier outputs, one row per input.
template <typename T>
std::vector<Tensor<T>> batch_logits(const Network<T>& net, const std::vector<Tensor<T>>& inputs);

/// Top-1 accuracy on normalized (unaugmented) images.
template <typename T>
double accuracy(const Network<T>& net, const Dataset& data, const DatasetConfig& config, std::size_t batch = 100);

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;
  double train_loss = 0.0;
  std::optional<double> val_acc;
  bool checkpointed = false;
};

std::string training_log_csv(const std::vector<EpochLog>& log);

template <typename T>
struct TrainResult {
  Network<T> best;  // weights at the best validation accuracy
  double best_val_acc = 0.0;
  std::size_t best_epoch = 0;  // 0 only when no epoch ran
  std::optional<double> test_acc;
  std::vector<EpochLog> log;
};

/// Plain mini-batch gradient descent. Validates every `validate_every` epochs and
/// after the last one, keeping (and checkpointing) the best model. A non-finite
/// loss throws NumericError naming the epoch and step.
template <typename T>
TrainResult<T> train(Network<T> net, const CifarSplits& data, const DatasetConfig& data_config,
                     const TrainConfig& config);

}  // namespace abm
