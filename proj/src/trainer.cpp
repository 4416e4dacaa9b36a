#include "abm/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "abm/error.hpp"
#include "abm/model_io.hpp"
#include "binary_io.hpp"
#include "graph.hpp"

namespace abm {

namespace {

template <typename T>
detail::Patch<T> stack(const Network<T>& net, const std::vector<Tensor<T>>& inputs) {
  const detail::Grid grid = detail::grid_of(net.input_shape());
  detail::Patch<T> batch(inputs.size(), grid.c, detail::Box::full(grid));
  for (std::size_t b = 0; b < inputs.size(); ++b) {
    require_same_shape(inputs[b].shape(), net.input_shape(), "training input");
    std::copy(inputs[b].data().begin(), inputs[b].data().end(), batch.sample(b));
  }
  return batch;
}

template <typename T>
detail::ActivationHook<T> live_activation(const Network<T>& net) {
  return [&net](int node, detail::Patch<T>& values) {
    detail::apply_activation(values, std::get<Activation>(net.layer(node).op).kind);
  };
}

template <typename T>
const Tensor<T>* parameter(const LayerOp<T>& op) {
  if (const auto* c = std::get_if<Conv<T>>(&op)) return &c->kernel;
  if (const auto* d = std::get_if<Dense<T>>(&op)) return &d->weight;
  return nullptr;
}

template <typename T>
std::vector<Tensor<T>> normalized_batch(const Dataset& data, const std::vector<std::size_t>& order, std::size_t first,
                                        std::size_t count, const DatasetConfig& config, Rng* augment_rng) {
  std::vector<Tensor<T>> batch;
  batch.reserve(count);
  for (std::size_t n = first; n < first + count; ++n) {
    Tensor<float> img = data.unit_image(order[n]);
    if (augment_rng) img = augment(img, draw_augment(*augment_rng));
    batch.push_back(normalize_image<T>(img, config));
  }
  return batch;
}

}  // namespace

void validate(const TrainConfig& config) {
  if (config.batch_size == 0) throw Error("batch size must be positive");
  if (config.validate_every == 0) throw Error("validation interval must be positive");
  if (config.lr_schedule.empty() || config.lr_schedule.front().epoch != 0) {
    throw Error("learning-rate schedule must start at epoch 0");
  }
  for (std::size_t k = 0; k < config.lr_schedule.size(); ++k) {
    const LrStep& step = config.lr_schedule[k];
    if (!(step.rate >= 0.0) || !std::isfinite(step.rate)) throw Error("learning rates must be non-negative and finite");
    if (k > 0) {
      const LrStep& prev = config.lr_schedule[k - 1];
      if (step.epoch <= prev.epoch) throw Error("learning-rate schedule epochs must increase");
      if (step.rate > prev.rate) throw Error("learning rates must not increase over the schedule");
    }
  }
  if (config.l1_factor < 0.0) throw Error("L1 factor must be non-negative");
}

double learning_rate(const TrainConfig& config, std::size_t epoch) {
  double rate = 0.0;
  for (const LrStep& step : config.lr_schedule) {
    if (step.epoch <= epoch) rate = step.rate;
  }
  return rate;
}

template <typename T>
std::vector<Tensor<T>> batch_logits(const Network<T>& net, const std::vector<Tensor<T>>& inputs) {
  if (inputs.empty()) return {};
  const int out_node = net.logits_node();
  auto run = detail::propagate(net, stack(net, inputs), out_node, live_activation(net), {}, false);
  const auto& out = run.outputs[static_cast<std::size_t>(out_node)];
  std::vector<Tensor<T>> rows;
  for (std::size_t b = 0; b < inputs.size(); ++b) {
    Tensor<T> row(Shape{net.classes()});
    std::copy_n(out.sample(b), net.classes(), row.data().begin());
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {

template <typename T>
struct BackwardPass {
  double cross_entropy = 0.0;
  std::vector<Tensor<T>> param_grads;
  detail::Patch<T> input_grad;
};

// Mean softmax cross-entropy of the classifier output and its reverse sweep.
template <typename T>
BackwardPass<T> cross_entropy_backward(const Network<T>& net, const std::vector<Tensor<T>>& inputs,
                                       const std::vector<std::uint8_t>& labels, bool want_params) {
  if (inputs.empty() || inputs.size() != labels.size()) {
    throw ShapeError("loss needs one label per input and at least one input");
  }
  const std::size_t batch = inputs.size(), classes = net.classes();
  const int out_node = net.logits_node();
  const detail::Patch<T> input = stack(net, inputs);
  auto run = detail::propagate(net, input, out_node, live_activation(net), {}, true);
  const auto& out = run.outputs[static_cast<std::size_t>(out_node)];

  BackwardPass<T> pass;
  detail::Patch<T> cot(batch, classes, detail::Box{0, 1, 0, 1});
  double ce = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    if (labels[b] >= classes) throw DataError("label " + std::to_string(labels[b]) + " out of range");
    const T* z = out.sample(b);
    double peak = static_cast<double>(z[0]);
    for (std::size_t k = 1; k < classes; ++k) peak = std::max(peak, static_cast<double>(z[k]));
    double total = 0.0;
    for (std::size_t k = 0; k < classes; ++k) total += std::exp(static_cast<double>(z[k]) - peak);
    ce += peak + std::log(total) - static_cast<double>(z[labels[b]]);
    for (std::size_t k = 0; k < classes; ++k) {
      const double prob = std::exp(static_cast<double>(z[k]) - peak) / total;
      cot.sample(b)[k] = static_cast<T>((prob - (k == labels[b] ? 1.0 : 0.0)) / static_cast<double>(batch));
    }
  }
  pass.cross_entropy = ce / static_cast<double>(batch);

  if (want_params) pass.param_grads = detail::zero_parameter_gradients(net);
  detail::ActivationAdjointHook<T> derivative = [&](int node, detail::Patch<T>& g) {
    const int in = net.layer(node).input;
    const auto& pre = in < 0 ? input : run.outputs[static_cast<std::size_t>(in)];
    detail::apply_activation_derivative(g, pre, std::get<Activation>(net.layer(node).op).kind);
  };
  pass.input_grad = detail::backpropagate(net, out_node, std::move(cot), derivative, &input, &run.outputs,
                                          want_params ? &pass.param_grads : nullptr);
  return pass;
}

}  // namespace

template <typename T>
LossGradient<T> loss_and_gradient(const Network<T>& net, const std::vector<Tensor<T>>& inputs,
                                  const std::vector<std::uint8_t>& labels, double l1_factor) {
  auto pass = cross_entropy_backward(net, inputs, labels, true);
  LossGradient<T> result;
  result.cross_entropy = pass.cross_entropy;
  result.grads = std::move(pass.param_grads);
  double penalty = 0.0;
  for (std::size_t n = 0; n < net.node_count(); ++n) {
    const Tensor<T>* weights = parameter(net.layers()[n].op);
    if (!weights) continue;
    const Tensor<T>& w = *weights;
    Tensor<T>& g = result.grads[n];
    for (std::size_t e = 0; e < w.size(); ++e) {
      penalty += std::abs(static_cast<double>(w[e]));
      const T sign = w[e] > T(0) ? T(1) : (w[e] < T(0) ? T(-1) : T(0));
      g[e] += static_cast<T>(l1_factor) * sign;
    }
  }
  result.loss = result.cross_entropy + l1_factor * penalty;
  return result;
}

template <typename T>
InputGradient<T> input_gradient(const Network<T>& net, const Tensor<T>& x, std::size_t label) {
  if (label >= net.classes()) throw IndexError("class " + std::to_string(label) + " out of range");
  auto pass = cross_entropy_backward(net, {x}, {static_cast<std::uint8_t>(label)}, false);
  InputGradient<T> result;
  result.loss = pass.cross_entropy;
  result.gradient = detail::to_tensor(pass.input_grad, detail::grid_of(net.input_shape()));
  return result;
}

template <typename T>
void descend(Network<T>& net, const std::vector<Tensor<T>>& grads, double rate) {
  if (grads.size() != net.node_count()) throw ShapeError("one gradient slot per node expected");
  const T step = static_cast<T>(rate);
  for (std::size_t n = 0; n < net.node_count(); ++n) {
    auto& op = net.layers()[n].op;
    Tensor<T>* w = nullptr;
    if (auto* c = std::get_if<Conv<T>>(&op)) w = &c->kernel;
    if (auto* d = std::get_if<Dense<T>>(&op)) w = &d->weight;
    if (auto* r = std::get_if<ScalarRescale<T>>(&op)) {
      r->scale -= step * grads[n][0];
      continue;
    }
    if (!w) continue;
    require_same_shape(grads[n].shape(), w->shape(), "parameter gradient");
    for (std::size_t e = 0; e < w->size(); ++e) (*w)[e] -= step * grads[n][e];
  }
}

template <typename T>
double accuracy(const Network<T>& net, const Dataset& data, const DatasetConfig& config, std::size_t batch) {
  if (data.size() == 0) throw DataError("accuracy of an empty dataset");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t correct = 0;
  for (std::size_t first = 0; first < data.size(); first += batch) {
    const std::size_t count = std::min(batch, data.size() - first);
    const auto rows = batch_logits(net, normalized_batch<T>(data, order, first, count, config, nullptr));
    for (std::size_t b = 0; b < count; ++b) correct += argmax(rows[b]) == data.labels[first + b] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

std::string training_log_csv(const std::vector<EpochLog>& log) {
  std::ostringstream out;
  out << "epoch,lr,train_loss,val_acc\n";
  char buf[128];
  for (const EpochLog& row : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,", row.epoch, row.lr, row.train_loss);
    out << buf;
    if (row.val_acc) {
      std::snprintf(buf, sizeof buf, "%.9g", *row.val_acc);
      out << buf;
    }
    out << '\n';
  }
  return out.str();
}

template <typename T>
TrainResult<T> train(Network<T> net, const CifarSplits& data, const DatasetConfig& data_config,
                     const TrainConfig& config) {
  validate(config);
  if (data.train.size() == 0 || data.val.size() == 0) throw DataError("training and validation splits must be non-empty");
  if (net.input_shape() != Shape{kCifarSide, kCifarSide, 3}) throw ShapeError("training expects 32x32x3 inputs");
  Rng order_rng(config.seed);
  Rng augment_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  TrainResult<T> result;
  result.best = net;
  bool have_best = false;

  auto write_log = [&] {
    if (config.log_csv.empty()) return;
    const std::string text = training_log_csv(result.log);
    detail::write_file(config.log_csv, std::vector<std::uint8_t>(text.begin(), text.end()));
  };

  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    EpochLog row;
    row.epoch = epoch + 1;
    row.lr = learning_rate(config, epoch);
    order_rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t first = 0; first < order.size(); first += config.batch_size, ++steps) {
      const std::size_t count = std::min(config.batch_size, order.size() - first);
      const auto inputs =
          normalized_batch<T>(data.train, order, first, count, data_config, config.augment ? &augment_rng : nullptr);
      std::vector<std::uint8_t> labels(count);
      for (std::size_t b = 0; b < count; ++b) labels[b] = data.train.labels[order[first + b]];
      const auto lg = loss_and_gradient(net, inputs, labels, config.l1_factor);
      if (!std::isfinite(lg.loss)) {
        throw NumericError("training loss became " + std::to_string(lg.loss) + " at epoch " + std::to_string(row.epoch) +
                           ", step " + std::to_string(steps + 1) + " (learning rate " + std::to_string(row.lr) + ")");
      }
      loss_sum += lg.loss;
      descend(net, lg.grads, row.lr);
    }
    row.train_loss = loss_sum / static_cast<double>(steps);
    if (row.epoch % config.validate_every == 0 || row.epoch == config.epochs) {
      row.val_acc = accuracy(net, data.val, data_config, config.batch_size);
      if (!have_best || *row.val_acc > result.best_val_acc) {
        have_best = true;
        result.best = net;
        result.best_val_acc = *row.val_acc;
        result.best_epoch = row.epoch;
        row.checkpointed = true;
        if (!config.checkpoint.empty()) save_model(net, config.checkpoint);
      }
    }
    result.log.push_back(row);
    write_log();
  }
  if (!have_best) result.best_val_acc = accuracy(net, data.val, data_config, config.batch_size);
  if (data.test.size() > 0) result.test_acc = accuracy(result.best, data.test, data_config, config.batch_size);
  write_log();
  return result;
}

#define ABM_INSTANTIATE_TRAINER(T)                                                                             \
  template std::vector<Tensor<T>> batch_logits(const Network<T>&, const std::vector<Tensor<T>>&);              \
  template LossGradient<T> loss_and_gradient(const Network<T>&, const std::vector<Tensor<T>>&,                 \
                                             const std::vector<std::uint8_t>&, double);                        \
  template InputGradient<T> input_gradient(const Network<T>&, const Tensor<T>&, std::size_t);                  \
  template void descend(Network<T>&, const std::vector<Tensor<T>>&, double);                                   \
  template double accuracy(const Network<T>&, const Dataset&, const DatasetConfig&, std::size_t);              \
  template TrainResult<T> train(Network<T>, const CifarSplits&, const DatasetConfig&, const TrainConfig&);

ABM_INSTANTIATE_TRAINER(float)
ABM_INSTANTIATE_TRAINER(double)

}  // namespace abm
