#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "auditbench/data/bundle.hpp"
#include "auditbench/nn/architectures.hpp"
#include "auditbench/nn/network.hpp"

namespace auditbench {

struct TrainConfig {
  std::string arch = "small_cnn";
  float width_mult = 1.0f;
  std::size_t epochs = 90;
  double learning_rate = 0.03;
  std::size_t batch_size = 128;
  double momentum = 0.9;
  double weight_decay = 0.0;
  bool cosine_decay = true;
  std::uint64_t seed = 0;
};

/// Raised when training diverges (non-finite loss or parameters).
struct TrainingDivergence : std::runtime_error {
  TrainingDivergence(std::size_t epoch, std::size_t step, const std::string& what)
      : std::runtime_error("training diverged at epoch " + std::to_string(epoch) +
                           " step " + std::to_string(step) + ": " + what),
        epoch(epoch), step(step) {}
  std::size_t epoch, step;
};

/// Extension points used by the training-time attacks. All hooks default to
/// no-ops; `per_sample_grads` switches the optimizer to per-sample gradient
/// accumulation (needed for clipping-based hooks).
class TrainingHook {
 public:
  virtual ~TrainingHook() = default;
  /// Transform a batch in place before the forward pass (augmentation,
  /// adversarial example construction, ...).
  virtual void transform_batch(Network&, Tensor& /*images*/, std::vector<int>& /*labels*/,
                               std::size_t /*epoch*/, Rng&) {}
  /// Extra loss gradient contribution added to each parameter gradient after
  /// backprop but before the optimizer step (regularizers).
  virtual void adjust_gradients(std::vector<Param*>&) {}
  virtual bool per_sample_grads() const { return false; }
  /// Process one accumulated per-sample gradient (clip). Only called when
  /// per_sample_grads() is true.
  virtual void clip_sample_gradient(std::vector<std::vector<float>>&) {}
  /// Post-process the summed gradient of a batch (noise addition). `batch_n`
  /// is the microbatch size. Only called when per_sample_grads() is true.
  virtual void finalize_batch_gradient(std::vector<std::vector<float>>&,
                                       std::size_t /*batch_n*/, Rng&) {}
  /// Select which sample indices participate this epoch; default keeps all.
  virtual std::vector<std::size_t> select_samples(Network&, const DatasetBundle&,
                                                  std::size_t /*epoch*/,
                                                  std::vector<std::size_t> all) {
    return all;
  }
};

struct TrainReport {
  std::vector<double> epoch_losses;
  double final_loss = 0.0;
  std::size_t steps = 0;
};

namespace detail {

inline void assemble_batch(const DatasetBundle& data, const std::vector<std::size_t>& idx,
                           std::size_t begin, std::size_t end, Tensor& images,
                           std::vector<int>& labels) {
  const Tensor& first = data.samples.at(idx[begin]).image;
  const std::size_t per = first.numel();
  const std::size_t n = end - begin;
  images.shape = {n, first.dim(0), first.dim(1), first.dim(2)};
  images.data.resize(n * per);
  labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Sample& s = data.samples[idx[begin + i]];
    std::copy(s.image.data.begin(), s.image.data.end(), images.data.begin() + i * per);
    labels[i] = s.label;
  }
}

}  // namespace detail

/// SGD with momentum and optional cosine learning-rate decay. Throws
/// TrainingDivergence on non-finite loss. Returns per-epoch mean losses.
inline TrainReport train(Network& net, const DatasetBundle& data, const TrainConfig& cfg,
                         TrainingHook* hook = nullptr) {
  if (data.samples.empty()) throw std::invalid_argument("train: empty dataset");
  if (cfg.batch_size == 0 || cfg.epochs == 0)
    throw std::invalid_argument("train: batch_size and epochs must be positive");
  Rng rng = make_rng(derive_seed(cfg.seed, 0x7261696eULL));
  std::vector<Param*> params = net.params();
  std::vector<std::vector<float>> velocity(params.size());
  for (std::size_t i = 0; i < params.size(); ++i)
    velocity[i].assign(params[i]->value.numel(), 0.0f);

  TrainReport report;
  std::vector<std::size_t> all_idx(data.samples.size());
  std::iota(all_idx.begin(), all_idx.end(), 0);
  const bool per_sample = hook && hook->per_sample_grads();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> idx = all_idx;
    if (hook) idx = hook->select_samples(net, data, epoch, std::move(idx));
    if (idx.empty()) throw std::invalid_argument("train: hook selected no samples");
    std::shuffle(idx.begin(), idx.end(), rng);

    const double lr = cfg.cosine_decay
        ? cfg.learning_rate * 0.5 * (1.0 + std::cos(M_PI * double(epoch) / double(cfg.epochs)))
        : cfg.learning_rate;

    double epoch_loss = 0.0;
    std::size_t epoch_batches = 0;
    for (std::size_t begin = 0; begin < idx.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(idx.size(), begin + cfg.batch_size);
      Tensor images;
      std::vector<int> labels;
      detail::assemble_batch(data, idx, begin, end, images, labels);
      if (hook) hook->transform_batch(net, images, labels, epoch, rng);

      net.zero_grad();
      float loss;
      if (!per_sample) {
        Tensor logits = net.forward(images, true);
        Tensor grad;
        loss = softmax_ce_loss_grad(logits, labels, grad);
        net.backward(grad);
      } else {
        // Per-sample pipeline: forward/backward one sample at a time so the
        // hook can clip each gradient before summation.
        const std::size_t n = end - begin;
        const std::size_t per = images.numel() / n;
        std::vector<std::vector<float>> summed(params.size());
        for (std::size_t j = 0; j < params.size(); ++j)
          summed[j].assign(params[j]->value.numel(), 0.0f);
        double batch_loss = 0.0;
        for (std::size_t s = 0; s < n; ++s) {
          Tensor xs({1, images.dim(1), images.dim(2), images.dim(3)});
          std::copy(images.data.begin() + s * per, images.data.begin() + (s + 1) * per,
                    xs.data.begin());
          net.zero_grad();
          Tensor logits = net.forward(xs, true);
          Tensor grad;
          batch_loss += softmax_ce_loss_grad(logits, {labels[s]}, grad);
          net.backward(grad);
          std::vector<std::vector<float>> sample(params.size());
          for (std::size_t j = 0; j < params.size(); ++j) sample[j] = params[j]->grad.data;
          hook->clip_sample_gradient(sample);
          for (std::size_t j = 0; j < params.size(); ++j)
            for (std::size_t v = 0; v < sample[j].size(); ++v) summed[j][v] += sample[j][v];
        }
        hook->finalize_batch_gradient(summed, n, rng);
        for (std::size_t j = 0; j < params.size(); ++j)
          for (std::size_t v = 0; v < summed[j].size(); ++v)
            params[j]->grad[v] = summed[j][v] / float(n);
        loss = float(batch_loss / double(n));
      }

      if (!std::isfinite(loss)) throw TrainingDivergence(epoch, report.steps, "non-finite loss");
      if (hook) hook->adjust_gradients(params);

      for (std::size_t j = 0; j < params.size(); ++j) {
        Param& p = *params[j];
        std::vector<float>& v = velocity[j];
        for (std::size_t k = 0; k < p.value.numel(); ++k) {
          float g = p.grad[k] + float(cfg.weight_decay) * p.value[k];
          v[k] = float(cfg.momentum) * v[k] + g;
          p.value[k] -= float(lr) * v[k];
          if (!std::isfinite(p.value[k]))
            throw TrainingDivergence(epoch, report.steps, "non-finite parameter " + p.name);
        }
      }
      epoch_loss += loss;
      ++epoch_batches;
      ++report.steps;
    }
    report.epoch_losses.push_back(epoch_loss / double(epoch_batches));
  }
  report.final_loss = report.epoch_losses.back();
  return report;
}

/// Builds, initializes, and trains a fresh network on `data`.
inline std::shared_ptr<Network> train_network(const DatasetBundle& data,
                                              const TrainConfig& cfg,
                                              TrainingHook* hook = nullptr,
                                              TrainReport* report_out = nullptr) {
  const Tensor& first = data.samples.at(0).image;
  auto net = std::shared_ptr<Network>(make_network(
      cfg.arch, data.class_count, {first.dim(0), first.dim(1), first.dim(2)},
      cfg.width_mult));
  net->init(derive_seed(cfg.seed, 0x696e6974ULL));
  TrainReport rep = train(*net, data, cfg, hook);
  if (report_out) *report_out = rep;
  return net;
}

/// Top-1 accuracy as a percentage, evaluated in inference mode.
inline double evaluate_accuracy(Network& net, const DatasetBundle& data,
                                std::size_t batch_size = 128) {
  if (data.samples.empty()) throw std::invalid_argument("evaluate: empty dataset");
  std::vector<std::size_t> idx(data.samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::size_t hits = 0;
  for (std::size_t begin = 0; begin < idx.size(); begin += batch_size) {
    const std::size_t end = std::min(idx.size(), begin + batch_size);
    Tensor images;
    std::vector<int> labels;
    detail::assemble_batch(data, idx, begin, end, images, labels);
    Tensor logits = net.forward(images, false);
    const std::size_t k = logits.dim(1);
    for (std::size_t i = 0; i < end - begin; ++i) {
      const float* row = logits.ptr() + i * k;
      const int pred = int(std::max_element(row, row + k) - row);
      hits += pred == labels[i];
    }
  }
  return 100.0 * double(hits) / double(data.samples.size());
}

}  // namespace auditbench
