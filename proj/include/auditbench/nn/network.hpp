#pragma once

#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "auditbench/nn/layers.hpp"

namespace auditbench {

/// Softmax over the last dim of a [N,K] logits tensor.
inline Tensor softmax(const Tensor& logits) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  Tensor p(logits.shape);
  for (std::size_t i = 0; i < n; ++i) {
    const float* src = logits.ptr() + i * k;
    float* dst = p.ptr() + i * k;
    float mx = src[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, src[j]);
    float sum = 0.0f;
    for (std::size_t j = 0; j < k; ++j) {
      dst[j] = std::exp(src[j] - mx);
      sum += dst[j];
    }
    for (std::size_t j = 0; j < k; ++j) dst[j] /= sum;
  }
  return p;
}

/// Mean cross-entropy over a batch plus the logits gradient (probs - onehot)/N.
inline float softmax_ce_loss_grad(const Tensor& logits, const std::vector<int>& labels,
                                  Tensor& grad_out) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  Tensor probs = softmax(logits);
  grad_out = probs;
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const float p = std::max(probs[i * k + std::size_t(labels[i])], 1e-12f);
    loss -= std::log(double(p));
    grad_out[i * k + std::size_t(labels[i])] -= 1.0f;
  }
  grad_out *= 1.0f / float(n);
  return float(loss / double(n));
}

/// Feed-forward classifier: an ordered layer stack ending in a Linear head.
/// Not safe for concurrent forward calls (layers cache activations); callers
/// that share a trained network across threads must serialize queries.
class Network {
 public:
  Network(std::string arch, int class_count, std::vector<std::size_t> input_shape)
      : arch_(std::move(arch)), class_count_(class_count),
        input_shape_(std::move(input_shape)) {}

  void add(std::unique_ptr<Layer> l) { layers_.push_back(std::move(l)); }

  void init(std::uint64_t seed) {
    Rng rng = make_rng(seed);
    for (auto& l : layers_) l->init(rng);
  }

  const std::string& arch() const { return arch_; }
  int class_count() const { return class_count_; }
  const std::vector<std::size_t>& input_shape() const { return input_shape_; }
  std::size_t layer_count() const { return layers_.size(); }

  Tensor forward(const Tensor& x, bool train = false) {
    Tensor h = x;
    for (auto& l : layers_) h = l->forward(h, train);
    return h;
  }

  /// Activation after layers [0, end); end = layer_count()-1 gives the
  /// penultimate feature (input of the Linear head).
  Tensor forward_upto(const Tensor& x, std::size_t end, bool train = false) {
    Tensor h = x;
    for (std::size_t i = 0; i < end && i < layers_.size(); ++i)
      h = layers_[i]->forward(h, train);
    return h;
  }

  Tensor forward_from(const Tensor& act, std::size_t begin, bool train = false) {
    Tensor h = act;
    for (std::size_t i = begin; i < layers_.size(); ++i) h = layers_[i]->forward(h, train);
    return h;
  }

  std::size_t penultimate_index() const { return layers_.size() - 1; }

  /// Back-propagates a logits gradient; accumulates parameter gradients and
  /// returns the input gradient. Requires a preceding forward pass.
  Tensor backward(const Tensor& grad_logits) {
    Tensor g = grad_logits;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
  }

  std::vector<Param*> params() {
    std::vector<Param*> out;
    for (auto& l : layers_)
      for (Param* p : l->params()) out.push_back(p);
    return out;
  }

  void zero_grad() {
    for (Param* p : params()) p->zero_grad();
  }

  std::vector<Tensor*> buffers() {
    std::vector<Tensor*> out;
    for (auto& l : layers_)
      for (Tensor* b : l->buffers()) out.push_back(b);
    return out;
  }

  Layer& layer(std::size_t i) { return *layers_.at(i); }

  /// Batched forward as a single sample helper; x is C x H x W.
  Tensor forward_single(const Tensor& x, bool train = false) {
    Tensor xb = x;
    xb.shape.insert(xb.shape.begin(), 1);
    Tensor logits = forward(xb, train);
    logits.shape = {logits.dim(1)};
    return logits;
  }

 private:
  std::string arch_;
  int class_count_;
  std::vector<std::size_t> input_shape_;
  std::vector<std::unique_ptr<Layer>> layers_;
};

}  // namespace auditbench
