#pragma once

#include <memory>
#include <mutex>
#include <stdexcept>
#include <vector>

#include "auditbench/nn/network.hpp"

namespace auditbench {

enum class AccessLevel { label_only, logits, white_box };

inline const char* to_string(AccessLevel l) {
  switch (l) {
    case AccessLevel::label_only: return "label_only";
    case AccessLevel::logits: return "logits";
    case AccessLevel::white_box: return "white_box";
  }
  return "?";
}

/// Query surface behind ModelAccess. Implementations must be safe for
/// concurrent predict calls (wrap mutable state in a mutex).
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual int class_count() const = 0;
  /// Probability vector for one C x H x W input.
  virtual std::vector<float> predict_probs(const Tensor& x) = 0;
  /// Pre-softmax scores. The default reconstructs them as log-probabilities
  /// (exact up to an additive constant, but saturated where float probs are);
  /// network-backed classifiers return the raw head output instead.
  virtual std::vector<float> predict_logits(const Tensor& x) {
    std::vector<float> p = predict_probs(x);
    for (float& v : p) v = std::log(std::max(v, 1e-12f));
    return p;
  }
  /// Input-space gradient of the cross-entropy loss at (x, y).
  virtual Tensor input_gradient(const Tensor& x, int y) {
    (void)x; (void)y;
    throw std::runtime_error("gradient unavailable for this classifier");
  }
  /// Intermediate activation; layer_id -1 means the penultimate feature.
  virtual std::vector<float> feature(const Tensor& x, int layer_id) {
    (void)x; (void)layer_id;
    throw std::runtime_error("features unavailable for this classifier");
  }
  virtual bool supports_gradient() const { return false; }
};

/// Classifier over a trained Network. Queries are serialized internally
/// because layers cache activations.
class NetworkClassifier final : public Classifier {
 public:
  explicit NetworkClassifier(std::shared_ptr<Network> net) : net_(std::move(net)) {}

  int class_count() const override { return net_->class_count(); }

  std::vector<float> predict_probs(const Tensor& x) override {
    std::lock_guard<std::mutex> lock(mu_);
    Tensor xb = x;
    xb.shape.insert(xb.shape.begin(), 1);
    Tensor probs = softmax(net_->forward(xb, false));
    return std::vector<float>(probs.data.begin(), probs.data.end());
  }

  std::vector<float> predict_logits(const Tensor& x) override {
    std::lock_guard<std::mutex> lock(mu_);
    Tensor xb = x;
    xb.shape.insert(xb.shape.begin(), 1);
    Tensor logits = net_->forward(xb, false);
    return std::vector<float>(logits.data.begin(), logits.data.end());
  }

  Tensor input_gradient(const Tensor& x, int y) override {
    std::lock_guard<std::mutex> lock(mu_);
    Tensor xb = x;
    xb.shape.insert(xb.shape.begin(), 1);
    Tensor logits = net_->forward(xb, false);
    Tensor grad;
    softmax_ce_loss_grad(logits, {y}, grad);
    net_->zero_grad();
    Tensor gx = net_->backward(grad);
    gx.shape = x.shape;
    return gx;
  }

  std::vector<float> feature(const Tensor& x, int layer_id) override {
    std::lock_guard<std::mutex> lock(mu_);
    Tensor xb = x;
    xb.shape.insert(xb.shape.begin(), 1);
    const std::size_t end = layer_id < 0 ? net_->penultimate_index()
                                         : std::size_t(layer_id);
    Tensor act = net_->forward_upto(xb, end, false);
    return std::vector<float>(act.data.begin(), act.data.end());
  }

  bool supports_gradient() const override { return true; }

  Network& network() { return *net_; }
  std::shared_ptr<Network> network_ptr() { return net_; }

 private:
  std::shared_ptr<Network> net_;
  std::mutex mu_;
};

/// Leveled handle to a classifier: label_only exposes argmax only, logits adds
/// probability vectors, white_box adds gradients and features. Wrappers never
/// escalate.
class ModelAccess {
 public:
  ModelAccess() = default;
  ModelAccess(std::shared_ptr<Classifier> c, AccessLevel level)
      : classifier_(std::move(c)), level_(level) {}

  AccessLevel level() const { return level_; }
  int class_count() const { return classifier_->class_count(); }
  bool valid() const { return classifier_ != nullptr; }

  int predict_label(const Tensor& x) const {
    const std::vector<float> p = classifier_->predict_probs(x);
    return int(std::max_element(p.begin(), p.end()) - p.begin());
  }

  std::vector<float> predict_probs(const Tensor& x) const {
    if (level_ == AccessLevel::label_only)
      throw std::runtime_error("probability query rejected at label_only access");
    return classifier_->predict_probs(x);
  }

  std::vector<float> predict_logits(const Tensor& x) const {
    if (level_ == AccessLevel::label_only)
      throw std::runtime_error("logit query rejected at label_only access");
    return classifier_->predict_logits(x);
  }

  Tensor gradient(const Tensor& x, int y) const {
    if (level_ != AccessLevel::white_box)
      throw std::runtime_error("gradient query rejected below white_box access");
    return classifier_->input_gradient(x, y);
  }

  std::vector<float> feature(const Tensor& x, int layer_id = -1) const {
    if (level_ != AccessLevel::white_box)
      throw std::runtime_error("feature query rejected below white_box access");
    return classifier_->feature(x, layer_id);
  }

  /// Restrict to a lower (or equal) access level; escalation throws.
  ModelAccess restrict(AccessLevel level) const {
    if (int(level) > int(level_))
      throw std::runtime_error("access escalation attempt");
    return ModelAccess(classifier_, level);
  }

  std::shared_ptr<Classifier> classifier() const { return classifier_; }

 private:
  std::shared_ptr<Classifier> classifier_;
  AccessLevel level_ = AccessLevel::label_only;
};

inline ModelAccess wrap_access(const ModelAccess& model, AccessLevel level) {
  return model.restrict(level);
}

inline ModelAccess make_white_box(std::shared_ptr<Network> net) {
  return ModelAccess(std::make_shared<NetworkClassifier>(std::move(net)),
                     AccessLevel::white_box);
}

}  // namespace auditbench
