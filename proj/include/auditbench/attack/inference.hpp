#pragma once

#include <atomic>
#include <cmath>
#include <memory>
#include <mutex>
#include <numeric>
#include <vector>

#include "auditbench/attack/plugin.hpp"
#include "auditbench/data/bundle.hpp"
#include "auditbench/nn/access.hpp"

namespace auditbench {
namespace detail {

/// Base for stochastic wrappers: hands out a fresh generator per query,
/// derived from (experiment seed, query index), so concurrent queries are
/// reproducible given their arrival order.
class QuerySeededClassifier : public Classifier {
 public:
  QuerySeededClassifier(std::shared_ptr<Classifier> base, std::uint64_t seed)
      : base_(std::move(base)), seed_(seed) {}

  int class_count() const override { return base_->class_count(); }
  bool supports_gradient() const override { return false; }

 protected:
  Rng next_query_rng() { return make_rng(derive_seed(seed_, counter_.fetch_add(1))); }
  std::shared_ptr<Classifier> base_;

 private:
  std::uint64_t seed_;
  std::atomic<std::uint64_t> counter_{0};
};

}  // namespace detail

// --- decoupling wrappers -------------------------------------------------------

/// Gaussian noise on the log-probabilities, re-normalized. sigma = 0 is the
/// exact identity.
class NoisyOutputClassifier final : public detail::QuerySeededClassifier {
 public:
  NoisyOutputClassifier(std::shared_ptr<Classifier> base, float sigma, std::uint64_t seed)
      : QuerySeededClassifier(std::move(base), seed), sigma_(sigma) {}

  std::vector<float> predict_probs(const Tensor& x) override {
    std::vector<float> p = base_->predict_probs(x);
    if (sigma_ <= 0.0f) return p;
    Rng rng = next_query_rng();
    float mx = -1e30f;
    for (float& v : p) {
      v = std::log(std::max(v, 1e-12f)) + gaussian(rng, 0.0f, sigma_);
      mx = std::max(mx, v);
    }
    float sum = 0.0f;
    for (float& v : p) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (float& v : p) v /= sum;
    return p;
  }

 private:
  float sigma_;
};

/// Gaussian noise on the penultimate feature, with the classifier head
/// re-evaluated on the noisy feature. Requires a network-backed model.
class NoisyFeatureClassifier final : public detail::QuerySeededClassifier {
 public:
  NoisyFeatureClassifier(std::shared_ptr<Classifier> base, float sigma, std::uint64_t seed)
      : QuerySeededClassifier(std::move(base), seed), sigma_(sigma),
        net_(dynamic_cast<NetworkClassifier*>(base_.get())
                 ? dynamic_cast<NetworkClassifier*>(base_.get())->network_ptr()
                 : nullptr) {
    if (!net_)
      throw std::invalid_argument("noisy_feature: requires a network-backed classifier");
  }

  std::vector<float> predict_probs(const Tensor& x) override {
    if (sigma_ <= 0.0f) return base_->predict_probs(x);
    std::lock_guard<std::mutex> lock(mu_);
    Tensor xb = x;
    xb.shape.insert(xb.shape.begin(), 1);
    Tensor feat = net_->forward_upto(xb, net_->penultimate_index(), false);
    Rng rng = next_query_rng();
    for (float& v : feat.data) v += gaussian(rng, 0.0f, sigma_);
    Tensor probs = softmax(net_->forward_from(feat, net_->penultimate_index(), false));
    return std::vector<float>(probs.data.begin(), probs.data.end());
  }

 private:
  float sigma_;
  std::shared_ptr<Network> net_;
  std::mutex mu_;
};

// --- removal wrappers ----------------------------------------------------------

/// Randomized smoothing: majority vote over n Gaussian-perturbed copies.
/// Returned probabilities are the vote shares; sigma = 0 with n = 1 is the
/// exact identity.
class SmoothingClassifier final : public detail::QuerySeededClassifier {
 public:
  SmoothingClassifier(std::shared_ptr<Classifier> base, float sigma, std::size_t n,
                      std::uint64_t seed)
      : QuerySeededClassifier(std::move(base), seed), sigma_(sigma), n_(std::max<std::size_t>(1, n)) {}

  std::vector<float> predict_probs(const Tensor& x) override {
    if (sigma_ <= 0.0f && n_ == 1) return base_->predict_probs(x);
    Rng rng = next_query_rng();
    std::vector<float> votes(std::size_t(class_count()), 0.0f);
    for (std::size_t i = 0; i < n_; ++i) {
      Tensor noisy = x;
      for (float& v : noisy.data)
        v = std::clamp(v + gaussian(rng, 0.0f, sigma_), 0.0f, 1.0f);
      const std::vector<float> p = base_->predict_probs(noisy);
      votes[std::size_t(std::max_element(p.begin(), p.end()) - p.begin())] += 1.0f;
    }
    for (float& v : votes) v /= float(n_);
    return votes;
  }

 private:
  float sigma_;
  std::size_t n_;
};

/// Learned input transformation prepended to the model: a 10-layer residual
/// conv stack trained on the attacker's auxiliary split so that corrupted
/// inputs still classify correctly through the frozen model while staying
/// close to the clean input. Neutralizes additive trigger patterns.
class ReprogrammingClassifier final : public Classifier {
 public:
  /// strength scales the learned residual; 0 is the exact identity.
  ReprogrammingClassifier(std::shared_ptr<Classifier> base, const DatasetBundle& aux,
                          std::uint64_t seed, float strength = 1.0f,
                          std::size_t epochs = 10, std::size_t batch_size = 32,
                          double lr = 0.005, double recon_weight = 20.0)
      : base_(std::move(base)), strength_(strength) {
    auto* nc = dynamic_cast<NetworkClassifier*>(base_.get());
    if (!nc) throw std::invalid_argument("reprogramming: requires a network-backed classifier");
    net_ = nc->network_ptr();
    if (strength_ <= 0.0f || epochs == 0) return;  // identity transform
    if (aux.empty()) throw std::invalid_argument("reprogramming: auxiliary data required");

    const std::size_t c = aux.image_shape().at(0);
    transform_ = std::make_unique<Network>("reprogram_transform", 0, aux.image_shape());
    const std::size_t widths[] = {16, 16, 32, 32, 32, 32, 32, 16, 16};
    std::size_t prev = c;
    for (std::size_t wdt : widths) {
      transform_->add(std::make_unique<Conv2d>(prev, wdt, 3));
      transform_->add(std::make_unique<ReLU>());
      prev = wdt;
    }
    transform_->add(std::make_unique<Conv2d>(prev, c, 3));  // 10 conv layers total
    transform_->init(derive_seed(seed, 0x7265707aULL));
    // Zero the final conv so the transform starts as the identity map; the
    // residual grows from zero, which keeps early training stable.
    for (Param* p : transform_->layer(transform_->layer_count() - 1).params())
      p->value.fill(0.0f);
    train_transform(aux, seed, epochs, batch_size, lr, recon_weight);
  }

  int class_count() const override { return base_->class_count(); }

  std::vector<float> predict_probs(const Tensor& x) override {
    return base_->predict_probs(transform_input(x));
  }

  Tensor transform_input(const Tensor& x) {
    if (!transform_) return x;
    std::lock_guard<std::mutex> lock(mu_);
    Tensor xb = x;
    xb.shape.insert(xb.shape.begin(), 1);
    Tensor res = transform_->forward(xb, false);
    Tensor out = x;
    for (std::size_t i = 0; i < out.numel(); ++i)
      out[i] = std::clamp(out[i] + strength_ * res[i], 0.0f, 1.0f);
    return out;
  }

 private:
  void train_transform(const DatasetBundle& aux, std::uint64_t seed, std::size_t epochs,
                       std::size_t batch_size, double lr, double recon_weight) {
    Rng rng = make_rng(derive_seed(seed, 0x726570ULL));
    std::vector<Param*> params = transform_->params();
    std::vector<std::vector<float>> velocity(params.size());
    for (std::size_t j = 0; j < params.size(); ++j)
      velocity[j].assign(params[j]->value.numel(), 0.0f);

    std::vector<std::size_t> idx(aux.size());
    std::iota(idx.begin(), idx.end(), 0);
    const std::size_t per = aux.samples[0].image.numel();
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
      std::shuffle(idx.begin(), idx.end(), rng);
      for (std::size_t begin = 0; begin < idx.size(); begin += batch_size) {
        const std::size_t end = std::min(idx.size(), begin + batch_size);
        const std::size_t n = end - begin;
        const Tensor& f = aux.samples[idx[begin]].image;
        Tensor clean({n, f.dim(0), f.dim(1), f.dim(2)});
        Tensor corrupted = clean;
        std::vector<int> labels(n);
        for (std::size_t i = 0; i < n; ++i) {
          const Sample& s = aux.samples[idx[begin + i]];
          std::copy(s.image.data.begin(), s.image.data.end(),
                    clean.data.begin() + i * per);
          labels[i] = s.label;
        }
        corrupted = clean;
        // Generic corruptions: Gaussian noise, per-pixel binary blends, and
        // random multi-scale block textures (optionally carrier-modulated).
        // The transform learns to map additive junk back toward the clean
        // manifold; the family is trigger-agnostic.
        const std::size_t ch_n = f.dim(0), hh = f.dim(1), ww = f.dim(2);
        for (std::size_t i = 0; i < n; ++i) {
          const int kind = uniform_int(rng, 0, 3);
          float* px = corrupted.ptr() + i * per;
          if (kind == 1) {
            for (std::size_t j = 0; j < per; ++j)
              px[j] = std::clamp(px[j] + gaussian(rng, 0.0f, 0.2f), 0.0f, 1.0f);
          } else if (kind == 2) {
            const float w = uniform(rng, 0.1f, 0.3f);
            for (std::size_t j = 0; j < per; ++j) {
              const float pat = uniform(rng, 0.0f, 1.0f) > 0.5f ? 1.0f : 0.0f;
              px[j] = std::clamp((1.0f - w) * px[j] + w * pat, 0.0f, 1.0f);
            }
          } else if (kind == 3) {
            const float w = uniform(rng, 0.1f, 0.3f);
            const std::size_t bsz = std::size_t(1) << uniform_int(rng, 0, 2);
            const bool carrier = uniform(rng, 0.0f, 1.0f) < 0.5f;
            const std::size_t bw2 = (ww + bsz - 1) / bsz;
            const std::size_t bh2 = (hh + bsz - 1) / bsz;
            std::vector<float> blocks(ch_n * bh2 * bw2);
            for (float& v : blocks) v = uniform(rng, 0.0f, 1.0f) > 0.5f ? 1.0f : 0.0f;
            for (std::size_t cch = 0; cch < ch_n; ++cch)
              for (std::size_t y = 0; y < hh; ++y)
                for (std::size_t x = 0; x < ww; ++x) {
                  const bool phase =
                      blocks[(cch * bh2 + y / bsz) * bw2 + x / bsz] > 0.5f;
                  const bool flip = carrier && (((y + x) & 1) != 0);
                  const float pat = (phase != flip) ? 1.0f : 0.0f;
                  const std::size_t j = (cch * hh + y) * ww + x;
                  px[j] = std::clamp((1.0f - w) * px[j] + w * pat, 0.0f, 1.0f);
                }
          }
        }

        transform_->zero_grad();
        Tensor res = transform_->forward(corrupted, true);
        Tensor u(res.shape);
        for (std::size_t i = 0; i < u.numel(); ++i)
          u[i] = corrupted[i] + strength_ * res[i];
        // frozen-model cross-entropy gradient at u
        net_->zero_grad();
        Tensor logits = net_->forward(u, false);
        Tensor glogits;
        softmax_ce_loss_grad(logits, labels, glogits);
        Tensor gu = net_->backward(glogits);
        net_->zero_grad();  // model stays frozen
        gu.shape = res.shape;
        // reconstruction prior pulls the transformed image toward the clean one
        for (std::size_t i = 0; i < gu.numel(); ++i)
          gu[i] = strength_ * (gu[i] + float(recon_weight) * 2.0f * (u[i] - clean[i]) /
                                           float(u.numel()));
        transform_->backward(gu);
        // global gradient-norm clip keeps the deep stack stable
        double gsq = 0.0;
        for (Param* p : params)
          for (float v : p->grad.data) gsq += double(v) * v;
        const double gnorm = std::sqrt(gsq);
        if (gnorm > 1.0) {
          const float scale = float(1.0 / gnorm);
          for (Param* p : params)
            for (float& v : p->grad.data) v *= scale;
        }
        for (std::size_t j = 0; j < params.size(); ++j)
          for (std::size_t k = 0; k < params[j]->value.numel(); ++k) {
            velocity[j][k] = 0.9f * velocity[j][k] + params[j]->grad[k];
            params[j]->value[k] -= float(lr) * velocity[j][k];
            if (!std::isfinite(params[j]->value[k]))
              throw std::runtime_error("reprogramming transform diverged");
          }
      }
    }
  }

  std::shared_ptr<Classifier> base_;
  std::shared_ptr<Network> net_;
  std::unique_ptr<Network> transform_;
  float strength_;
  std::mutex mu_;
};

// --- detection wrappers ----------------------------------------------------------

/// Shared shell for input-level detectors: scores each query, answers flagged
/// queries with a uniformly random label (deterministic per query index).
class DetectionClassifier : public detail::QuerySeededClassifier {
 public:
  DetectionClassifier(std::shared_ptr<Classifier> base, std::uint64_t seed)
      : QuerySeededClassifier(std::move(base), seed) {}

  std::vector<float> predict_probs(const Tensor& x) override {
    Rng rng = next_query_rng();
    if (!flagged(x)) return base_->predict_probs(x);
    const int k = class_count();
    std::vector<float> p(std::size_t(k), 0.0f);
    p[std::size_t(uniform_int(rng, 0, k - 1))] = 1.0f;
    return p;
  }

  virtual bool flagged(const Tensor& x) = 0;
};

/// SCALE-UP: prediction consistency under pixel amplification. Inputs whose
/// label survives amplification by {2..max_scale} more often than the
/// threshold (tuned on the auxiliary split for the false-positive budget)
/// are flagged as trigger-carrying.
class ScaleUpClassifier final : public DetectionClassifier {
 public:
  ScaleUpClassifier(std::shared_ptr<Classifier> base, const DatasetBundle& aux,
                    std::uint64_t seed, std::size_t max_scale = 11,
                    double fpr_budget = 0.10)
      : DetectionClassifier(std::move(base), seed), max_scale_(max_scale) {
    if (aux.empty()) throw std::invalid_argument("scale_up: auxiliary data required");
    std::vector<double> scores;
    scores.reserve(aux.size());
    for (const Sample& s : aux.samples) scores.push_back(consistency(s.image));
    threshold_ = detail_percentile(scores, 1.0 - fpr_budget);
  }

  bool flagged(const Tensor& x) override { return consistency(x) > threshold_; }
  double threshold() const { return threshold_; }

  double consistency(const Tensor& x) {
    const std::vector<float> p0 = base_->predict_probs(x);
    const int l0 = int(std::max_element(p0.begin(), p0.end()) - p0.begin());
    std::size_t same = 0, total = 0;
    for (std::size_t k = 2; k <= max_scale_; ++k) {
      Tensor amp = x;
      for (float& v : amp.data) v = std::clamp(v * float(k), 0.0f, 1.0f);
      const std::vector<float> p = base_->predict_probs(amp);
      same += int(std::max_element(p.begin(), p.end()) - p.begin()) == l0;
      ++total;
    }
    return double(same) / double(total);
  }

 private:
  static double detail_percentile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const std::size_t i =
        std::min(v.size() - 1, std::size_t(q * double(v.size())));
    return v[i];
  }

  std::size_t max_scale_;
  double threshold_ = 1.0;
};

/// Penultimate-feature outlier detectors. KNN flags queries whose mean
/// distance to the k nearest auxiliary features is large; the SVM variant is
/// an RBF kernel-density one-class scheme flagging low-density queries.
/// Thresholds are tuned on the auxiliary split for the false-positive budget.
class FeatureOutlierClassifier final : public DetectionClassifier {
 public:
  enum class Kind { knn, svm };

  FeatureOutlierClassifier(std::shared_ptr<Classifier> base, const DatasetBundle& aux,
                           std::uint64_t seed, Kind kind, std::size_t k = 5,
                           double fpr_budget = 0.10)
      : DetectionClassifier(std::move(base), seed), kind_(kind), k_(k) {
    if (aux.empty()) throw std::invalid_argument("outlier detector: auxiliary data required");
    auto* nc = dynamic_cast<NetworkClassifier*>(base_.get());
    if (!nc) throw std::invalid_argument("outlier detector: requires a network-backed classifier");
    for (const Sample& s : aux.samples) bank_.push_back(nc->feature(s.image, -1));

    if (kind_ == Kind::svm) {
      // bandwidth from the median pairwise distance on a subsample
      std::vector<double> d2s;
      for (std::size_t i = 0; i < bank_.size(); i += 4)
        for (std::size_t j = i + 1; j < bank_.size(); j += 7)
          d2s.push_back(dist2(bank_[i], bank_[j]));
      std::nth_element(d2s.begin(), d2s.begin() + std::ptrdiff_t(d2s.size() / 2), d2s.end());
      gamma_ = 1.0 / std::max(1e-9, d2s[d2s.size() / 2]);
    }

    // leave-one-out scores on the bank set the threshold at the FPR budget
    std::vector<double> scores;
    for (std::size_t i = 0; i < bank_.size(); ++i) scores.push_back(score(bank_[i], i));
    std::sort(scores.begin(), scores.end());
    if (kind_ == Kind::knn) {
      const std::size_t idx = std::min(scores.size() - 1,
                                       std::size_t((1.0 - fpr_budget) * double(scores.size())));
      threshold_ = scores[idx];  // flag when distance above
    } else {
      const std::size_t idx = std::min(scores.size() - 1,
                                       std::size_t(fpr_budget * double(scores.size())));
      threshold_ = idx == 0 ? scores[0] - 1e-9 : scores[idx - 1];  // flag when density below
    }
  }

  bool flagged(const Tensor& x) override {
    auto* nc = dynamic_cast<NetworkClassifier*>(base_.get());
    const std::vector<float> f = nc->feature(x, -1);
    const double s = score(f, bank_.size());
    return kind_ == Kind::knn ? s > threshold_ : s < threshold_;
  }

  double threshold() const { return threshold_; }

 private:
  static double dist2(const std::vector<float>& a, const std::vector<float>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += double(a[i] - b[i]) * (a[i] - b[i]);
    return s;
  }

  double score(const std::vector<float>& f, std::size_t exclude) const {
    if (kind_ == Kind::knn) {
      std::vector<double> ds;
      ds.reserve(bank_.size());
      for (std::size_t i = 0; i < bank_.size(); ++i)
        if (i != exclude) ds.push_back(dist2(f, bank_[i]));
      const std::size_t k = std::min(k_, ds.size());
      std::partial_sort(ds.begin(), ds.begin() + std::ptrdiff_t(k), ds.end());
      double m = 0.0;
      for (std::size_t i = 0; i < k; ++i) m += std::sqrt(ds[i]);
      return m / double(k);
    }
    double dens = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < bank_.size(); ++i) {
      if (i == exclude) continue;
      dens += std::exp(-gamma_ * dist2(f, bank_[i]));
      ++n;
    }
    return dens / double(n);
  }

  Kind kind_;
  std::size_t k_;
  double gamma_ = 1.0;
  double threshold_ = 0.0;
  std::vector<std::vector<float>> bank_;
};

// --- dispatch --------------------------------------------------------------------

/// Wraps a model handle with one post-training attack; the returned handle
/// keeps the original access level.
inline ModelAccess inference_attack(const AttackPlugin& plugin, const ModelAccess& model,
                                    const DatasetBundle* aux, std::uint64_t seed) {
  if (plugin.phase != AttackPhase::post_training)
    throw std::invalid_argument("inference_attack: plugin is not post-training phase");
  if (plugin.needs_aux_data && (aux == nullptr || aux->empty()))
    throw std::invalid_argument(std::string(to_string(plugin.attack_id)) +
                                ": auxiliary data required");
  const nlohmann::json& p = plugin.params;
  std::shared_ptr<Classifier> base = model.classifier();
  std::shared_ptr<Classifier> wrapped;
  switch (plugin.attack_id) {
    case AttackId::noisy_output:
      wrapped = std::make_shared<NoisyOutputClassifier>(base, p.value("sigma", 0.5f), seed);
      break;
    case AttackId::noisy_feature:
      wrapped = std::make_shared<NoisyFeatureClassifier>(base, p.value("sigma", 0.5f), seed);
      break;
    case AttackId::randomized_smoothing:
      wrapped = std::make_shared<SmoothingClassifier>(base, p.value("sigma", 0.25f),
                                                      p.value("n", std::size_t(30)), seed);
      break;
    case AttackId::reprogramming:
      wrapped = std::make_shared<ReprogrammingClassifier>(
          base, *aux, seed, p.value("strength", 1.0f), p.value("epochs", std::size_t(10)),
          p.value("batch_size", std::size_t(32)), p.value("lr", 0.005),
          p.value("recon_weight", 20.0));
      break;
    case AttackId::scale_up:
      if (aux == nullptr || aux->empty())
        throw std::invalid_argument("scale_up: auxiliary data required for threshold tuning");
      wrapped = std::make_shared<ScaleUpClassifier>(base, *aux, seed,
                                                    p.value("max_scale", std::size_t(11)),
                                                    p.value("fpr_budget", 0.10));
      break;
    case AttackId::od_knn:
      wrapped = std::make_shared<FeatureOutlierClassifier>(
          base, *aux, seed, FeatureOutlierClassifier::Kind::knn,
          p.value("k", std::size_t(5)), p.value("fpr_budget", 0.10));
      break;
    case AttackId::od_svm:
      wrapped = std::make_shared<FeatureOutlierClassifier>(
          base, *aux, seed, FeatureOutlierClassifier::Kind::svm,
          p.value("k", std::size_t(5)), p.value("fpr_budget", 0.10));
      break;
    default:
      throw std::invalid_argument(std::string("not a post-training attack: ") +
                                  to_string(plugin.attack_id));
  }
  return ModelAccess(std::move(wrapped), model.level());
}

}  // namespace auditbench
