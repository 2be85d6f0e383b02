#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "auditbench/attack/plugin.hpp"
#include "auditbench/nn/train.hpp"

namespace auditbench {

// --- differential privacy accountant -----------------------------------------

/// Renyi-style accounting for the subsampled Gaussian mechanism using the
/// standard small-sampling-rate bound rdp(alpha) ~= steps * 2 q^2 alpha /
/// sigma^2, converted at the best order: eps = min_alpha rdp(alpha) +
/// log(1/delta)/(alpha - 1).
inline double dp_epsilon_for_sigma(double sigma, double q, std::size_t steps,
                                   double delta) {
  double best = std::numeric_limits<double>::infinity();
  for (double alpha = 1.25; alpha <= 256.0; alpha *= 1.1) {
    const double rdp = double(steps) * 2.0 * q * q * alpha / (sigma * sigma);
    best = std::min(best, rdp + std::log(1.0 / delta) / (alpha - 1.0));
  }
  return best;
}

/// Smallest noise multiplier achieving the requested epsilon at delta, for
/// `steps` optimizer steps with sampling rate q. Throws when the budget is
/// unreachable within the searched noise range.
inline double dp_noise_multiplier(double target_eps, double delta, double q,
                                  std::size_t steps) {
  if (target_eps <= 0.0 || delta <= 0.0 || q <= 0.0 || q > 1.0 || steps == 0)
    throw std::invalid_argument("dp accountant: bad parameters");
  double lo = 0.05, hi = 200.0;
  if (dp_epsilon_for_sigma(hi, q, steps, delta) > target_eps)
    throw std::runtime_error("dp accountant: requested epsilon unreachable at this step count");
  if (dp_epsilon_for_sigma(lo, q, steps, delta) <= target_eps) return lo;
  for (int i = 0; i < 80; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (dp_epsilon_for_sigma(mid, q, steps, delta) <= target_eps) hi = mid;
    else lo = mid;
  }
  return hi;
}

// --- training hooks -----------------------------------------------------------

/// Per-sample gradient clipping to l2 norm <= clip_bound plus Gaussian noise
/// N(0, (sigma * clip)^2) on each coordinate of the batch-summed gradient.
class DpSgdHook final : public TrainingHook {
 public:
  DpSgdHook(double clip_bound, double noise_multiplier)
      : clip_(clip_bound), sigma_(noise_multiplier) {
    if (clip_ <= 0.0) throw std::invalid_argument("dp hook: clip bound must be positive");
  }

  bool per_sample_grads() const override { return true; }

  void clip_sample_gradient(std::vector<std::vector<float>>& grads) override {
    double sq = 0.0;
    for (const auto& g : grads)
      for (float v : g) sq += double(v) * v;
    const double norm = std::sqrt(sq);
    last_clipped_norm_ = std::min(norm, clip_);
    if (norm <= clip_) return;
    const float scale = float(clip_ / norm);
    for (auto& g : grads)
      for (float& v : g) v *= scale;
  }

  void finalize_batch_gradient(std::vector<std::vector<float>>& summed, std::size_t,
                               Rng& rng) override {
    if (sigma_ <= 0.0) return;
    const float std = float(sigma_ * clip_);
    for (auto& g : summed)
      for (float& v : g) v += gaussian(rng, 0.0f, std);
  }

  double clip_bound() const { return clip_; }
  double noise_multiplier() const { return sigma_; }
  double last_clipped_norm() const { return last_clipped_norm_; }

 private:
  double clip_, sigma_;
  double last_clipped_norm_ = 0.0;
};

/// Adversarial training: each batch is partially replaced with adversarial
/// examples crafted against the current network. `hybrid` cycles FGSM, PGD,
/// and a C&W-style margin attack per batch; otherwise FGSM only.
class AdvTrainHook final : public TrainingHook {
 public:
  AdvTrainHook(bool hybrid, float epsilon = 8.0f / 255.0f, float adv_fraction = 0.5f,
               std::size_t pgd_steps = 7)
      : hybrid_(hybrid), eps_(epsilon), fraction_(adv_fraction), pgd_steps_(pgd_steps) {}

  void transform_batch(Network& net, Tensor& images, std::vector<int>& labels,
                       std::size_t, Rng& rng) override {
    if (eps_ <= 0.0f || fraction_ <= 0.0f) return;
    const std::size_t n = images.dim(0);
    const std::size_t n_adv = std::max<std::size_t>(1, std::size_t(fraction_ * float(n)));
    std::vector<std::size_t> pick(n);
    std::iota(pick.begin(), pick.end(), 0);
    std::shuffle(pick.begin(), pick.end(), rng);
    pick.resize(n_adv);

    const std::size_t per = images.numel() / n;
    Tensor adv({n_adv, images.dim(1), images.dim(2), images.dim(3)});
    std::vector<int> adv_labels(n_adv);
    for (std::size_t i = 0; i < n_adv; ++i) {
      std::copy(images.data.begin() + pick[i] * per, images.data.begin() + (pick[i] + 1) * per,
                adv.data.begin() + i * per);
      adv_labels[i] = labels[pick[i]];
    }
    const int mode = hybrid_ ? int(batch_counter_++ % 3) : 0;
    Tensor crafted = mode == 0   ? fgsm(net, adv, adv_labels)
                     : mode == 1 ? pgd(net, adv, adv_labels)
                                 : cw(net, adv, adv_labels);
    for (std::size_t i = 0; i < n_adv; ++i)
      std::copy(crafted.data.begin() + i * per, crafted.data.begin() + (i + 1) * per,
                images.data.begin() + pick[i] * per);
  }

 private:
  Tensor loss_input_grad(Network& net, const Tensor& x, const std::vector<int>& y) {
    net.zero_grad();
    Tensor logits = net.forward(x, false);
    Tensor grad;
    softmax_ce_loss_grad(logits, y, grad);
    Tensor gx = net.backward(grad);
    net.zero_grad();  // discard the parameter gradients of the crafting pass
    return gx;
  }

  /// Gradient of the margin loss (z_true - max_other) at the logits.
  Tensor margin_input_grad(Network& net, const Tensor& x, const std::vector<int>& y) {
    net.zero_grad();
    Tensor logits = net.forward(x, false);
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    Tensor grad(logits.shape);
    for (std::size_t i = 0; i < n; ++i) {
      const float* row = logits.ptr() + i * k;
      std::size_t other = y[i] == 0 ? 1 : 0;
      for (std::size_t j = 0; j < k; ++j)
        if (int(j) != y[i] && row[j] > row[other]) other = j;
      grad[i * k + std::size_t(y[i])] = 1.0f;
      grad[i * k + other] = -1.0f;
    }
    Tensor gx = net.backward(grad);
    net.zero_grad();
    return gx;
  }

  Tensor fgsm(Network& net, const Tensor& x, const std::vector<int>& y) {
    Tensor g = loss_input_grad(net, x, y);
    Tensor out = x;
    for (std::size_t i = 0; i < out.numel(); ++i)
      out[i] += eps_ * (g[i] > 0.0f ? 1.0f : g[i] < 0.0f ? -1.0f : 0.0f);
    out.clamp_(0.0f, 1.0f);
    return out;
  }

  Tensor pgd(Network& net, const Tensor& x, const std::vector<int>& y) {
    const float alpha = eps_ / 4.0f;
    Tensor out = x;
    for (std::size_t step = 0; step < pgd_steps_; ++step) {
      Tensor g = loss_input_grad(net, out, y);
      for (std::size_t i = 0; i < out.numel(); ++i) {
        out[i] += alpha * (g[i] > 0.0f ? 1.0f : g[i] < 0.0f ? -1.0f : 0.0f);
        out[i] = std::clamp(out[i], x[i] - eps_, x[i] + eps_);
        out[i] = std::clamp(out[i], 0.0f, 1.0f);
      }
    }
    return out;
  }

  /// C&W-style crafting: gradient descent on the true-vs-runner-up logit
  /// margin within the epsilon ball.
  Tensor cw(Network& net, const Tensor& x, const std::vector<int>& y) {
    const float alpha = eps_ / 4.0f;
    Tensor out = x;
    for (std::size_t step = 0; step < pgd_steps_; ++step) {
      Tensor g = margin_input_grad(net, out, y);
      for (std::size_t i = 0; i < out.numel(); ++i) {
        out[i] -= alpha * (g[i] > 0.0f ? 1.0f : g[i] < 0.0f ? -1.0f : 0.0f);
        out[i] = std::clamp(out[i], x[i] - eps_, x[i] + eps_);
        out[i] = std::clamp(out[i], 0.0f, 1.0f);
      }
    }
    return out;
  }

  bool hybrid_;
  float eps_, fraction_;
  std::size_t pgd_steps_;
  std::size_t batch_counter_ = 0;
};

/// Adaptive dataset splitting: the clean seed pool (indices >= seed_begin,
/// i.e. the attacker's own appended data) always trains; suspect-release
/// samples join only when their loss under the current model is among the
/// lowest, with the admitted fraction ramping up over epochs (loss-guided
/// splitting).
class AsdHook final : public TrainingHook {
 public:
  AsdHook(std::size_t seed_pool_begin, double start_fraction = 0.2,
          double end_fraction = 0.8)
      : seed_begin_(seed_pool_begin), start_(start_fraction), end_(end_fraction) {}

  std::vector<std::size_t> select_samples(Network& net, const DatasetBundle& data,
                                          std::size_t epoch,
                                          std::vector<std::size_t> all) override {
    total_epochs_ = std::max(total_epochs_, epoch + 1);
    std::vector<std::size_t> release, pool;
    for (std::size_t i : all)
      (i < seed_begin_ ? release : pool).push_back(i);
    if (pool.empty())
      throw std::invalid_argument("asd: clean seed pool is empty");
    if (release.empty()) return pool;

    // per-sample loss of the release split under the current model
    std::vector<std::pair<float, std::size_t>> losses;
    losses.reserve(release.size());
    constexpr std::size_t batch = 128;
    for (std::size_t begin = 0; begin < release.size(); begin += batch) {
      const std::size_t end = std::min(release.size(), begin + batch);
      Tensor images;
      std::vector<int> labels;
      detail::assemble_batch(data, release, begin, end, images, labels);
      Tensor logits = net.forward(images, false);
      Tensor probs = softmax(logits);
      const std::size_t k = logits.dim(1);
      for (std::size_t i = 0; i < end - begin; ++i) {
        const float p = std::max(probs[i * k + std::size_t(labels[i])], 1e-12f);
        losses.push_back({-std::log(p), release[begin + i]});
      }
    }
    const double ramp = total_epochs_ <= 1
                            ? end_
                            : start_ + (end_ - start_) * double(epoch) / double(total_epochs_ - 1);
    const std::size_t keep = std::size_t(std::clamp(ramp, 0.0, 1.0) * double(losses.size()));
    std::partial_sort(losses.begin(), losses.begin() + std::ptrdiff_t(keep), losses.end());
    for (std::size_t i = 0; i < keep; ++i) pool.push_back(losses[i].second);
    return pool;
  }

 private:
  std::size_t seed_begin_;
  double start_, end_;
  std::size_t total_epochs_ = 0;
};

// --- dispatch -----------------------------------------------------------------

/// Result of installing a training-phase attack: the (possibly adjusted)
/// training config, an optional hook, data to append to the training set
/// (ASD's clean seed pool), and a parameter record for the results log.
struct TrainingAttackSetup {
  TrainConfig config;
  std::unique_ptr<TrainingHook> hook;
  DatasetBundle extra_train_data;
  nlohmann::json log = nlohmann::json::object();
};

/// True when the architecture computes cross-sample statistics, which makes
/// per-sample gradients ill-defined; DP-SGD rejects such architectures.
inline bool arch_uses_batch_statistics(const std::string& arch) {
  return arch == "resnet18" || arch == "mobilenet_v2";
}

/// `train_size` is the size of the (already pre-processed) training bundle
/// before any attack-supplied data is appended; DP-SGD needs it for the
/// sampling rate and ASD for the seed-pool offset.
inline TrainingAttackSetup training_attack(const AttackPlugin& plugin, TrainConfig cfg,
                                           const DatasetBundle* aux,
                                           std::size_t train_size) {
  if (plugin.phase != AttackPhase::training)
    throw std::invalid_argument("training_attack: plugin is not training phase");
  const nlohmann::json& p = plugin.params;
  TrainingAttackSetup setup;
  setup.log["attack_id"] = to_string(plugin.attack_id);
  switch (plugin.attack_id) {
    case AttackId::regularization: {
      cfg.weight_decay = p.value("weight_decay", 5e-4);
      setup.log["weight_decay"] = cfg.weight_decay;
      break;
    }
    case AttackId::dp_sgd: {
      if (arch_uses_batch_statistics(cfg.arch))
        throw std::invalid_argument(
            "dp_sgd: architecture with batch statistics; use a group-normalized or "
            "norm-free architecture");
      const double eps = p.value("epsilon", 32.0);
      const double delta = p.value("delta", 1e-5);
      const double clip = p.value("clip_bound", 1.0);
      const double q = double(cfg.batch_size) / double(train_size);
      const std::size_t steps =
          cfg.epochs * ((train_size + cfg.batch_size - 1) / cfg.batch_size);
      const double sigma = dp_noise_multiplier(eps, delta, std::min(q, 1.0), steps);
      setup.hook = std::make_unique<DpSgdHook>(clip, sigma);
      setup.log["epsilon"] = eps;
      setup.log["delta"] = delta;
      setup.log["clip_bound"] = clip;
      setup.log["noise_multiplier"] = sigma;
      setup.log["steps"] = steps;
      break;
    }
    case AttackId::adv_train_fgsm:
    case AttackId::adv_train_hybrid: {
      const float eps = p.value("epsilon", 8.0f / 255.0f);
      const float fraction = p.value("adv_fraction", 0.5f);
      setup.hook = std::make_unique<AdvTrainHook>(
          plugin.attack_id == AttackId::adv_train_hybrid, eps, fraction,
          p.value("pgd_steps", std::size_t(7)));
      setup.log["epsilon"] = eps;
      setup.log["adv_fraction"] = fraction;
      break;
    }
    case AttackId::asd: {
      if (aux == nullptr || aux->empty())
        throw std::invalid_argument("asd: attacker auxiliary data required as clean seed pool");
      setup.extra_train_data = *aux;
      setup.hook = std::make_unique<AsdHook>(train_size, p.value("start_fraction", 0.2),
                                             p.value("end_fraction", 0.8));
      setup.log["seed_pool_size"] = aux->size();
      break;
    }
    default:
      throw std::invalid_argument(std::string("not a training attack: ") +
                                  to_string(plugin.attack_id));
  }
  setup.config = cfg;
  return setup;
}

}  // namespace auditbench
