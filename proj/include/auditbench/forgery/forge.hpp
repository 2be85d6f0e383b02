#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "auditbench/audit/common.hpp"
#include "auditbench/data/bundle.hpp"
#include "auditbench/nn/access.hpp"
#include "auditbench/nn/train.hpp"

namespace auditbench {

// --- generator and policy vocabulary -----------------------------------------

enum class ForgeryGenerator { fgsm, pgd, uap, tifgsm, vnifgsm };

inline const char* to_string(ForgeryGenerator g) {
  switch (g) {
    case ForgeryGenerator::fgsm: return "fgsm";
    case ForgeryGenerator::pgd: return "pgd";
    case ForgeryGenerator::uap: return "uap";
    case ForgeryGenerator::tifgsm: return "tifgsm";
    case ForgeryGenerator::vnifgsm: return "vnifgsm";
  }
  return "?";
}

inline ForgeryGenerator forgery_generator_from_string(const std::string& s) {
  for (ForgeryGenerator g : {ForgeryGenerator::fgsm, ForgeryGenerator::pgd,
                             ForgeryGenerator::uap, ForgeryGenerator::tifgsm,
                             ForgeryGenerator::vnifgsm})
    if (s == to_string(g)) return g;
  throw std::invalid_argument("unknown forgery generator: " + s);
}

inline std::vector<ForgeryGenerator> all_forgery_generators() {
  return {ForgeryGenerator::fgsm, ForgeryGenerator::pgd, ForgeryGenerator::uap,
          ForgeryGenerator::tifgsm, ForgeryGenerator::vnifgsm};
}

enum class TargetMode { targeted, untargeted, reverse_untargeted };

inline const char* to_string(TargetMode m) {
  switch (m) {
    case TargetMode::targeted: return "targeted";
    case TargetMode::untargeted: return "untargeted";
    case TargetMode::reverse_untargeted: return "reverse_untargeted";
  }
  return "?";
}

/// Optimization direction a forgery run pursues against one audit method.
/// targeted: push predictions toward a fixed target label. untargeted: push
/// predictions away from the model's current prediction. reverse_untargeted:
/// push the confidence of the model's current prediction up (the opposite
/// direction of an untargeted attack).
struct TargetPolicy {
  TargetMode mode = TargetMode::targeted;
  int target_label = 4;
};

/// Per-audit-method policy binding: the marker-verification methods that
/// check a fixed response label are attacked with targeted perturbations at
/// label 4; the misclassification-rate methods with untargeted ones; the
/// confidence-comparison methods (membership scores, and the sequential
/// margin audit whose published twin must out-score the hidden one) by
/// maximizing true-class confidence.
inline TargetPolicy target_policy_for(AuditMethodId method) {
  switch (method) {
    case AuditMethodId::dvbw:
    case AuditMethodId::zeromark:
    case AuditMethodId::dw:
      return {TargetMode::targeted, 4};
    case AuditMethodId::ubw_p:
    case AuditMethodId::ubw_c:
      return {TargetMode::untargeted, 0};
    case AuditMethodId::dua:
    case AuditMethodId::mia:
    case AuditMethodId::rapid:
    case AuditMethodId::di:
      return {TargetMode::reverse_untargeted, 0};
  }
  throw std::invalid_argument("bad method id");
}

// --- perturbation container ---------------------------------------------------

/// Per-sample l-infinity perturbations aligned with the forged bundle.
struct PerturbationSet {
  std::vector<Tensor> perturbations;
  float epsilon = 8.0f / 255.0f;
  ForgeryGenerator generator = ForgeryGenerator::pgd;

  /// max_i ||r_i||_inf over the whole set.
  float max_norm() const {
    float m = 0.0f;
    for (const Tensor& r : perturbations)
      for (float v : r.data) m = std::max(m, std::fabs(v));
    return m;
  }

  void validate() const {
    if (max_norm() > epsilon + 1e-6f)
      throw std::runtime_error("perturbation set violates epsilon bound");
  }
};

struct ForgeOptions {
  float epsilon = 8.0f / 255.0f;
  std::size_t steps = 40;          // iterative generators
  float step_size = 2.0f / 255.0f; // per-iterate step for pgd/tifgsm/vnifgsm
  float momentum_decay = 1.0f;     // mu for the momentum generators
  std::size_t ti_kernel_size = 7;  // gaussian smoothing kernel (odd)
  float ti_kernel_sigma = 3.0f;
  std::size_t vn_neighbors = 5;    // sampled points for variance tuning
  float vn_beta = 1.5f;            // neighborhood radius as multiple of epsilon
  std::uint64_t seed = 0;
  /// Called after every iterate with (original, current); tests install a
  /// probe here to assert the projection invariant on intermediate iterates.
  std::function<void(const Tensor&, const Tensor&)> iterate_probe;

  nlohmann::json to_json() const {
    return {{"epsilon", epsilon},       {"steps", steps},
            {"step_size", step_size},   {"momentum_decay", momentum_decay},
            {"ti_kernel_size", ti_kernel_size}, {"ti_kernel_sigma", ti_kernel_sigma},
            {"vn_neighbors", vn_neighbors},     {"vn_beta", vn_beta}};
  }
};

namespace detail {

/// Projects onto the epsilon ball around x0 intersected with [0,1].
inline void project_forgery(Tensor& x, const Tensor& x0, float eps) {
  for (std::size_t i = 0; i < x.numel(); ++i)
    x[i] = std::clamp(std::clamp(x[i], x0[i] - eps, x0[i] + eps), 0.0f, 1.0f);
}

/// Loss label and ascent/descent direction for a policy: +1 ascends the
/// cross-entropy at the label, -1 descends it. Targeted attacks use the fixed
/// target label; the untargeted and reverse modes use the anchor the caller
/// resolved (the model's own prediction), since the forged claim's labels
/// need not match what the model believes.
inline std::pair<int, float> policy_objective(const TargetPolicy& policy, int anchor_label) {
  switch (policy.mode) {
    case TargetMode::targeted: return {policy.target_label, -1.0f};
    case TargetMode::untargeted: return {anchor_label, +1.0f};
    case TargetMode::reverse_untargeted: return {anchor_label, -1.0f};
  }
  throw std::invalid_argument("bad target mode");
}

/// Runner-up class of the current logits, excluding the anchor. The reverse
/// (confidence-boost) mode ascends the cross-entropy at this class rather
/// than descending it at the anchor: once the anchor probability saturates
/// the anchor's own loss gradient underflows in float, while the runner-up
/// gradient stays proportional to the top-margin direction and keeps growing
/// the raw logit gap the margin audits score.
inline int runner_up_class(const ModelAccess& model, const Tensor& x, int anchor) {
  const std::vector<float> z = model.predict_logits(x);
  int best = anchor == 0 ? 1 : 0;
  for (int j = 0; j < int(z.size()); ++j)
    if (j != anchor && z[std::size_t(j)] > z[std::size_t(best)]) best = j;
  return best;
}

/// Cross-entropy input gradient via the model handle, rejecting non-finite
/// values (the forge operations promise finite losses).
inline Tensor forgery_gradient(const ModelAccess& model, const Tensor& x, int label) {
  Tensor g = model.gradient(x, label);
  for (float v : g.data)
    if (!std::isfinite(v)) throw std::runtime_error("forgery: non-finite loss gradient");
  return g;
}

inline float l1_norm(const Tensor& t) {
  float s = 0.0f;
  for (float v : t.data) s += std::fabs(v);
  return std::max(s, 1e-12f);
}

/// Depthwise spatial convolution of a C x H x W tensor with a normalized
/// gaussian kernel (zero padding); used to make gradients translation
/// invariant before the sign step.
inline Tensor smooth_gradient(const Tensor& g, std::size_t ksize, float sigma) {
  if (ksize <= 1) return g;
  const int r = int(ksize / 2);
  std::vector<float> k1(ksize);
  float sum = 0.0f;
  for (std::size_t i = 0; i < ksize; ++i) {
    const float d = float(int(i) - r);
    k1[i] = std::exp(-d * d / (2.0f * sigma * sigma));
    sum += k1[i];
  }
  for (float& v : k1) v /= sum;
  const std::size_t c = g.dim(0), h = g.dim(1), w = g.dim(2);
  Tensor tmp(g.shape), out(g.shape);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        float acc = 0.0f;
        for (int t = -r; t <= r; ++t) {
          const int xx = int(x) + t;
          if (xx >= 0 && xx < int(w))
            acc += k1[std::size_t(t + r)] * g[(ch * h + y) * w + std::size_t(xx)];
        }
        tmp[(ch * h + y) * w + x] = acc;
      }
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        float acc = 0.0f;
        for (int t = -r; t <= r; ++t) {
          const int yy = int(y) + t;
          if (yy >= 0 && yy < int(h))
            acc += k1[std::size_t(t + r)] * tmp[(ch * h + std::size_t(yy)) * w + x];
        }
        out[(ch * h + y) * w + x] = acc;
      }
  return out;
}

/// One-sample forgery with the chosen generator. Every iterate is projected
/// onto the epsilon ball and [0,1] before the next gradient query.
inline Tensor forge_sample(ForgeryGenerator gen, const ModelAccess& model,
                           const Tensor& x0, const TargetPolicy& policy, int true_label,
                           const ForgeOptions& opt, Rng& rng) {
  // Untargeted forgery pushes away from whatever the model currently
  // predicts, and the confidence boost pushes deeper into it; the claim's own
  // label may disagree with the model, and anchoring on the claim label would
  // first have to flip the prediction, lowering confidence instead of
  // raising it.
  const int anchor = policy.mode == TargetMode::targeted ? true_label
                                                         : model.predict_label(x0);
  const bool reverse = policy.mode == TargetMode::reverse_untargeted;
  const auto [fixed_label, fixed_direction] = policy_objective(policy, anchor);
  // Reverse mode ascends the runner-up loss (see runner_up_class); the other
  // modes keep their fixed objective label.
  const float direction = reverse ? +1.0f : fixed_direction;
  const auto grad_at = [&](const Tensor& xq) {
    const int label = reverse ? runner_up_class(model, xq, anchor) : fixed_label;
    return forgery_gradient(model, xq, label);
  };
  const float eps = opt.epsilon;
  Tensor x = x0;
  const auto probe = [&](const Tensor& cur) {
    if (opt.iterate_probe) opt.iterate_probe(x0, cur);
  };
  if (eps <= 0.0f) return x;

  if (gen == ForgeryGenerator::fgsm) {
    Tensor g = grad_at(x);
    for (std::size_t i = 0; i < x.numel(); ++i)
      x[i] += direction * eps * (g[i] > 0.0f ? 1.0f : g[i] < 0.0f ? -1.0f : 0.0f);
    project_forgery(x, x0, eps);
    probe(x);
    return x;
  }

  Tensor momentum(x0.shape);  // zero-initialized accumulated direction
  Tensor variance(x0.shape);  // vnifgsm gradient-variance correction
  for (std::size_t step = 0; step < opt.steps; ++step) {
    Tensor g;
    switch (gen) {
      case ForgeryGenerator::pgd: {
        g = grad_at(x);
        break;
      }
      case ForgeryGenerator::tifgsm: {
        Tensor raw = smooth_gradient(grad_at(x),
                                     opt.ti_kernel_size, opt.ti_kernel_sigma);
        const float n1 = l1_norm(raw);
        g = momentum;
        for (std::size_t i = 0; i < g.numel(); ++i)
          g[i] = opt.momentum_decay * g[i] + raw[i] / n1;
        momentum = g;
        break;
      }
      case ForgeryGenerator::vnifgsm: {
        // Nesterov lookahead, then variance-tuned gradient.
        Tensor nes = x;
        for (std::size_t i = 0; i < nes.numel(); ++i)
          nes[i] += direction * opt.step_size * opt.momentum_decay * momentum[i];
        nes.clamp_(0.0f, 1.0f);
        Tensor raw = grad_at(nes);
        Tensor tuned(raw.shape);
        for (std::size_t i = 0; i < tuned.numel(); ++i) tuned[i] = raw[i] + variance[i];
        // refresh the variance term from gradients at sampled neighbors
        Tensor acc(raw.shape);
        for (std::size_t s = 0; s < opt.vn_neighbors; ++s) {
          Tensor nb = x;
          for (std::size_t i = 0; i < nb.numel(); ++i)
            nb[i] = std::clamp(nb[i] + uniform(rng, -opt.vn_beta * eps, opt.vn_beta * eps),
                               0.0f, 1.0f);
          Tensor gn = grad_at(nb);
          for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] += gn[i];
        }
        for (std::size_t i = 0; i < variance.numel(); ++i)
          variance[i] = acc[i] / float(opt.vn_neighbors) - raw[i];
        const float n1 = l1_norm(tuned);
        g = momentum;
        for (std::size_t i = 0; i < g.numel(); ++i)
          g[i] = opt.momentum_decay * g[i] + tuned[i] / n1;
        momentum = g;
        break;
      }
      default:
        throw std::invalid_argument("forge_sample: not a per-sample generator");
    }
    for (std::size_t i = 0; i < x.numel(); ++i)
      x[i] += direction * opt.step_size *
              (g[i] > 0.0f ? 1.0f : g[i] < 0.0f ? -1.0f : 0.0f);
    project_forgery(x, x0, eps);
    probe(x);
  }
  return x;
}

}  // namespace detail

// --- per-sample forging ---------------------------------------------------------

struct ForgeResult {
  DatasetBundle forged;
  PerturbationSet perturbations;
};

/// Crafts per-sample perturbations against a white-box model handle so the
/// forged bundle realizes the policy objective. Labels are never changed;
/// every intermediate iterate satisfies the epsilon ball and [0,1] clipping.
inline ForgeResult forge(ForgeryGenerator generator, const ModelAccess& model,
                         const DatasetBundle& data, const TargetPolicy& policy,
                         const ForgeOptions& options = {}) {
  if (generator == ForgeryGenerator::uap)
    throw std::invalid_argument("forge: uap builds one shared perturbation; use forge_universal");
  if (model.level() != AccessLevel::white_box)
    throw std::runtime_error("forge: white-box gradient access required");
  if (!model.classifier() || !model.classifier()->supports_gradient())
    throw std::runtime_error("forge: gradient unavailable for this classifier");
  if (options.epsilon < 0.0f) throw std::invalid_argument("forge: negative epsilon");

  ForgeResult out;
  out.forged = data;
  out.forged.provenance = data.provenance + "/forged(" + to_string(generator) + ")";
  out.perturbations.epsilon = options.epsilon;
  out.perturbations.generator = generator;
  out.perturbations.perturbations.reserve(data.size());
  // Queries serialize on the classifier's internal mutex, so per-sample
  // forging runs sequentially; the loop is embarrassingly parallel if a
  // reentrant query surface ever lands.
  for (std::size_t i = 0; i < data.size(); ++i) {
    Rng rng = make_rng(derive_seed(options.seed, 0xf0e6e0ULL + i));
    const Sample& s = data.samples[i];
    Tensor forged = detail::forge_sample(generator, model, s.image, policy, s.label,
                                         options, rng);
    Tensor r(forged.shape);
    for (std::size_t k = 0; k < r.numel(); ++k) r[k] = forged[k] - s.image[k];
    out.perturbations.perturbations.push_back(std::move(r));
    out.forged.samples[i].image = std::move(forged);
  }
  out.perturbations.validate();
  return out;
}

// --- universal perturbation -----------------------------------------------------

struct UniversalForgeOptions {
  ForgeOptions base;              // epsilon and the inner per-sample push settings
  std::size_t max_epochs = 10;
  std::size_t inner_steps = 10;   // per-sample minimal-push iterations
  double fooling_rate_floor = 0.6;
};

struct UniversalForgeResult {
  DatasetBundle forged;
  Tensor perturbation;        // the single shared r
  double fooling_rate = 0.0;  // fraction of samples meeting the policy goal
  bool reached_floor = false;
};

/// Builds one shared perturbation by the classic iterative aggregation: sweep
/// the samples, and for each one the shared perturbation does not yet fool,
/// run a short projected gradient push and fold the extra displacement into
/// the shared vector. Stops when the fooling rate clears the floor or the
/// epoch budget runs out (returned with reached_floor=false in that case).
inline UniversalForgeResult forge_universal(const ModelAccess& model,
                                            const DatasetBundle& data,
                                            const TargetPolicy& policy,
                                            const UniversalForgeOptions& options = {}) {
  if (model.level() != AccessLevel::white_box)
    throw std::runtime_error("forge_universal: white-box gradient access required");
  const float eps = options.base.epsilon;

  UniversalForgeResult out;
  out.perturbation = Tensor(data.samples.at(0).image.shape);

  const auto apply = [&](const Tensor& x0) {
    Tensor x = x0;
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] += out.perturbation[i];
    x.clamp_(0.0f, 1.0f);
    return x;
  };
  // Per-sample success under the policy.
  const auto fooled = [&](const Sample& s) {
    const Tensor x = apply(s.image);
    switch (policy.mode) {
      case TargetMode::targeted: return model.predict_label(x) == policy.target_label;
      case TargetMode::untargeted:
        // anchored on the model's clean prediction, not the claim label
        return model.predict_label(x) != model.predict_label(s.image);
      case TargetMode::reverse_untargeted: {
        // success: the clean prediction is kept and its confidence grew
        const std::vector<float> p0 = model.predict_probs(s.image);
        const std::size_t anchor =
            std::size_t(std::max_element(p0.begin(), p0.end()) - p0.begin());
        const std::vector<float> p = model.predict_probs(x);
        return model.predict_label(x) == int(anchor) && p[anchor] >= p0[anchor];
      }
    }
    return false;
  };
  const auto fooling_rate = [&] {
    std::size_t hit = 0;
    for (const Sample& s : data.samples) hit += fooled(s);
    return double(hit) / double(data.size());
  };

  out.fooling_rate = fooling_rate();
  if (eps > 0.0f) {
    ForgeOptions inner = options.base;
    inner.steps = options.inner_steps;
    inner.step_size = std::max(eps / float(options.inner_steps), 1.0f / 255.0f);
    for (std::size_t epoch = 0;
         epoch < options.max_epochs && out.fooling_rate < options.fooling_rate_floor;
         ++epoch) {
      Rng rng = make_rng(derive_seed(options.base.seed, 0x0a90000ULL + epoch));
      for (const Sample& s : data.samples) {
        if (fooled(s)) continue;
        const Tensor x = apply(s.image);
        Tensor pushed =
            detail::forge_sample(ForgeryGenerator::pgd, model, x, policy, s.label,
                                 inner, rng);
        // fold the extra displacement into the shared perturbation, then
        // project back onto the shared epsilon ball
        for (std::size_t i = 0; i < out.perturbation.numel(); ++i)
          out.perturbation[i] =
              std::clamp(out.perturbation[i] + (pushed[i] - x[i]), -eps, eps);
        if (options.base.iterate_probe) {
          Tensor zero(out.perturbation.shape);
          Tensor shifted(out.perturbation.shape);
          for (std::size_t i = 0; i < shifted.numel(); ++i)
            shifted[i] = std::clamp(out.perturbation[i], -eps, eps);
          options.base.iterate_probe(zero, shifted);
        }
      }
      out.fooling_rate = fooling_rate();
    }
  }
  out.reached_floor = out.fooling_rate >= options.fooling_rate_floor;

  out.forged = data;
  out.forged.provenance = data.provenance + "/forged(uap)";
  for (Sample& s : out.forged.samples) s.image = apply(s.image);
  return out;
}

// --- black-box substitute distillation -------------------------------------------

struct SubstituteOptions {
  TrainConfig train;            // arch defaults below override this arch field
  std::string arch = "mobilenet_v2";
  double holdout_fraction = 0.2;
  double agreement_floor = 0.7;  // warning threshold, result still returned
};

struct SubstituteResult {
  ModelAccess substitute;  // white-box handle over the distilled network
  double agreement = 0.0;  // label agreement with the target on held-out data
  bool above_floor = false;
};

/// Distills a white-box substitute of a query-only target model: the
/// substitute is trained to match the target's output distribution (soft
/// labels at logits access, one-hot predictions at label-only) on the
/// adversary's auxiliary data; agreement is measured on a held-out slice.
inline SubstituteResult distill_substitute(const ModelAccess& target,
                                           const DatasetBundle& aux,
                                           const SubstituteOptions& options = {}) {
  if (aux.empty()) throw std::invalid_argument("distill_substitute: empty auxiliary data");
  const int k = target.class_count();
  const std::size_t n = aux.size();
  const std::size_t holdout =
      std::min(n - 1, std::size_t(options.holdout_fraction * double(n)));
  const std::size_t train_n = n - holdout;

  // soft targets from the query surface
  std::vector<std::vector<float>> soft(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (target.level() == AccessLevel::label_only) {
      soft[i].assign(std::size_t(k), 0.0f);
      soft[i][std::size_t(target.predict_label(aux.samples[i].image))] = 1.0f;
    } else {
      soft[i] = target.predict_probs(aux.samples[i].image);
    }
  }

  TrainConfig cfg = options.train;
  cfg.arch = options.arch;
  const Tensor& first = aux.samples[0].image;
  auto net = std::shared_ptr<Network>(make_network(
      cfg.arch, k, {first.dim(0), first.dim(1), first.dim(2)}, cfg.width_mult));
  net->init(derive_seed(cfg.seed, 0xd15717ULL));

  // SGD with momentum on the soft-label cross entropy: grad at the logits is
  // (softmax - soft_target) / batch.
  std::vector<Param*> params = net->params();
  std::vector<std::vector<float>> velocity(params.size());
  for (std::size_t i = 0; i < params.size(); ++i)
    velocity[i].assign(params[i]->value.numel(), 0.0f);
  Rng rng = make_rng(derive_seed(cfg.seed, 0xd1571112ULL));
  std::vector<std::size_t> idx(train_n);
  std::iota(idx.begin(), idx.end(), 0);
  const std::size_t per = first.numel();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const double lr = cfg.cosine_decay
        ? cfg.learning_rate * 0.5 * (1.0 + std::cos(M_PI * double(epoch) / double(cfg.epochs)))
        : cfg.learning_rate;
    for (std::size_t begin = 0; begin < idx.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(idx.size(), begin + cfg.batch_size);
      const std::size_t bn = end - begin;
      Tensor images({bn, first.dim(0), first.dim(1), first.dim(2)});
      for (std::size_t i = 0; i < bn; ++i)
        std::copy(aux.samples[idx[begin + i]].image.data.begin(),
                  aux.samples[idx[begin + i]].image.data.end(),
                  images.data.begin() + i * per);
      net->zero_grad();
      Tensor logits = net->forward(images, true);
      Tensor probs = softmax(logits);
      Tensor grad(logits.shape);
      for (std::size_t i = 0; i < bn; ++i)
        for (std::size_t j = 0; j < std::size_t(k); ++j)
          grad[i * std::size_t(k) + j] =
              (probs[i * std::size_t(k) + j] - soft[idx[begin + i]][j]) / float(bn);
      for (float v : logits.data)
        if (!std::isfinite(v)) throw TrainingDivergence(epoch, 0, "substitute diverged");
      net->backward(grad);
      for (std::size_t j = 0; j < params.size(); ++j) {
        Param& p = *params[j];
        std::vector<float>& v = velocity[j];
        for (std::size_t c = 0; c < p.value.numel(); ++c) {
          const float g = p.grad[c] + float(cfg.weight_decay) * p.value[c];
          v[c] = float(cfg.momentum) * v[c] + g;
          p.value[c] -= float(lr) * v[c];
        }
      }
    }
  }

  SubstituteResult out;
  out.substitute = make_white_box(net);
  std::size_t agree = 0;
  const std::size_t eval_begin = holdout > 0 ? train_n : 0;
  const std::size_t eval_n = holdout > 0 ? holdout : n;
  for (std::size_t i = eval_begin; i < eval_begin + eval_n; ++i) {
    const int target_label = int(std::max_element(soft[i].begin(), soft[i].end()) -
                                 soft[i].begin());
    agree += out.substitute.predict_label(aux.samples[i].image) == target_label;
  }
  out.agreement = double(agree) / double(eval_n);
  out.above_floor = out.agreement >= options.agreement_floor;
  return out;
}

// --- end-to-end campaign ----------------------------------------------------------

struct ForgeryCampaignConfig {
  ForgeryGenerator generator = ForgeryGenerator::pgd;
  bool black_box = false;  // true: forge against a distilled substitute
  ForgeOptions options;
  UniversalForgeOptions universal;  // used when generator == uap
  SubstituteOptions substitute;     // used when black_box
};

struct ForgeryCampaignResult {
  AuditVerdict verdict;
  DatasetBundle forged_claim;
  double substitute_agreement = std::numeric_limits<double>::quiet_NaN();
  nlohmann::json log;  // attack_type=forgery record for the results schema
};

/// Full forgery scenario against one audit method: the adversary plays data
/// owner, runs the method's prepare on their own (never-trained) data, forges
/// the prepared claim against the independent model — directly at white-box
/// access, or through a distilled substitute at black-box — and submits it to
/// the audit. A "trained" verdict means the forgery succeeded.
inline ForgeryCampaignResult run_forgery_campaign(
    AuditMethod& method, std::shared_ptr<Network> independent_model,
    const DatasetBundle& attacker_data, const AuditContext& ctx,
    const ForgeryCampaignConfig& cfg) {
  if (!independent_model) throw std::invalid_argument("campaign: null independent model");

  const TargetPolicy policy = target_policy_for(method.id());
  const DatasetBundle claim = method.prepare(attacker_data, ctx);
  const ModelAccess white = make_white_box(independent_model);

  ForgeryCampaignResult out;
  ModelAccess attack_surface = white;
  if (cfg.black_box) {
    const AccessLevel exposed = audit_method_spec(method.id()).required_access ==
                                        AccessLevel::label_only
                                    ? AccessLevel::label_only
                                    : AccessLevel::logits;
    SubstituteResult sub = distill_substitute(white.restrict(exposed), attacker_data,
                                              cfg.substitute);
    out.substitute_agreement = sub.agreement;
    attack_surface = sub.substitute;
  }

  if (cfg.generator == ForgeryGenerator::uap) {
    UniversalForgeResult u = forge_universal(attack_surface, claim, policy, cfg.universal);
    out.forged_claim = std::move(u.forged);
    out.log["fooling_rate"] = u.fooling_rate;
    out.log["reached_floor"] = u.reached_floor;
  } else {
    ForgeResult f = forge(cfg.generator, attack_surface, claim, policy, cfg.options);
    out.forged_claim = std::move(f.forged);
    out.log["max_perturbation_norm"] = f.perturbations.max_norm();
  }

  const ModelAccess audited =
      white.restrict(audit_method_spec(method.id()).required_access);
  out.verdict = method.audit(audited, out.forged_claim, ctx);
  out.log["attack_type"] = "forgery";
  out.log["generator"] = to_string(cfg.generator);
  out.log["access"] = cfg.black_box ? "black" : "white";
  out.log["policy"] = to_string(policy.mode);
  out.log["epsilon"] = cfg.options.epsilon;
  if (!std::isnan(out.substitute_agreement))
    out.log["substitute_agreement"] = out.substitute_agreement;
  return out;
}

}  // namespace auditbench
