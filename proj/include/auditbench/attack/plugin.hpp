#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace auditbench {

/// The evasion attacks, grouped by pipeline phase. Adversarial training is
/// registered once per evaluated variant (FGSM-only and the FGSM/PGD/C&W
/// hybrid schedule).
enum class AttackId {
  // pre-processing
  augmentation,
  synthesis,
  gaussian_filter,
  median_filter,
  wavelet_filter,
  autoencoder_denoise,
  // training
  regularization,
  dp_sgd,
  adv_train_fgsm,
  adv_train_hybrid,
  asd,
  // post-training
  noisy_output,
  noisy_feature,
  randomized_smoothing,
  reprogramming,
  scale_up,
  od_knn,
  od_svm,
};

enum class AttackPhase { pre_processing, training, post_training };
enum class AttackStrategy { decoupling, removal, detection };

inline const char* to_string(AttackId a) {
  switch (a) {
    case AttackId::augmentation: return "augmentation";
    case AttackId::synthesis: return "synthesis";
    case AttackId::gaussian_filter: return "gaussian_filter";
    case AttackId::median_filter: return "median_filter";
    case AttackId::wavelet_filter: return "wavelet_filter";
    case AttackId::autoencoder_denoise: return "autoencoder_denoise";
    case AttackId::regularization: return "regularization";
    case AttackId::dp_sgd: return "dp_sgd";
    case AttackId::adv_train_fgsm: return "adv_train_fgsm";
    case AttackId::adv_train_hybrid: return "adv_train_hybrid";
    case AttackId::asd: return "asd";
    case AttackId::noisy_output: return "noisy_output";
    case AttackId::noisy_feature: return "noisy_feature";
    case AttackId::randomized_smoothing: return "randomized_smoothing";
    case AttackId::reprogramming: return "reprogramming";
    case AttackId::scale_up: return "scale_up";
    case AttackId::od_knn: return "od_knn";
    case AttackId::od_svm: return "od_svm";
  }
  return "?";
}

inline const char* to_string(AttackPhase p) {
  switch (p) {
    case AttackPhase::pre_processing: return "pre_processing";
    case AttackPhase::training: return "training";
    case AttackPhase::post_training: return "post_training";
  }
  return "?";
}

inline const char* to_string(AttackStrategy s) {
  switch (s) {
    case AttackStrategy::decoupling: return "decoupling";
    case AttackStrategy::removal: return "removal";
    case AttackStrategy::detection: return "detection";
  }
  return "?";
}

inline std::vector<AttackId> all_attack_ids() {
  return {AttackId::augmentation,    AttackId::synthesis,
          AttackId::gaussian_filter, AttackId::median_filter,
          AttackId::wavelet_filter,  AttackId::autoencoder_denoise,
          AttackId::regularization,  AttackId::dp_sgd,
          AttackId::adv_train_fgsm,  AttackId::adv_train_hybrid,
          AttackId::asd,             AttackId::noisy_output,
          AttackId::noisy_feature,   AttackId::randomized_smoothing,
          AttackId::reprogramming,   AttackId::scale_up,
          AttackId::od_knn,          AttackId::od_svm};
}

inline AttackId attack_id_from_string(const std::string& s) {
  for (AttackId a : all_attack_ids())
    if (s == to_string(a)) return a;
  throw std::invalid_argument("unknown attack id: " + s);
}

/// Taxonomy row of one attack: its pipeline phase, evasion strategy, and
/// whether it consumes the attacker's auxiliary data split.
struct AttackSpec {
  AttackId id;
  AttackPhase phase;
  AttackStrategy strategy;
  bool needs_aux_data;
};

inline AttackSpec attack_spec(AttackId id) {
  using P = AttackPhase;
  using S = AttackStrategy;
  switch (id) {
    case AttackId::augmentation: return {id, P::pre_processing, S::decoupling, false};
    case AttackId::synthesis: return {id, P::pre_processing, S::decoupling, true};
    case AttackId::gaussian_filter: return {id, P::pre_processing, S::removal, false};
    case AttackId::median_filter: return {id, P::pre_processing, S::removal, false};
    case AttackId::wavelet_filter: return {id, P::pre_processing, S::removal, false};
    case AttackId::autoencoder_denoise: return {id, P::pre_processing, S::removal, true};
    case AttackId::regularization: return {id, P::training, S::decoupling, false};
    case AttackId::dp_sgd: return {id, P::training, S::decoupling, false};
    case AttackId::adv_train_fgsm: return {id, P::training, S::removal, false};
    case AttackId::adv_train_hybrid: return {id, P::training, S::removal, false};
    case AttackId::asd: return {id, P::training, S::removal, true};
    case AttackId::noisy_output: return {id, P::post_training, S::decoupling, false};
    case AttackId::noisy_feature: return {id, P::post_training, S::decoupling, false};
    case AttackId::randomized_smoothing: return {id, P::post_training, S::removal, false};
    case AttackId::reprogramming: return {id, P::post_training, S::removal, true};
    case AttackId::scale_up: return {id, P::post_training, S::detection, false};
    case AttackId::od_knn: return {id, P::post_training, S::detection, true};
    case AttackId::od_svm: return {id, P::post_training, S::detection, true};
  }
  throw std::invalid_argument("bad attack id");
}

/// One configured attack instance. phase/strategy/needs_aux_data are copied
/// from the static taxonomy; params hold the attack-specific knobs and are
/// logged verbatim into result records.
struct AttackPlugin {
  AttackId attack_id = AttackId::augmentation;
  AttackPhase phase = AttackPhase::pre_processing;
  AttackStrategy strategy = AttackStrategy::decoupling;
  nlohmann::json params = nlohmann::json::object();
  bool needs_aux_data = false;

  nlohmann::json to_json() const {
    return {{"attack_id", to_string(attack_id)},
            {"phase", to_string(phase)},
            {"strategy", to_string(strategy)},
            {"params", params}};
  }
};

inline AttackPlugin make_attack_plugin(AttackId id,
                                       nlohmann::json params = nlohmann::json::object()) {
  const AttackSpec s = attack_spec(id);
  AttackPlugin p;
  p.attack_id = id;
  p.phase = s.phase;
  p.strategy = s.strategy;
  p.needs_aux_data = s.needs_aux_data;
  p.params = std::move(params);
  return p;
}

inline AttackPlugin make_attack_plugin(const std::string& id,
                                       nlohmann::json params = nlohmann::json::object()) {
  return make_attack_plugin(attack_id_from_string(id), std::move(params));
}

/// True for training-phase attacks that rewrite the optimizer loop itself
/// (as opposed to only adjusting hyper-parameters); at most one of these can
/// occupy a pipeline.
inline bool rewrites_training_loop(AttackId id) {
  return id == AttackId::dp_sgd || id == AttackId::adv_train_fgsm ||
         id == AttackId::adv_train_hybrid || id == AttackId::asd;
}

namespace detail {

inline std::uint64_t fnv1a64(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

/// Ordered attack composition, canonicalized by phase. The digest identifies
/// the pipeline independent of the order plugins were listed within a phase.
struct HybridPipeline {
  std::vector<AttackPlugin> pre_processing;
  std::vector<AttackPlugin> training;
  std::vector<AttackPlugin> post_training;

  bool empty() const {
    return pre_processing.empty() && training.empty() && post_training.empty();
  }

  std::vector<const AttackPlugin*> all() const {
    std::vector<const AttackPlugin*> out;
    for (const auto& p : pre_processing) out.push_back(&p);
    for (const auto& p : training) out.push_back(&p);
    for (const auto& p : post_training) out.push_back(&p);
    return out;
  }

  bool needs_aux_data() const {
    for (const AttackPlugin* p : all())
      if (p->needs_aux_data) return true;
    return false;
  }

  /// FNV-1a hash over the canonical (phase-sorted) plugin listing; params are
  /// serialized with sorted keys so semantically equal configs collide.
  std::string digest() const {
    std::string canon;
    for (const AttackPlugin* p : all())
      canon += std::string(to_string(p->phase)) + ":" + to_string(p->attack_id) + ":" +
               p->params.dump() + ";";
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(detail::fnv1a64(canon)));
    return buf;
  }

  nlohmann::json to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const AttackPlugin* p : all()) arr.push_back(p->to_json());
    return {{"plugins", arr}, {"digest", digest()}};
  }
};

/// Groups plugins into phase slots with canonical in-phase ordering (by id,
/// then by parameter record). Rejects pipelines with more than one
/// training-loop rewrite; the empty list yields the identity pipeline.
inline HybridPipeline compose_hybrid(std::vector<AttackPlugin> plugins) {
  HybridPipeline pipe;
  std::size_t loop_rewrites = 0;
  for (AttackPlugin& p : plugins) {
    const AttackSpec s = attack_spec(p.attack_id);
    if (p.phase != s.phase || p.strategy != s.strategy)
      throw std::invalid_argument(std::string("plugin taxonomy mismatch for ") +
                                  to_string(p.attack_id));
    switch (p.phase) {
      case AttackPhase::pre_processing: pipe.pre_processing.push_back(std::move(p)); break;
      case AttackPhase::training:
        if (rewrites_training_loop(p.attack_id) && ++loop_rewrites > 1)
          throw std::invalid_argument("conflicting training-loop rewrites in pipeline");
        pipe.training.push_back(std::move(p));
        break;
      case AttackPhase::post_training: pipe.post_training.push_back(std::move(p)); break;
    }
  }
  auto canon = [](std::vector<AttackPlugin>& v) {
    std::sort(v.begin(), v.end(), [](const AttackPlugin& a, const AttackPlugin& b) {
      const std::string ka = std::string(to_string(a.attack_id)) + a.params.dump();
      const std::string kb = std::string(to_string(b.attack_id)) + b.params.dump();
      return ka < kb;
    });
  };
  canon(pipe.pre_processing);
  canon(pipe.training);
  canon(pipe.post_training);
  return pipe;
}

}  // namespace auditbench
