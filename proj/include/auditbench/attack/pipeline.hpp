#pragma once

#include "auditbench/attack/inference.hpp"
#include "auditbench/attack/plugin.hpp"
#include "auditbench/attack/preprocess.hpp"
#include "auditbench/attack/training.hpp"

namespace auditbench {

/// Applies the pipeline's pre-processing plugins in canonical order.
inline DatasetBundle apply_preprocessing(const HybridPipeline& pipe, DatasetBundle data,
                                         const DatasetBundle* aux, std::uint64_t seed) {
  for (const AttackPlugin& p : pipe.pre_processing)
    data = preprocess_attack(p, data, aux, derive_seed(seed, detail::fnv1a64(to_string(p.attack_id))));
  return data;
}

/// Installs the pipeline's training plugins into a config. Config-only
/// plugins (regularization) adjust the config; at most one plugin installs a
/// hook (enforced at composition).
inline TrainingAttackSetup prepare_training(const HybridPipeline& pipe, TrainConfig cfg,
                                            const DatasetBundle* aux,
                                            std::size_t train_size) {
  TrainingAttackSetup combined;
  combined.config = cfg;
  for (const AttackPlugin& p : pipe.training) {
    TrainingAttackSetup s = training_attack(p, combined.config, aux, train_size);
    combined.config = s.config;
    if (s.hook) combined.hook = std::move(s.hook);
    if (!s.extra_train_data.empty()) combined.extra_train_data = std::move(s.extra_train_data);
    combined.log[to_string(p.attack_id)] = s.log;
  }
  return combined;
}

/// Wraps a model handle with the pipeline's post-training plugins, innermost
/// first in canonical order.
inline ModelAccess apply_post_training(const HybridPipeline& pipe, ModelAccess model,
                                       const DatasetBundle* aux, std::uint64_t seed) {
  for (const AttackPlugin& p : pipe.post_training)
    model = inference_attack(p, model, aux, derive_seed(seed, detail::fnv1a64(to_string(p.attack_id))));
  return model;
}

/// The three evaluated hybrid compositions.
inline HybridPipeline make_hybrid_pipeline(const std::string& name) {
  if (name == "HA1")
    return compose_hybrid({make_attack_plugin(AttackId::autoencoder_denoise),
                           make_attack_plugin(AttackId::adv_train_hybrid),
                           make_attack_plugin(AttackId::reprogramming)});
  if (name == "HA2")
    return compose_hybrid({make_attack_plugin(AttackId::wavelet_filter),
                           make_attack_plugin(AttackId::dp_sgd),
                           make_attack_plugin(AttackId::randomized_smoothing)});
  if (name == "HA3")
    return compose_hybrid({make_attack_plugin(AttackId::wavelet_filter),
                           make_attack_plugin(AttackId::reprogramming)});
  throw std::invalid_argument("unknown hybrid pipeline: " + name);
}

}  // namespace auditbench
