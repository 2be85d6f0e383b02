// Evasion-attack layer: taxonomy and hybrid composition, the differential-
// privacy accountant and clipping hook, input filters, and the inference-time
// wrapper identities.
#include <gtest/gtest.h>

#include "auditbench/attack/inference.hpp"
#include "auditbench/attack/preprocess.hpp"
#include "auditbench/attack/training.hpp"
#include "auditbench/nn/train.hpp"

using namespace auditbench;

namespace {

DatasetBundle tiny_corpus(std::uint64_t seed = 31, std::size_t n = 48) {
  return make_synthetic_bundle(3, n, 1, 8, 8, seed, 0.15f, 0.3f);
}

std::shared_ptr<Network> tiny_trained_net(const DatasetBundle& data) {
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 16;
  cfg.learning_rate = 0.05;
  cfg.seed = 2;
  return train_network(data, cfg);
}

}  // namespace

TEST(Taxonomy, EighteenAttacksWithStableStringsAndPhases) {
  const std::vector<AttackId> ids = all_attack_ids();
  EXPECT_EQ(ids.size(), 18u);
  std::size_t pre = 0, train = 0, post = 0;
  for (AttackId id : ids) {
    const AttackSpec s = attack_spec(id);
    EXPECT_EQ(s.id, id);
    EXPECT_EQ(attack_id_from_string(to_string(id)), id);  // string round-trip
    switch (s.phase) {
      case AttackPhase::pre_processing: ++pre; break;
      case AttackPhase::training: ++train; break;
      case AttackPhase::post_training: ++post; break;
    }
  }
  EXPECT_EQ(pre, 6u);
  EXPECT_EQ(train, 5u);
  EXPECT_EQ(post, 7u);
  EXPECT_THROW(attack_id_from_string("no_such_attack"), std::invalid_argument);
}

TEST(HybridPipeline, CanonicalizationMakesDigestOrderFree) {
  AttackPlugin a = make_attack_plugin(AttackId::wavelet_filter, {{"threshold", 0.25}});
  AttackPlugin b = make_attack_plugin(AttackId::dp_sgd, {{"epsilon", 32.0}});
  AttackPlugin c = make_attack_plugin(AttackId::randomized_smoothing);
  const HybridPipeline p1 = compose_hybrid({a, b, c});
  const HybridPipeline p2 = compose_hybrid({c, b, a});
  EXPECT_EQ(p1.digest(), p2.digest());
  EXPECT_EQ(p1.pre_processing.size(), 1u);
  EXPECT_EQ(p1.training.size(), 1u);
  EXPECT_EQ(p1.post_training.size(), 1u);
  EXPECT_TRUE(p1.needs_aux_data() == false);

  // different params -> different digest
  AttackPlugin a2 = make_attack_plugin(AttackId::wavelet_filter, {{"threshold", 0.5}});
  EXPECT_NE(compose_hybrid({a2, b, c}).digest(), p1.digest());
  EXPECT_TRUE(compose_hybrid({}).empty());
}

TEST(HybridPipeline, RejectsConflictsAndTaxonomyMismatch) {
  AttackPlugin dp = make_attack_plugin(AttackId::dp_sgd);
  AttackPlugin adv = make_attack_plugin(AttackId::adv_train_fgsm);
  EXPECT_THROW(compose_hybrid({dp, adv}), std::invalid_argument);
  // a hyper-parameter-only training attack composes fine with one loop rewrite
  AttackPlugin reg = make_attack_plugin(AttackId::regularization);
  EXPECT_NO_THROW(compose_hybrid({dp, reg}));

  AttackPlugin lying = make_attack_plugin(AttackId::noisy_output);
  lying.phase = AttackPhase::training;  // contradicts the static taxonomy
  EXPECT_THROW(compose_hybrid({lying}), std::invalid_argument);
}

TEST(DpAccountant, MonotoneAndInvertsCorrectly) {
  const double q = 0.1;
  const std::size_t steps = 500;
  const double delta = 1e-5;
  EXPECT_GT(dp_epsilon_for_sigma(0.5, q, steps, delta),
            dp_epsilon_for_sigma(1.0, q, steps, delta));
  EXPECT_GT(dp_epsilon_for_sigma(1.0, q, steps, delta),
            dp_epsilon_for_sigma(2.0, q, steps, delta));
  for (double target : {32.0, 64.0, 8.0}) {
    const double sigma = dp_noise_multiplier(target, delta, q, steps);
    EXPECT_LE(dp_epsilon_for_sigma(sigma, q, steps, delta), target * 1.0001);
    if (sigma > 0.06)  // above the accountant's search floor the bound is tight
      EXPECT_GT(dp_epsilon_for_sigma(sigma * 0.98, q, steps, delta), target);
  }
  // smaller privacy budget needs more noise
  EXPECT_GT(dp_noise_multiplier(8.0, delta, q, steps),
            dp_noise_multiplier(64.0, delta, q, steps));
  EXPECT_THROW(dp_noise_multiplier(0.0, delta, q, steps), std::invalid_argument);
  EXPECT_THROW(dp_noise_multiplier(1.0, delta, 2.0, steps), std::invalid_argument);
}

TEST(DpSgdHook, ClippedNormsNeverExceedBound) {
  const double clip = 1.0;
  DpSgdHook hook(clip, 0.0);
  Rng rng = make_rng(44);
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<std::vector<float>> grads(3);
    const float scale = rep % 2 ? 10.0f : 0.01f;  // alternate large and small
    for (auto& g : grads) {
      g.resize(17);
      for (float& v : g) v = gaussian(rng, 0.0f, scale);
    }
    // norm before, for the no-clip case
    double before = 0.0;
    for (const auto& g : grads)
      for (float v : g) before += double(v) * v;
    before = std::sqrt(before);
    auto copy = grads;
    hook.clip_sample_gradient(grads);
    double after = 0.0;
    for (const auto& g : grads)
      for (float v : g) after += double(v) * v;
    after = std::sqrt(after);
    EXPECT_LE(after, clip * (1.0 + 1e-5)) << "rep " << rep;
    EXPECT_LE(hook.last_clipped_norm(), clip * (1.0 + 1e-12));
    if (before <= clip)
      EXPECT_EQ(grads, copy);  // small gradients pass through untouched
  }
  EXPECT_THROW(DpSgdHook(-1.0, 0.0), std::invalid_argument);
}

TEST(TrainingAttack, DpSgdSetupAndBatchStatRejection) {
  TrainConfig cfg;
  cfg.arch = "resnet18";
  AttackPlugin dp = make_attack_plugin(AttackId::dp_sgd, {{"epsilon", 32.0}});
  EXPECT_THROW(training_attack(dp, cfg, nullptr, 500), std::invalid_argument);
  cfg.arch = "small_cnn";
  cfg.epochs = 10;
  cfg.batch_size = 32;
  TrainingAttackSetup setup = training_attack(dp, cfg, nullptr, 500);
  ASSERT_NE(setup.hook, nullptr);
  EXPECT_TRUE(setup.hook->per_sample_grads());
  EXPECT_GT(setup.log.at("noise_multiplier").get<double>(), 0.0);
  // wrong phase rejected
  AttackPlugin wf = make_attack_plugin(AttackId::wavelet_filter);
  EXPECT_THROW(training_attack(wf, cfg, nullptr, 500), std::invalid_argument);
}

TEST(TrainingAttack, AsdRequiresSeedPoolAndSelectsPerEpoch) {
  DatasetBundle data = tiny_corpus();
  AttackPlugin asd = make_attack_plugin(AttackId::asd);
  TrainConfig cfg;
  EXPECT_THROW(training_attack(asd, cfg, nullptr, data.size()), std::invalid_argument);
  DatasetBundle aux = tiny_corpus(99, 12);
  TrainingAttackSetup setup = training_attack(asd, cfg, &aux, data.size());
  ASSERT_NE(setup.hook, nullptr);
  EXPECT_EQ(setup.extra_train_data.size(), aux.size());

  auto net = tiny_trained_net(data);
  // combined index space: [0, data.size()) release, then the seed pool
  DatasetBundle combined = data;
  for (const Sample& s : aux.samples) combined.samples.push_back(s);
  std::vector<std::size_t> all(combined.size());
  std::iota(all.begin(), all.end(), 0);
  const std::vector<std::size_t> picked =
      setup.hook->select_samples(*net, combined, 0, all);
  // the whole seed pool is always in; only part of the release joins
  std::size_t pool_kept = 0;
  for (std::size_t i : picked) pool_kept += i >= data.size();
  EXPECT_EQ(pool_kept, aux.size());
  EXPECT_LT(picked.size(), combined.size());
  EXPECT_GE(picked.size(), aux.size());
}

TEST(AdvTrainHook, CraftedBatchesStayInEpsilonBall) {
  DatasetBundle data = tiny_corpus();
  auto net = tiny_trained_net(data);
  const float eps = 8.0f / 255.0f;
  for (bool hybrid : {false, true}) {
    AdvTrainHook hook(hybrid, eps, 1.0f, 4);
    Rng rng = make_rng(5);
    for (int batch = 0; batch < 3; ++batch) {  // hybrid cycles fgsm/pgd/cw
      Tensor images({8, 1, 8, 8});
      std::vector<int> labels(8);
      for (std::size_t i = 0; i < 8; ++i) {
        const Sample& s = data.samples[std::size_t(batch) * 8 + i];
        std::copy(s.image.data.begin(), s.image.data.end(),
                  images.data.begin() + i * 64);
        labels[i] = s.label;
      }
      Tensor before = images;
      hook.transform_batch(*net, images, labels, 0, rng);
      for (std::size_t i = 0; i < images.numel(); ++i) {
        EXPECT_LE(std::fabs(images[i] - before[i]), eps + 1e-6f);
        EXPECT_GE(images[i], 0.0f);
        EXPECT_LE(images[i], 1.0f);
      }
    }
  }
}

TEST(WaveletFilter, DetailEnergyNeverGrowsAndStripsTriggers) {
  DatasetBundle data = tiny_corpus();
  for (const Sample& s : data.samples) {
    const Tensor f = wavelet_filter_image(s.image, 0.25f);
    EXPECT_LE(haar_detail_energy(f), haar_detail_energy(s.image) + 1e-4);
    for (float v : f.data) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
  // threshold 0 reconstructs the image (orthonormal Haar round trip)
  const Tensor& x = data.samples[0].image;
  const Tensor id = wavelet_filter_image(x, 0.0f);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(id[i], x[i], 1e-5f);
  // a blended checkerboard trigger lives in the detail bands; filtering must
  // remove most of the added energy
  TriggerPattern trig = make_noise_trigger({1, 8, 8}, 1, 0.3f);
  const Tensor marked = blend_trigger(x, trig);
  const double added = haar_detail_energy(marked) - haar_detail_energy(x);
  ASSERT_GT(added, 0.5);
  const Tensor cleaned = wavelet_filter_image(marked, 0.25f);
  EXPECT_LT(haar_detail_energy(cleaned), haar_detail_energy(marked) - 0.8 * added);
  // odd image sides are rejected
  Tensor odd({1, 7, 8});
  EXPECT_THROW(wavelet_filter_image(odd, 0.1f), std::invalid_argument);
}

TEST(ImageFilters, RangeAndIdentityProperties) {
  DatasetBundle data = tiny_corpus();
  const Tensor& x = data.samples[0].image;
  for (float v : gaussian_filter_image(x, 0.8f).data) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  EXPECT_EQ(gaussian_filter_image(x, 0.0f).data, x.data);  // sigma 0 identity
  Tensor flat({1, 6, 6}, 0.37f);
  EXPECT_EQ(median_filter_image(flat).data, flat.data);  // median of constant
}

TEST(Augmentation, PreservesLabelsCountRangeAndDeterminism) {
  DatasetBundle data = tiny_corpus();
  DatasetBundle a = augment_dataset(data, 7);
  DatasetBundle b = augment_dataset(data, 7);
  DatasetBundle c = augment_dataset(data, 8);
  ASSERT_EQ(a.size(), data.size());
  bool differs_from_source = false, differs_across_seeds = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.samples[i].label, data.samples[i].label);
    EXPECT_EQ(a.samples[i].image.data, b.samples[i].image.data);
    differs_from_source |= a.samples[i].image.data != data.samples[i].image.data;
    differs_across_seeds |= a.samples[i].image.data != c.samples[i].image.data;
  }
  EXPECT_TRUE(differs_from_source);
  EXPECT_TRUE(differs_across_seeds);
  EXPECT_NO_THROW(a.validate());
}

TEST(ZeroStrengthWrappers, ExactIdentityOnThousandInputs) {
  DatasetBundle data = tiny_corpus();
  auto net = tiny_trained_net(data);
  ModelAccess base = make_white_box(net);
  DatasetBundle aux = tiny_corpus(77, 16);

  // sigma = 0 noise wrappers, n = 1 smoothing, strength = 0 reprogramming
  std::vector<ModelAccess> wrapped;
  wrapped.push_back(inference_attack(
      make_attack_plugin(AttackId::noisy_output, {{"sigma", 0.0f}}), base, nullptr, 1));
  wrapped.push_back(inference_attack(
      make_attack_plugin(AttackId::noisy_feature, {{"sigma", 0.0f}}), base, nullptr, 1));
  wrapped.push_back(inference_attack(
      make_attack_plugin(AttackId::randomized_smoothing,
                         {{"sigma", 0.0f}, {"n", 1}}),
      base, nullptr, 1));
  wrapped.push_back(inference_attack(
      make_attack_plugin(AttackId::reprogramming, {{"strength", 0.0f}}), base, &aux, 1));

  Rng rng = make_rng(123);
  for (int q = 0; q < 250; ++q) {  // 250 inputs x 4 wrappers = 1000 identity checks
    Tensor x({1, 8, 8});
    for (float& v : x.data) v = uniform(rng, 0.0f, 1.0f);
    const std::vector<float> expect = base.predict_probs(x);
    for (std::size_t w = 0; w < wrapped.size(); ++w)
      EXPECT_EQ(wrapped[w].predict_probs(x), expect) << "wrapper " << w;
  }
}

TEST(InferenceAttack, DispatchValidation) {
  DatasetBundle data = tiny_corpus();
  auto net = tiny_trained_net(data);
  ModelAccess base = make_white_box(net);
  // wrong phase
  EXPECT_THROW(inference_attack(make_attack_plugin(AttackId::wavelet_filter), base,
                                nullptr, 1),
               std::invalid_argument);
  // aux-requiring wrapper without aux
  EXPECT_THROW(inference_attack(make_attack_plugin(AttackId::reprogramming), base,
                                nullptr, 1),
               std::invalid_argument);
  // wrappers never escalate access
  ModelAccess logits = base.restrict(AccessLevel::logits);
  ModelAccess wrapped = inference_attack(
      make_attack_plugin(AttackId::noisy_output, {{"sigma", 0.1f}}), logits, nullptr, 1);
  EXPECT_EQ(wrapped.level(), AccessLevel::logits);
  Tensor x({1, 8, 8}, 0.5f);
  EXPECT_THROW(wrapped.gradient(x, 0), std::runtime_error);
}

TEST(DetectionWrappers, FlagOutOfDistributionQueries) {
  DatasetBundle data = tiny_corpus(3, 60);
  auto net = tiny_trained_net(data);
  ModelAccess base = make_white_box(net);
  DatasetBundle aux = tiny_corpus(91, 40);
  ModelAccess knn = inference_attack(make_attack_plugin(AttackId::od_knn), base, &aux, 1);
  // in-distribution queries mostly pass through; a far outlier is flagged and
  // answered with a degenerate one-hot vote
  std::size_t matches = 0;
  for (std::size_t i = 0; i < 20; ++i) {
    const Tensor& x = data.samples[i].image;
    matches += knn.predict_label(x) == base.predict_label(x);
  }
  EXPECT_GE(matches, 15u);
}

TEST(PreprocessAttack, FilterDispatchKeepsBundlesValid) {
  DatasetBundle data = tiny_corpus();
  for (AttackId id : {AttackId::gaussian_filter, AttackId::median_filter,
                      AttackId::wavelet_filter}) {
    DatasetBundle out = preprocess_attack(make_attack_plugin(id), data, nullptr, 5);
    ASSERT_EQ(out.size(), data.size());
    EXPECT_NO_THROW(out.validate());
    for (std::size_t i = 0; i < out.size(); ++i)
      EXPECT_EQ(out.samples[i].label, data.samples[i].label);
  }
  EXPECT_THROW(preprocess_attack(make_attack_plugin(AttackId::noisy_output), data,
                                 nullptr, 5),
               std::invalid_argument);
  EXPECT_THROW(preprocess_attack(make_attack_plugin(AttackId::autoencoder_denoise),
                                 data, nullptr, 5),
               std::invalid_argument);
}

TEST(PreprocessAttack, LearnedTransformsSmokeTest) {
  DatasetBundle data = tiny_corpus(21, 24);
  DatasetBundle aux = tiny_corpus(22, 24);
  DatasetBundle den = preprocess_attack(
      make_attack_plugin(AttackId::autoencoder_denoise,
                         {{"epochs", 2}, {"batch_size", 12}}),
      data, &aux, 5);
  ASSERT_EQ(den.size(), data.size());
  EXPECT_NO_THROW(den.validate());

  DatasetBundle syn = preprocess_attack(
      make_attack_plugin(AttackId::synthesis,
                         {{"train_epochs", 2}, {"batch_size", 12},
                          {"diffusion_steps", 20}, {"sample_steps", 4}}),
      data, nullptr, 5);
  ASSERT_EQ(syn.size(), data.size());
  EXPECT_NO_THROW(syn.validate());
  for (std::size_t i = 0; i < syn.size(); ++i)
    EXPECT_EQ(syn.samples[i].label, data.samples[i].label);
}
