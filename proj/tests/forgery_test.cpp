// Forgery layer: per-method policy bindings, the projection invariant on
// every generator iterate, generator effectiveness on a small trained model,
// substitute distillation, and the end-to-end campaign record.
#include <gtest/gtest.h>

#include <cmath>

#include "auditbench/audit/registry.hpp"
#include "auditbench/forgery/forge.hpp"

using namespace auditbench;

namespace {

DatasetBundle tiny_corpus(std::uint64_t seed = 11) {
  return make_synthetic_bundle(3, 60, 1, 8, 8, seed, 0.15f, 0.3f);
}

std::shared_ptr<Network> tiny_model(const DatasetBundle& data, std::uint64_t seed = 3) {
  TrainConfig cfg;
  cfg.epochs = 8;
  cfg.batch_size = 16;
  cfg.learning_rate = 0.05;
  cfg.seed = seed;
  return train_network(data, cfg);
}

// Probe asserting the epsilon-ball and [0,1] projection on one iterate.
struct ProjectionProbe {
  float epsilon;
  std::size_t calls = 0;
  bool ok = true;

  void operator()(const Tensor& original, const Tensor& current) {
    ++calls;
    for (std::size_t i = 0; i < current.numel(); ++i) {
      if (current[i] < -1e-6f || current[i] > 1.0f + 1e-6f) ok = false;
      if (std::fabs(current[i] - original[i]) > epsilon + 1e-6f) ok = false;
    }
  }
};

double mean_top_margin(const ModelAccess& m, const DatasetBundle& d) {
  double s = 0.0;
  for (const Sample& smp : d.samples) s += detail::top_margin(m.predict_logits(smp.image));
  return s / double(d.samples.size());
}

}  // namespace

TEST(Policy, PerMethodBindingsArePinned) {
  for (AuditMethodId id : {AuditMethodId::dvbw, AuditMethodId::zeromark, AuditMethodId::dw}) {
    const TargetPolicy p = target_policy_for(id);
    EXPECT_EQ(p.mode, TargetMode::targeted) << to_string(id);
    EXPECT_EQ(p.target_label, 4) << to_string(id);
  }
  for (AuditMethodId id : {AuditMethodId::ubw_p, AuditMethodId::ubw_c})
    EXPECT_EQ(target_policy_for(id).mode, TargetMode::untargeted) << to_string(id);
  for (AuditMethodId id :
       {AuditMethodId::dua, AuditMethodId::mia, AuditMethodId::rapid, AuditMethodId::di})
    EXPECT_EQ(target_policy_for(id).mode, TargetMode::reverse_untargeted) << to_string(id);
}

TEST(Generators, NamesRoundTrip) {
  for (ForgeryGenerator g : all_forgery_generators())
    EXPECT_EQ(forgery_generator_from_string(to_string(g)), g);
  EXPECT_THROW(forgery_generator_from_string("deepfool"), std::invalid_argument);
  EXPECT_EQ(all_forgery_generators().size(), 5u);
}

TEST(Projection, EveryIterateStaysInEpsilonBallAndUnitBox) {
  DatasetBundle data = tiny_corpus();
  auto net = tiny_model(data);
  ModelAccess white = make_white_box(net);
  for (ForgeryGenerator gen : {ForgeryGenerator::pgd, ForgeryGenerator::fgsm,
                               ForgeryGenerator::tifgsm, ForgeryGenerator::vnifgsm}) {
    for (TargetMode mode :
         {TargetMode::targeted, TargetMode::untargeted, TargetMode::reverse_untargeted}) {
      ProjectionProbe probe{8.0f / 255.0f};
      ForgeOptions opt;
      opt.epsilon = probe.epsilon;
      opt.steps = 6;
      opt.step_size = 3.0f / 255.0f;  // oversteps on purpose; projection must catch it
      opt.seed = 5;
      opt.iterate_probe = std::ref(probe);
      ForgeResult r = forge(gen, white, data, TargetPolicy{mode, 1}, opt);
      EXPECT_TRUE(probe.ok) << to_string(gen) << "/" << to_string(mode);
      EXPECT_GE(probe.calls, data.size()) << to_string(gen);
      EXPECT_LE(r.perturbations.max_norm(), opt.epsilon + 1e-6f);
      for (const Sample& s : r.forged.samples)
        for (float v : s.image.data) {
          ASSERT_GE(v, 0.0f);
          ASSERT_LE(v, 1.0f);
        }
    }
  }
}

TEST(Projection, UniversalPerturbationStaysInEpsilonBall) {
  DatasetBundle data = tiny_corpus();
  auto net = tiny_model(data);
  ModelAccess white = make_white_box(net);
  ProjectionProbe probe{12.0f / 255.0f};
  UniversalForgeOptions opt;
  opt.base.epsilon = probe.epsilon;
  opt.base.seed = 9;
  opt.base.iterate_probe = std::ref(probe);
  opt.max_epochs = 2;
  opt.inner_steps = 4;
  opt.fooling_rate_floor = 0.99;  // keep it iterating so the probe fires
  UniversalForgeResult r = forge_universal(white, data, TargetPolicy{TargetMode::targeted, 1}, opt);
  EXPECT_TRUE(probe.ok);
  EXPECT_GT(probe.calls, 0u);
  float maxn = 0.0f;
  for (float v : r.perturbation.data) maxn = std::max(maxn, std::fabs(v));
  EXPECT_LE(maxn, opt.base.epsilon + 1e-6f);
  EXPECT_GE(r.fooling_rate, 0.0);
  EXPECT_LE(r.fooling_rate, 1.0);
  EXPECT_EQ(r.reached_floor, r.fooling_rate >= opt.fooling_rate_floor);
  for (const Sample& s : r.forged.samples)
    for (float v : s.image.data) {
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f);
    }
}

TEST(Forge, ZeroEpsilonIsIdentity) {
  DatasetBundle data = tiny_corpus();
  auto net = tiny_model(data);
  ModelAccess white = make_white_box(net);
  ForgeOptions opt;
  opt.epsilon = 0.0f;
  for (ForgeryGenerator gen : {ForgeryGenerator::pgd, ForgeryGenerator::fgsm}) {
    ForgeResult r = forge(gen, white, data, TargetPolicy{TargetMode::targeted, 1}, opt);
    for (std::size_t i = 0; i < data.samples.size(); ++i)
      EXPECT_EQ(r.forged.samples[i].image.data, data.samples[i].image.data);
    EXPECT_FLOAT_EQ(r.perturbations.max_norm(), 0.0f);
  }
  UniversalForgeOptions uopt;
  uopt.base.epsilon = 0.0f;
  UniversalForgeResult u =
      forge_universal(white, data, TargetPolicy{TargetMode::targeted, 1}, uopt);
  for (std::size_t i = 0; i < data.samples.size(); ++i)
    EXPECT_EQ(u.forged.samples[i].image.data, data.samples[i].image.data);
}

TEST(Forge, ValidatesInputsAndAccess) {
  DatasetBundle data = tiny_corpus();
  auto net = tiny_model(data);
  ModelAccess white = make_white_box(net);
  EXPECT_THROW(forge(ForgeryGenerator::uap, white, data, {}), std::invalid_argument);
  ForgeOptions neg;
  neg.epsilon = -0.1f;
  EXPECT_THROW(forge(ForgeryGenerator::pgd, white, data, {}, neg), std::invalid_argument);
  ModelAccess logits = white.restrict(AccessLevel::logits);
  EXPECT_THROW(forge(ForgeryGenerator::pgd, logits, data, {}), std::runtime_error);
  EXPECT_THROW(forge_universal(logits, data, {}), std::runtime_error);

  PerturbationSet bad;
  bad.epsilon = 4.0f / 255.0f;
  Tensor r({1, 2, 2});
  r[0] = 8.0f / 255.0f;
  bad.perturbations.push_back(r);
  EXPECT_THROW(bad.validate(), std::runtime_error);
}

TEST(Forge, TargetedPgdReachesTheTargetLabel) {
  DatasetBundle data = tiny_corpus();
  auto net = tiny_model(data);
  ModelAccess white = make_white_box(net);
  ForgeOptions opt;
  opt.epsilon = 0.3f;
  opt.steps = 30;
  opt.step_size = 0.03f;
  ForgeResult r = forge(ForgeryGenerator::pgd, white, data, TargetPolicy{TargetMode::targeted, 1}, opt);
  std::size_t hit = 0;
  for (const Sample& s : r.forged.samples) hit += white.predict_label(s.image) == 1;
  EXPECT_GE(double(hit) / double(data.size()), 0.8);
}

TEST(Forge, UntargetedPgdFlipsPredictions) {
  DatasetBundle data = tiny_corpus();
  auto net = tiny_model(data);
  ModelAccess white = make_white_box(net);
  ForgeOptions opt;
  opt.epsilon = 0.3f;
  opt.steps = 30;
  opt.step_size = 0.03f;
  ForgeResult r =
      forge(ForgeryGenerator::pgd, white, data, TargetPolicy{TargetMode::untargeted, 0}, opt);
  std::size_t flipped = 0;
  for (std::size_t i = 0; i < data.samples.size(); ++i)
    flipped += white.predict_label(r.forged.samples[i].image) !=
               white.predict_label(data.samples[i].image);
  EXPECT_GE(double(flipped) / double(data.size()), 0.8);
}

TEST(Forge, ReverseModeGrowsTheTopMarginWithoutFlipping) {
  DatasetBundle data = tiny_corpus();
  auto net = tiny_model(data);
  ModelAccess white = make_white_box(net);
  ForgeOptions opt;
  opt.epsilon = 8.0f / 255.0f;
  opt.steps = 20;
  opt.step_size = opt.epsilon / 10.0f;
  ForgeResult r = forge(ForgeryGenerator::pgd, white, data,
                        TargetPolicy{TargetMode::reverse_untargeted, 0}, opt);
  std::size_t kept = 0;
  for (std::size_t i = 0; i < data.samples.size(); ++i)
    kept += white.predict_label(r.forged.samples[i].image) ==
            white.predict_label(data.samples[i].image);
  EXPECT_GE(double(kept) / double(data.size()), 0.9);
  EXPECT_GT(mean_top_margin(white, r.forged), mean_top_margin(white, data));
}

TEST(Forge, RunnerUpClassExcludesTheAnchor) {
  auto net = tiny_model(tiny_corpus());
  ModelAccess white = make_white_box(net);
  const Tensor x = tiny_corpus().samples[0].image;
  const std::vector<float> z = white.predict_logits(x);
  for (int anchor = 0; anchor < 3; ++anchor) {
    const int ru = detail::runner_up_class(white, x, anchor);
    EXPECT_NE(ru, anchor);
    for (int j = 0; j < 3; ++j)
      if (j != anchor) EXPECT_GE(z[std::size_t(ru)], z[std::size_t(j)]);
  }
}

TEST(Substitute, DistillationMatchesTheTargetOnHeldOutData) {
  DatasetBundle data = tiny_corpus();
  auto net = tiny_model(data);
  ModelAccess target = make_white_box(net).restrict(AccessLevel::logits);
  SubstituteOptions opt;
  opt.arch = "small_cnn";
  opt.train.epochs = 20;
  opt.train.batch_size = 16;
  opt.train.learning_rate = 0.05;
  opt.train.seed = 13;
  opt.agreement_floor = 0.5;
  SubstituteResult r = distill_substitute(target, data, opt);
  EXPECT_EQ(r.substitute.level(), AccessLevel::white_box);
  EXPECT_GE(r.agreement, 0.5);
  EXPECT_TRUE(r.above_floor);
  // label-only targets distill from one-hot answers
  ModelAccess labels = make_white_box(net).restrict(AccessLevel::label_only);
  SubstituteResult rl = distill_substitute(labels, data, opt);
  EXPECT_GE(rl.agreement, 0.0);
  EXPECT_LE(rl.agreement, 1.0);
  EXPECT_THROW(distill_substitute(target, DatasetBundle{}, opt), std::invalid_argument);
}

TEST(Campaign, RecordsTheScenarioAndForgesTheClaim) {
  DatasetBundle attacker = tiny_corpus(21);
  AuditContext ctx;
  ctx.auditor_aux = tiny_corpus(22);
  ctx.auditor_train.epochs = 4;
  ctx.auditor_train.batch_size = 16;
  ctx.auditor_train.learning_rate = 0.05;
  ctx.auditor_train.seed = 7;
  ctx.seed = 7;
  auto indep = tiny_model(tiny_corpus(23));

  DvbwAudit dvbw(DvbwParams{0.2, 1, 0.25f});
  ForgeryCampaignConfig cfg;
  cfg.generator = ForgeryGenerator::pgd;
  cfg.options.epsilon = 8.0f / 255.0f;
  cfg.options.steps = 4;
  cfg.options.seed = 7;
  ForgeryCampaignResult r = run_forgery_campaign(dvbw, indep, attacker, ctx, cfg);
  EXPECT_EQ(r.forged_claim.samples.size(), attacker.samples.size());
  EXPECT_EQ(r.log.at("attack_type"), "forgery");
  EXPECT_EQ(r.log.at("generator"), "pgd");
  EXPECT_EQ(r.log.at("access"), "white");
  EXPECT_EQ(r.log.at("policy"), "targeted");
  EXPECT_NEAR(r.log.at("epsilon").get<double>(), 8.0 / 255.0, 1e-6);
  EXPECT_LE(r.log.at("max_perturbation_norm").get<double>(), 8.0 / 255.0 + 1e-6);
  EXPECT_TRUE(std::isnan(r.substitute_agreement));
  EXPECT_TRUE(r.verdict.metrics.count("p_value"));

  cfg.black_box = true;
  cfg.substitute.arch = "small_cnn";
  cfg.substitute.train.epochs = 4;
  cfg.substitute.train.batch_size = 16;
  cfg.substitute.train.learning_rate = 0.05;
  cfg.substitute.train.seed = 13;
  ForgeryCampaignResult rb = run_forgery_campaign(dvbw, indep, attacker, ctx, cfg);
  EXPECT_EQ(rb.log.at("access"), "black");
  EXPECT_FALSE(std::isnan(rb.substitute_agreement));
  EXPECT_TRUE(rb.log.contains("substitute_agreement"));

  EXPECT_THROW(run_forgery_campaign(dvbw, nullptr, attacker, ctx, cfg),
               std::invalid_argument);
}
