// Audit layer: method registry and taxonomy table, access gating, prepare
// bookkeeping (poison indices, marked twins), secret serialization round
// trips, verdict JSON, and the shared membership helpers.
#include <gtest/gtest.h>

#include <filesystem>

#include "auditbench/audit/registry.hpp"
#include "auditbench/data/io.hpp"

using namespace auditbench;

namespace {

DatasetBundle tiny_corpus(std::uint64_t seed = 11) {
  return make_synthetic_bundle(3, 60, 1, 8, 8, seed, 0.15f, 0.3f);
}

AuditContext tiny_context(std::uint64_t seed = 7) {
  AuditContext ctx;
  ctx.auditor_aux = tiny_corpus(seed + 100);
  ctx.auditor_train.epochs = 4;
  ctx.auditor_train.batch_size = 16;
  ctx.auditor_train.learning_rate = 0.05;
  ctx.auditor_train.seed = seed;
  ctx.seed = seed;
  return ctx;
}

// One small model trained on the given bundle, shared helper for audits that
// need a live query surface.
std::shared_ptr<Network> tiny_model(const DatasetBundle& data, std::uint64_t seed = 3) {
  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.batch_size = 16;
  cfg.learning_rate = 0.05;
  cfg.seed = seed;
  return train_network(data, cfg);
}

std::string fresh_dir(const std::string& tag) {
  const auto p = std::filesystem::temp_directory_path() / ("auditbench_" + tag);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

bool same_metrics(const AuditVerdict& a, const AuditVerdict& b) {
  if (a.trained != b.trained || a.metrics.size() != b.metrics.size()) return false;
  for (const auto& [k, v] : a.metrics) {
    auto it = b.metrics.find(k);
    if (it == b.metrics.end() || std::fabs(it->second - v) > 1e-12) return false;
  }
  return true;
}

}  // namespace

TEST(Registry, BuildsEveryMethodAndRoundTripsNames) {
  const std::vector<AuditMethodId> all = all_audit_methods();
  ASSERT_EQ(all.size(), 9u);
  for (AuditMethodId id : all) {
    auto m = make_audit_method(id);
    ASSERT_NE(m, nullptr);
    EXPECT_EQ(m->id(), id);
    EXPECT_EQ(audit_method_from_string(to_string(id)), id);
    EXPECT_EQ(make_audit_method(std::string(to_string(id)))->id(), id);
  }
  EXPECT_THROW(audit_method_from_string("nonesuch"), std::invalid_argument);
  EXPECT_THROW(make_audit_method("nonesuch"), std::invalid_argument);
}

TEST(Spec, TaxonomyTablePinsAccessAndIntrusiveness) {
  const auto is_internal = [](AuditMethodId id) {
    return id == AuditMethodId::mia || id == AuditMethodId::rapid ||
           id == AuditMethodId::di;
  };
  const auto is_label_only = [](AuditMethodId id) {
    return id == AuditMethodId::di || id == AuditMethodId::zeromark ||
           id == AuditMethodId::dw;
  };
  for (AuditMethodId id : all_audit_methods()) {
    const AuditMethodSpec s = audit_method_spec(id);
    EXPECT_EQ(s.id, id);
    EXPECT_EQ(s.feature_class == FeatureClass::internal, is_internal(id));
    // the internal-feature methods are exactly the non-intrusive ones
    EXPECT_EQ(s.intrusive, !is_internal(id));
    EXPECT_EQ(s.required_access,
              is_label_only(id) ? AccessLevel::label_only : AccessLevel::logits);
    EXPECT_EQ(make_audit_method(id)->spec().intrusive, s.intrusive);
  }
}

TEST(AccessGating, AuditRejectsInsufficientAccess) {
  DatasetBundle raw = tiny_corpus();
  AuditContext ctx = tiny_context();
  DvbwAudit dvbw(DvbwParams{0.2, 1, 0.2f});
  DatasetBundle published = dvbw.prepare(raw, ctx);
  auto net = tiny_model(published);
  ModelAccess labels = make_white_box(net).restrict(AccessLevel::label_only);
  EXPECT_THROW(dvbw.audit(labels, published, ctx), std::runtime_error);
  ModelAccess logits = make_white_box(net).restrict(AccessLevel::logits);
  EXPECT_NO_THROW(dvbw.audit(logits, published, ctx));
}

TEST(AccessGating, LabelOnlyMethodWorksWithLabelOnlyHandle) {
  DatasetBundle raw = tiny_corpus();
  AuditContext ctx = tiny_context();
  DwAudit dw(DwParams{0.2, 0.8f});
  DatasetBundle published = dw.prepare(raw, ctx);
  auto net = tiny_model(published);
  ModelAccess labels = make_white_box(net).restrict(AccessLevel::label_only);
  AuditVerdict v;
  ASSERT_NO_THROW(v = dw.audit(labels, published, ctx));
  EXPECT_TRUE(v.metrics.count("wsr"));
}

TEST(Lifecycle, AuditBeforePrepareThrows) {
  DatasetBundle raw = tiny_corpus();
  AuditContext ctx = tiny_context();
  auto net = tiny_model(raw);
  ModelAccess white = make_white_box(net);
  for (AuditMethodId id : all_audit_methods()) {
    auto m = make_audit_method(id);
    EXPECT_THROW(m->audit(white, raw, ctx), std::runtime_error) << to_string(id);
  }
}

TEST(NonIntrusive, PrepareReturnsBitIdenticalData) {
  DatasetBundle raw = tiny_corpus();
  AuditContext ctx = tiny_context();
  ctx.auditor_train.epochs = 2;
  MiaAudit mia(MiaParams{2});
  RapidAudit rapid(RapidParams{2});
  DiAudit di(DiParams{4, 10, 0.05f, 16});
  for (AuditMethod* m : std::initializer_list<AuditMethod*>{&mia, &rapid, &di}) {
    DatasetBundle published = m->prepare(raw, ctx);
    ASSERT_EQ(published.samples.size(), raw.samples.size()) << to_string(m->id());
    for (std::size_t i = 0; i < raw.samples.size(); ++i) {
      EXPECT_EQ(published.samples[i].label, raw.samples[i].label);
      EXPECT_EQ(published.samples[i].image.data, raw.samples[i].image.data);
    }
  }
}

TEST(Dvbw, PrepareBlendsTriggerAtSecretIndicesOnly) {
  DatasetBundle raw = tiny_corpus();
  AuditContext ctx = tiny_context();
  DvbwParams params{0.2, 1, 0.25f};
  DvbwAudit dvbw(params);
  DatasetBundle published = dvbw.prepare(raw, ctx);
  const TriggerPattern& trig = dvbw.trigger();
  EXPECT_EQ(trig.target_label, 1);
  const std::size_t expect_poison =
      std::size_t(std::ceil(params.poison_rate * double(raw.samples.size())));
  std::size_t changed = 0;
  for (std::size_t i = 0; i < raw.samples.size(); ++i) {
    const bool touched =
        published.samples[i].image.data != raw.samples[i].image.data;
    if (!touched) {
      EXPECT_EQ(published.samples[i].label, raw.samples[i].label);
      continue;
    }
    ++changed;
    EXPECT_EQ(published.samples[i].label, params.target_label);
    const Tensor expect = blend_trigger(raw.samples[i].image, trig);
    EXPECT_EQ(published.samples[i].image.data, expect.data) << "sample " << i;
  }
  EXPECT_EQ(changed, expect_poison);
  EXPECT_THROW(DvbwAudit(DvbwParams{0.6, 1, 0.2f}), std::invalid_argument);
}

TEST(Dvbw, SecretRoundTripReproducesVerdict) {
  DatasetBundle raw = tiny_corpus();
  AuditContext ctx = tiny_context();
  DvbwAudit dvbw(DvbwParams{0.2, 1, 0.25f});
  DatasetBundle published = dvbw.prepare(raw, ctx);
  auto net = tiny_model(published);
  ModelAccess logits = make_white_box(net).restrict(AccessLevel::logits);
  const AuditVerdict before = dvbw.audit(logits, published, ctx);

  const std::string dir = fresh_dir("dvbw_secret");
  dvbw.save_secret(dir);
  DvbwAudit restored;
  restored.load_secret(dir);
  const AuditVerdict after = restored.audit(logits, published, ctx);
  EXPECT_TRUE(same_metrics(before, after));
  EXPECT_EQ(restored.trigger().image.data, dvbw.trigger().image.data);
  DvbwAudit missing;
  EXPECT_THROW(missing.load_secret(dir + "/nope"), std::runtime_error);
  std::filesystem::remove_all(dir);
}

TEST(Dua, TwinsAreBoundedOppositePatchMarks) {
  DatasetBundle raw = tiny_corpus();
  AuditContext ctx = tiny_context();
  DuaParams params{0.25f, 4, 0.01};
  DuaAudit dua(params);
  DatasetBundle published = dua.prepare(raw, ctx);
  const std::string dir = fresh_dir("dua_secret");
  dua.save_secret(dir);
  DatasetBundle pub_twins = load_bundle(dir + "/dua_published");
  DatasetBundle hid_twins = load_bundle(dir + "/dua_hidden");
  ASSERT_EQ(pub_twins.samples.size(), raw.samples.size());
  ASSERT_EQ(hid_twins.samples.size(), raw.samples.size());
  for (std::size_t i = 0; i < raw.samples.size(); ++i) {
    // the released dataset carries exactly the published twin
    EXPECT_EQ(published.samples[i].image.data, pub_twins.samples[i].image.data);
    const Tensor& base = raw.samples[i].image;
    const Tensor& pub = pub_twins.samples[i].image;
    const Tensor& hid = hid_twins.samples[i].image;
    std::size_t marked = 0;
    for (std::size_t j = 0; j < base.numel(); ++j) {
      const float dp = pub[j] - base[j], dh = hid[j] - base[j];
      EXPECT_LE(std::fabs(dp), params.mark_strength + 1e-6f);
      EXPECT_LE(std::fabs(dh), params.mark_strength + 1e-6f);
      if (dp != 0.0f || dh != 0.0f) {
        ++marked;
        // away from the clamp boundary the marks are exact negations
        if (base[j] >= params.mark_strength && base[j] <= 1.0f - params.mark_strength)
          EXPECT_NEAR(dp, -dh, 1e-6f);
      }
    }
    EXPECT_LE(marked, params.patch * params.patch * base.dim(0));
  }
  std::filesystem::remove_all(dir);
}

TEST(Dua, SecretRoundTripAndClaimAlignment) {
  DatasetBundle raw = tiny_corpus();
  AuditContext ctx = tiny_context();
  DuaAudit dua(DuaParams{0.25f, 4, 0.05});
  DatasetBundle published = dua.prepare(raw, ctx);
  auto net = tiny_model(published);
  ModelAccess logits = make_white_box(net).restrict(AccessLevel::logits);
  const AuditVerdict before = dua.audit(logits, published, ctx);
  EXPECT_TRUE(before.metrics.count("cost_logits"));
  EXPECT_TRUE(before.metrics.count("cost_label"));

  const std::string dir = fresh_dir("dua_rt");
  dua.save_secret(dir);
  DuaAudit restored;
  restored.load_secret(dir);
  EXPECT_TRUE(same_metrics(before, restored.audit(logits, published, ctx)));

  DatasetBundle misaligned = published;
  misaligned.samples.pop_back();
  EXPECT_THROW(restored.audit(logits, misaligned, ctx), std::invalid_argument);
  std::filesystem::remove_all(dir);
}

TEST(Ubw, PoisonLabelVariantRelabelsTriggeredSubset) {
  DatasetBundle raw = tiny_corpus();
  AuditContext ctx = tiny_context();
  UbwParams params;
  params.poison_rate = 0.2;
  UbwAudit ubw(/*clean_label=*/false, params);
  DatasetBundle published = ubw.prepare(raw, ctx);
  const std::size_t expect_poison =
      std::size_t(std::ceil(params.poison_rate * double(raw.samples.size())));
  std::size_t relabeled = 0, image_changed = 0;
  for (std::size_t i = 0; i < raw.samples.size(); ++i) {
    if (published.samples[i].label != raw.samples[i].label) {
      ++relabeled;
      EXPECT_NE(published.samples[i].image.data, raw.samples[i].image.data);
    }
    if (published.samples[i].image.data != raw.samples[i].image.data) ++image_changed;
  }
  EXPECT_EQ(relabeled, expect_poison);
  EXPECT_EQ(image_changed, expect_poison);
  EXPECT_THROW(UbwAudit(false, UbwParams{0.0}), std::invalid_argument);
  EXPECT_THROW(UbwAudit(false, UbwParams{0.7}), std::invalid_argument);
}

TEST(Ubw, CleanLabelVariantKeepsEveryLabel) {
  DatasetBundle raw = tiny_corpus();
  AuditContext ctx = tiny_context();
  ctx.auditor_train.epochs = 2;
  UbwParams params;
  params.poison_rate = 0.2;
  params.opt_steps = 3;
  UbwAudit ubw(/*clean_label=*/true, params);
  DatasetBundle published = ubw.prepare(raw, ctx);
  std::size_t image_changed = 0;
  for (std::size_t i = 0; i < raw.samples.size(); ++i) {
    EXPECT_EQ(published.samples[i].label, raw.samples[i].label);
    if (published.samples[i].image.data != raw.samples[i].image.data) ++image_changed;
  }
  EXPECT_EQ(image_changed,
            std::size_t(std::ceil(params.poison_rate * double(raw.samples.size()))));
}

TEST(Ubw, SecretRoundTripReproducesVerdict) {
  DatasetBundle raw = tiny_corpus();
  AuditContext ctx = tiny_context();
  UbwParams params;
  params.poison_rate = 0.2;
  UbwAudit ubw(false, params);
  DatasetBundle published = ubw.prepare(raw, ctx);
  auto net = tiny_model(published);
  ModelAccess logits = make_white_box(net).restrict(AccessLevel::logits);
  const AuditVerdict before = ubw.audit(logits, published, ctx);
  const std::string dir = fresh_dir("ubw_rt");
  ubw.save_secret(dir);
  UbwAudit restored(false, params);
  restored.load_secret(dir);
  EXPECT_TRUE(same_metrics(before, restored.audit(logits, published, ctx)));
  std::filesystem::remove_all(dir);
}

TEST(ZeroMark, LabelOnlyAuditAndSecretRoundTrip) {
  DatasetBundle raw = tiny_corpus();
  AuditContext ctx = tiny_context();
  ZeroMarkParams params;
  params.poison_rate = 0.2;
  params.target_label = 1;
  params.max_samples = 12;
  params.bisect_iters = 6;
  params.gradient_queries = 16;
  ZeroMarkAudit zm(params);
  DatasetBundle published = zm.prepare(raw, ctx);
  auto net = tiny_model(published);
  ModelAccess labels = make_white_box(net).restrict(AccessLevel::label_only);
  const AuditVerdict before = zm.audit(labels, published, ctx);
  EXPECT_TRUE(before.metrics.count("p_value"));
  const std::string dir = fresh_dir("zm_rt");
  zm.save_secret(dir);
  ZeroMarkAudit restored(params);
  restored.load_secret(dir);
  EXPECT_TRUE(same_metrics(before, restored.audit(labels, published, ctx)));
  std::filesystem::remove_all(dir);
}

TEST(Dw, DomainTransformIsDeterministicAndSecretRoundTrips) {
  DatasetBundle raw = tiny_corpus();
  AuditContext ctx = tiny_context();
  DwAudit dw(DwParams{0.2, 0.8f});
  DatasetBundle published = dw.prepare(raw, ctx);
  // strength only ever grows from its initial value during rejection fitting
  const Tensor probe = raw.samples[0].image;
  EXPECT_EQ(dw.apply_domain(probe).data, dw.apply_domain(probe).data);
  auto net = tiny_model(published);
  ModelAccess labels = make_white_box(net).restrict(AccessLevel::label_only);
  const AuditVerdict before = dw.audit(labels, published, ctx);
  const std::string dir = fresh_dir("dw_rt");
  dw.save_secret(dir);
  DwAudit restored;
  restored.load_secret(dir);
  EXPECT_EQ(restored.apply_domain(probe).data, dw.apply_domain(probe).data);
  EXPECT_TRUE(same_metrics(before, restored.audit(labels, published, ctx)));
  std::filesystem::remove_all(dir);
}

TEST(Verdict, JsonRoundTrip) {
  AuditVerdict v;
  v.method = AuditMethodId::zeromark;
  v.trained = true;
  v.metrics = {{"p_value", 0.0123}, {"wsr", 87.5}};
  v.config_digest = "cafe1234";
  const nlohmann::json j = v.to_json();
  EXPECT_EQ(j.at("decision"), "trained");
  const AuditVerdict r = AuditVerdict::from_json(j);
  EXPECT_EQ(r.method, v.method);
  EXPECT_TRUE(r.trained);
  EXPECT_DOUBLE_EQ(r.metrics.at("p_value"), 0.0123);
  EXPECT_EQ(r.config_digest, "cafe1234");
}

TEST(LogisticModel, SeparatesToyDataAndRoundTripsJson) {
  std::vector<std::vector<double>> xs;
  std::vector<int> ys;
  Rng rng = make_rng(5);
  for (int i = 0; i < 60; ++i) {
    const double cls = i % 2;
    xs.push_back({cls * 2.0 + uniform(rng, -0.3f, 0.3f),
                  -cls + uniform(rng, -0.3f, 0.3f)});
    ys.push_back(int(cls));
  }
  detail::LogisticModel m;
  m.fit(xs, ys);
  int correct = 0;
  for (std::size_t i = 0; i < xs.size(); ++i)
    correct += (m.predict(xs[i]) > 0.5) == (ys[i] == 1);
  EXPECT_GE(correct, 58);
  const detail::LogisticModel r = detail::LogisticModel::from_json(m.to_json());
  for (std::size_t i = 0; i < xs.size(); ++i)
    EXPECT_DOUBLE_EQ(r.predict(xs[i]), m.predict(xs[i]));
  EXPECT_THROW(m.fit({}, {}), std::invalid_argument);
}

TEST(MembershipFeatures, HandComputedValues) {
  const std::vector<float> probs{0.7f, 0.2f, 0.1f};
  const std::vector<double> f = detail::membership_features(probs, 0);
  ASSERT_EQ(f.size(), 4u);
  EXPECT_NEAR(f[0], 0.7, 1e-6);
  EXPECT_NEAR(f[1], std::log(0.7 / 0.3), 1e-5);
  EXPECT_NEAR(f[2], 0.5, 1e-6);
  const double entropy =
      -(0.7 * std::log(0.7) + 0.2 * std::log(0.2) + 0.1 * std::log(0.1));
  EXPECT_NEAR(f[3], entropy, 1e-5);
  // saturated true-class probability: log-odds clamp keeps the value finite
  const std::vector<double> sat = detail::membership_features({1.0f, 0.0f, 0.0f}, 0);
  EXPECT_TRUE(std::isfinite(sat[1]));
  EXPECT_NEAR(sat[1], std::log((1.0 - 1e-7) / 1e-7), 1e-3);
}

TEST(Helpers, SubsetAndIndexRange) {
  DatasetBundle raw = tiny_corpus();
  const std::vector<std::size_t> idx{3, 1, 7};
  const DatasetBundle sub = detail::subset(raw, idx);
  ASSERT_EQ(sub.samples.size(), 3u);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    EXPECT_EQ(sub.samples[k].label, raw.samples[idx[k]].label);
    EXPECT_EQ(sub.samples[k].image.data, raw.samples[idx[k]].image.data);
  }
  EXPECT_EQ(sub.class_count, raw.class_count);
  const std::vector<std::size_t> r = detail::index_range(2, 6);
  EXPECT_EQ(r, (std::vector<std::size_t>{2, 3, 4, 5}));
  EXPECT_THROW(detail::subset(raw, {raw.samples.size()}), std::out_of_range);
}
