#pragma once

#include <filesystem>
#include <fstream>

#include "auditbench/audit/common.hpp"

namespace auditbench {

struct MiaParams {
  std::size_t shadow_count = 10;
};

/// Membership-inference audit (internal-feature, non-intrusive, logits
/// access). prepare is the identity on the data but trains shadow models on
/// random halves of the auditor's auxiliary split and fits a logistic attack
/// classifier on membership features. The decision threshold is calibrated at
/// claim level: the negative score distribution is the claim scored under
/// each shadow (none of which trained on it), the positive is each shadow's
/// own member half; the threshold is their midpoint. Claim-level calibration
/// matters because a well-generalizing non-trained model is still confident
/// on in-distribution claim data.
class MiaAudit final : public AuditMethod {
 public:
  explicit MiaAudit(MiaParams params = {}) : params_(params) {}

  AuditMethodId id() const override { return AuditMethodId::mia; }

  DatasetBundle prepare(const DatasetBundle& raw, const AuditContext& ctx) override {
    if (ctx.auditor_aux.samples.size() < 4)
      throw std::invalid_argument("mia: auditor_aux too small for shadow training");
    std::vector<std::vector<double>> xs;
    std::vector<int> ys;
    for (std::size_t s = 0; s < params_.shadow_count; ++s) {
      const std::uint64_t sseed = derive_seed(ctx.seed, 0x5a1d00ULL + s);
      std::vector<std::size_t> idx(ctx.auditor_aux.samples.size());
      std::iota(idx.begin(), idx.end(), 0);
      Rng rng = make_rng(sseed);
      std::shuffle(idx.begin(), idx.end(), rng);
      const std::size_t half = idx.size() / 2;
      DatasetBundle in = detail::subset(
          ctx.auditor_aux, {idx.begin(), idx.begin() + std::ptrdiff_t(half)});
      DatasetBundle out = detail::subset(
          ctx.auditor_aux, {idx.begin() + std::ptrdiff_t(half), idx.end()});
      TrainConfig tc = ctx.auditor_train;
      tc.seed = sseed;
      auto shadow = train_network(in, tc);
      ModelAccess acc = make_white_box(shadow).restrict(AccessLevel::logits);
      for (const Sample& smp : in.samples) {
        xs.push_back(detail::membership_features(acc.predict_probs(smp.image), smp.label));
        ys.push_back(1);
      }
      for (const Sample& smp : out.samples) {
        xs.push_back(detail::membership_features(acc.predict_probs(smp.image), smp.label));
        ys.push_back(0);
      }
    }
    attack_.fit(xs, ys);
    // Model-level threshold calibration: the auditor scores the claim under a
    // positive calibration model trained on the claim itself (it owns the
    // data) and a negative one trained on the full auxiliary split, then
    // takes the midpoint. Per-sample shadow statistics would sit too low
    // because a generalizing non-trained model is still confident on
    // in-distribution claim data.
    // Calibration models train twice as long as the shadows so they match a
    // converged suspect rather than the shadows' lighter profile.
    TrainConfig pc = ctx.auditor_train;
    pc.epochs *= 2;
    pc.seed = derive_seed(ctx.seed, 0x5a1db05ULL);
    auto pos_model = make_white_box(train_network(raw, pc)).restrict(AccessLevel::logits);
    TrainConfig nc = pc;
    nc.seed = derive_seed(ctx.seed, 0x5a1d4e6ULL);
    auto neg_model =
        make_white_box(train_network(ctx.auditor_aux, nc)).restrict(AccessLevel::logits);
    const auto claim_score = [&](const ModelAccess& m) {
      double s = 0.0;
      for (const Sample& smp : raw.samples)
        s += attack_.predict(detail::membership_features(m.predict_probs(smp.image), smp.label));
      return s / double(raw.samples.size());
    };
    threshold_ = 0.5 * (claim_score(pos_model) + claim_score(neg_model));
    prepared_ = true;
    return raw;  // non-intrusive: published data is bit-identical
  }

  AuditVerdict audit(const ModelAccess& model, const DatasetBundle& claim,
                     const AuditContext&) override {
    require_access(model);
    if (!prepared_) throw std::runtime_error("mia: audit before prepare/load_secret");
    if (claim.class_count != model.class_count())
      throw std::invalid_argument("mia: claim class count mismatch");
    double score = 0.0;
    for (const Sample& s : claim.samples)
      score += attack_.predict(
          detail::membership_features(model.predict_probs(s.image), s.label));
    score /= double(claim.samples.size());
    AuditVerdict v;
    v.method = id();
    v.metrics["score"] = score;
    v.metrics["score_threshold"] = threshold_;
    v.trained = score > threshold_;
    return v;
  }

  void save_secret(const std::string& dir) const override {
    std::filesystem::create_directories(dir);
    nlohmann::json j;
    j["version"] = 1;
    j["attack"] = attack_.to_json();
    j["threshold"] = threshold_;
    std::ofstream(dir + "/mia_secret.json") << j.dump(2);
  }

  void load_secret(const std::string& dir) override {
    std::ifstream in(dir + "/mia_secret.json");
    if (!in) throw std::runtime_error("mia: missing secret in " + dir);
    nlohmann::json j;
    in >> j;
    attack_ = detail::LogisticModel::from_json(j.at("attack"));
    threshold_ = j.at("threshold").get<double>();
    prepared_ = true;
  }

  double threshold() const { return threshold_; }

 private:
  MiaParams params_;
  detail::LogisticModel attack_;
  double threshold_ = 0.5;
  bool prepared_ = false;
};

}  // namespace auditbench
