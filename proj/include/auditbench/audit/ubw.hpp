#pragma once

#include <filesystem>
#include <fstream>

#include "auditbench/audit/common.hpp"
#include "auditbench/data/io.hpp"

namespace auditbench {

struct UbwParams {
  double poison_rate = 0.1;
  float blend_weight = 0.2f;
  // UBW-C surrogate-optimization knobs
  float epsilon = 16.0f / 255.0f;  // l_inf budget of the clean-label perturbation
  std::size_t opt_steps = 10;
};

/// Untargeted backdoor watermark (external-feature, intrusive, logits access).
/// Two prepare variants share the audit: UBW-P relabels a triggered subset
/// uniformly among wrong classes (poison-label); UBW-C keeps labels but
/// perturbs the subset within an l_inf ball to maximize the loss of an
/// auditor surrogate before blending the trigger (clean-label surrogate for
/// the bi-level optimization). Both audits measure WSR = rate of predictions
/// differing from the original labels, plus a one-sided Welch dispersibility
/// test: the model's true-class confidence on the auditor's benign reference
/// samples must exceed its original-class confidence on the verification set
/// by the margin. UBW-P verifies directly on the claim's secretly poisoned
/// samples (they already carry the trigger, and a trained model reproduces
/// their memorized wrong labels); UBW-C's poisoned samples keep their correct
/// labels, so it instead blends the trigger into every claim sample and
/// relies on the trigger generalizing. The reference comes from the auditor's
/// own split so the claimant cannot perturb both sides of the test.
class UbwAudit final : public AuditMethod {
 public:
  explicit UbwAudit(bool clean_label, UbwParams params = {})
      : clean_label_(clean_label), params_(params) {
    if (params_.poison_rate <= 0.0 || params_.poison_rate > 0.5)
      throw std::invalid_argument("ubw: poison_rate outside (0, 0.5]");
  }

  AuditMethodId id() const override {
    return clean_label_ ? AuditMethodId::ubw_c : AuditMethodId::ubw_p;
  }

  DatasetBundle prepare(const DatasetBundle& raw, const AuditContext& ctx) override {
    const Tensor& shape_ref = raw.samples.at(0).image;
    trigger_ = make_noise_trigger(
        {shape_ref.dim(0), shape_ref.dim(1), shape_ref.dim(2)}, /*target=*/0,
        params_.blend_weight, derive_seed(ctx.seed, 0x0bb0ULL));
    DatasetBundle published = raw;
    published.provenance =
        raw.provenance + (clean_label_ ? "/ubw_c_poisoned" : "/ubw_p_poisoned");
    const std::size_t n_poison =
        std::size_t(std::ceil(params_.poison_rate * double(raw.samples.size())));
    std::vector<std::size_t> idx(raw.samples.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng = make_rng(derive_seed(ctx.seed, 0x0bb1ULL));
    std::shuffle(idx.begin(), idx.end(), rng);

    poison_indices_.clear();
    original_labels_.clear();
    std::shared_ptr<Network> surrogate;
    if (clean_label_) {
      TrainConfig tc = ctx.auditor_train;
      tc.seed = derive_seed(ctx.seed, 0x0bb2ULL);
      surrogate = train_network(ctx.auditor_aux, tc);
    }
    for (std::size_t k = 0; k < n_poison; ++k) {
      Sample& s = published.samples[idx[k]];
      poison_indices_.push_back(idx[k]);
      original_labels_.push_back(s.label);
      if (clean_label_) {
        // Maximize surrogate loss within the epsilon ball so the natural
        // features stop carrying the label, then blend the trigger; the
        // label stays correct (clean-label).
        ModelAccess acc = make_white_box(surrogate);
        Tensor adv = s.image;
        const float step = params_.epsilon / float(params_.opt_steps) * 2.0f;
        for (std::size_t it = 0; it < params_.opt_steps; ++it) {
          Tensor g = acc.gradient(adv, s.label);
          for (std::size_t j = 0; j < adv.numel(); ++j) {
            float v = adv[j] + step * (g[j] > 0.0f ? 1.0f : (g[j] < 0.0f ? -1.0f : 0.0f));
            v = std::clamp(v, s.image[j] - params_.epsilon, s.image[j] + params_.epsilon);
            adv[j] = std::clamp(v, 0.0f, 1.0f);
          }
        }
        s.image = blend_trigger(adv, trigger_);
      } else {
        s.image = blend_trigger(s.image, trigger_);
        // Uniform wrong label.
        int wrong = int(uniform_int(rng, 0, raw.class_count - 2));
        if (wrong >= s.label) ++wrong;
        s.label = wrong;
      }
    }
    prepared_ = true;
    return published;
  }

  AuditVerdict audit(const ModelAccess& model, const DatasetBundle& claim,
                     const AuditContext& ctx) override {
    require_access(model);
    if (!prepared_) throw std::runtime_error("ubw: audit before prepare/load_secret");
    std::vector<int> preds, truth;
    std::vector<double> conf_triggered;
    if (clean_label_) {
      for (const Sample& s : claim.samples) {
        const Tensor triggered = blend_trigger(s.image, trigger_);
        const std::vector<float> pt = model.predict_probs(triggered);
        preds.push_back(int(std::max_element(pt.begin(), pt.end()) - pt.begin()));
        truth.push_back(s.label);
        conf_triggered.push_back(double(pt[std::size_t(s.label)]));
      }
    } else {
      for (std::size_t k = 0; k < poison_indices_.size(); ++k) {
        const Sample& s = claim.samples.at(poison_indices_[k]);
        const int orig = original_labels_[k];
        const std::vector<float> pt = model.predict_probs(s.image);
        preds.push_back(int(std::max_element(pt.begin(), pt.end()) - pt.begin()));
        truth.push_back(orig);
        conf_triggered.push_back(double(pt[std::size_t(orig)]));
      }
    }
    if (preds.size() < 2) throw std::invalid_argument("ubw: verification set too small");
    // Unforgeable reference: the model's natural true-class confidence on the
    // auditor's benign samples.
    std::vector<double> conf_benign;
    for (const Sample& s : ctx.auditor_aux.samples)
      conf_benign.push_back(double(model.predict_probs(s.image)[std::size_t(s.label)]));
    const double w = wsr(preds, WsrExpectation::differs_from_true(truth));
    // Dispersibility test: trained models lose true-class confidence under
    // the trigger by more than the margin relative to natural confidence.
    TestResult t =
        welch_t_test_one_sided(conf_benign, conf_triggered, ctx.thresholds.margin);
    AuditVerdict v;
    v.method = id();
    v.metrics["wsr"] = w;
    v.metrics["p_value"] = t.p_value;
    v.trained = t.p_value < ctx.thresholds.p_threshold;
    return v;
  }

  void save_secret(const std::string& dir) const override {
    std::filesystem::create_directories(dir);
    nlohmann::json j;
    j["version"] = 1;
    j["clean_label"] = clean_label_;
    j["poison_rate"] = params_.poison_rate;
    j["blend_weight"] = trigger_.blend_weight;
    j["trigger_shape"] = trigger_.image.shape;
    j["poison_indices"] = poison_indices_;
    j["original_labels"] = original_labels_;
    const std::string tag = clean_label_ ? "ubw_c" : "ubw_p";
    std::ofstream(dir + "/" + tag + "_secret.json") << j.dump(2);
    std::ofstream raw(dir + "/" + tag + "_trigger.bin", std::ios::binary);
    raw.write(reinterpret_cast<const char*>(trigger_.image.ptr()),
              std::streamsize(trigger_.image.numel() * sizeof(float)));
  }

  void load_secret(const std::string& dir) override {
    const std::string tag = clean_label_ ? "ubw_c" : "ubw_p";
    std::ifstream in(dir + "/" + tag + "_secret.json");
    if (!in) throw std::runtime_error("ubw: missing secret in " + dir);
    nlohmann::json j;
    in >> j;
    params_.poison_rate = j.at("poison_rate").get<double>();
    trigger_.blend_weight = j.at("blend_weight").get<float>();
    trigger_.target_label = 0;
    trigger_.image = Tensor(j.at("trigger_shape").get<std::vector<std::size_t>>());
    poison_indices_ = j.at("poison_indices").get<std::vector<std::size_t>>();
    original_labels_ = j.at("original_labels").get<std::vector<int>>();
    std::ifstream raw(dir + "/" + tag + "_trigger.bin", std::ios::binary);
    raw.read(reinterpret_cast<char*>(trigger_.image.ptr()),
             std::streamsize(trigger_.image.numel() * sizeof(float)));
    if (!raw) throw std::runtime_error("ubw: truncated trigger in " + dir);
    prepared_ = true;
  }

  const TriggerPattern& trigger() const { return trigger_; }

 private:
  bool clean_label_;
  UbwParams params_;
  TriggerPattern trigger_;
  std::vector<std::size_t> poison_indices_;
  std::vector<int> original_labels_;
  bool prepared_ = false;
};

}  // namespace auditbench
