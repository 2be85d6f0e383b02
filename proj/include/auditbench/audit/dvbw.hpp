#pragma once

#include <filesystem>
#include <fstream>

#include "auditbench/audit/common.hpp"
#include "auditbench/data/io.hpp"

namespace auditbench {

struct DvbwParams {
  double poison_rate = 0.1;
  int target_label = 4;
  float blend_weight = 0.2f;
};

/// Poison-label backdoor watermark (external-feature, intrusive, logits
/// access). prepare blends a secret trigger into ceil(poison_rate * N)
/// samples and relabels them to the target class; audit queries the claimed
/// dataset at the secret poisoned indices (those samples already carry the
/// trigger) and measures WSR (target predictions among samples whose original
/// label is not the target) plus a one-sided Welch test of their target-class
/// confidence against the auditor's benign reference samples. Verifying on
/// the claim itself is what makes the audit answer "was THIS dataset trained
/// on"; the benign reference comes from the auditor's own split so the
/// claimant cannot perturb both sides of the test.
class DvbwAudit final : public AuditMethod {
 public:
  explicit DvbwAudit(DvbwParams params = {}) : params_(params) {
    if (params_.poison_rate < 0.0 || params_.poison_rate > 0.5)
      throw std::invalid_argument("dvbw: poison_rate outside [0, 0.5]");
  }

  AuditMethodId id() const override { return AuditMethodId::dvbw; }

  DatasetBundle prepare(const DatasetBundle& raw, const AuditContext& ctx) override {
    const Tensor& shape_ref = raw.samples.at(0).image;
    trigger_ = make_noise_trigger(
        {shape_ref.dim(0), shape_ref.dim(1), shape_ref.dim(2)}, params_.target_label,
        params_.blend_weight, derive_seed(ctx.seed, 0xd0b0ULL));
    DatasetBundle published = raw;
    published.provenance = raw.provenance + "/dvbw_poisoned";
    const std::size_t n_poison =
        std::size_t(std::ceil(params_.poison_rate * double(raw.samples.size())));
    std::vector<std::size_t> idx(raw.samples.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng = make_rng(derive_seed(ctx.seed, 0xd0b1ULL));
    std::shuffle(idx.begin(), idx.end(), rng);
    poison_indices_.clear();
    original_labels_.clear();
    for (std::size_t k = 0; k < n_poison; ++k) {
      Sample& s = published.samples[idx[k]];
      poison_indices_.push_back(idx[k]);
      original_labels_.push_back(s.label);
      s.image = blend_trigger(s.image, trigger_);
      s.label = trigger_.target_label;
    }
    prepared_ = true;
    return published;
  }

  AuditVerdict audit(const ModelAccess& model, const DatasetBundle& claim,
                     const AuditContext& ctx) override {
    require_access(model);
    if (!prepared_) throw std::runtime_error("dvbw: audit before prepare/load_secret");
    // Verification set: the claim's secretly poisoned samples whose original
    // label is not the target, so chance-level WSR stays near
    // 100/class_count. The trigger is already in those samples; blending it
    // again at audit time would overwrite whatever the claimant submitted and
    // stop the audit from answering about THIS claim.
    std::vector<int> preds;
    std::vector<double> conf_triggered;
    for (std::size_t k = 0; k < poison_indices_.size(); ++k) {
      if (original_labels_[k] == trigger_.target_label) continue;
      const Sample& s = claim.samples.at(poison_indices_[k]);
      const std::vector<float> pt = model.predict_probs(s.image);
      preds.push_back(int(std::max_element(pt.begin(), pt.end()) - pt.begin()));
      conf_triggered.push_back(double(pt[std::size_t(trigger_.target_label)]));
    }
    if (preds.size() < 2) throw std::invalid_argument("dvbw: verification set too small");
    // Unforgeable null reference: target-class confidence on the auditor's
    // own benign samples.
    std::vector<double> conf_benign;
    for (const Sample& s : ctx.auditor_aux.samples) {
      if (s.label == trigger_.target_label) continue;
      const std::vector<float> pb = model.predict_probs(s.image);
      conf_benign.push_back(double(pb[std::size_t(trigger_.target_label)]));
    }
    const double w = wsr(preds, WsrExpectation::equals_target(trigger_.target_label));
    TestResult t =
        welch_t_test_one_sided(conf_triggered, conf_benign, ctx.thresholds.margin);
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
    j["poison_rate"] = params_.poison_rate;
    j["target_label"] = trigger_.target_label;
    j["blend_weight"] = trigger_.blend_weight;
    j["trigger_shape"] = trigger_.image.shape;
    j["poison_indices"] = poison_indices_;
    j["original_labels"] = original_labels_;
    std::ofstream(dir + "/dvbw_secret.json") << j.dump(2);
    std::ofstream raw(dir + "/dvbw_trigger.bin", std::ios::binary);
    raw.write(reinterpret_cast<const char*>(trigger_.image.ptr()),
              std::streamsize(trigger_.image.numel() * sizeof(float)));
  }

  void load_secret(const std::string& dir) override {
    std::ifstream in(dir + "/dvbw_secret.json");
    if (!in) throw std::runtime_error("dvbw: missing secret in " + dir);
    nlohmann::json j;
    in >> j;
    params_.poison_rate = j.at("poison_rate").get<double>();
    trigger_.target_label = j.at("target_label").get<int>();
    trigger_.blend_weight = j.at("blend_weight").get<float>();
    trigger_.image = Tensor(j.at("trigger_shape").get<std::vector<std::size_t>>());
    poison_indices_ = j.at("poison_indices").get<std::vector<std::size_t>>();
    original_labels_ = j.at("original_labels").get<std::vector<int>>();
    std::ifstream raw(dir + "/dvbw_trigger.bin", std::ios::binary);
    raw.read(reinterpret_cast<char*>(trigger_.image.ptr()),
             std::streamsize(trigger_.image.numel() * sizeof(float)));
    if (!raw) throw std::runtime_error("dvbw: truncated trigger in " + dir);
    prepared_ = true;
  }

  const TriggerPattern& trigger() const { return trigger_; }

 private:
  DvbwParams params_;
  TriggerPattern trigger_;
  std::vector<std::size_t> poison_indices_;
  std::vector<int> original_labels_;
  bool prepared_ = false;
};

}  // namespace auditbench
