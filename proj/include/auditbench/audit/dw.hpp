#pragma once

#include <filesystem>
#include <fstream>

#include "auditbench/audit/common.hpp"

namespace auditbench {

struct DwParams {
  double domain_rate = 0.1;        // fraction of the release moved into the domain
  float strength = 0.8f;           // initial stylization strength
  double fail_threshold = 30.0;    // benign surrogate accuracy (%) the domain must stay under
};

/// Hardly-generalized-domain watermark (external-feature, intrusive, label
/// access). prepare picks a fixed stylization transform (channel-permuted
/// inversion at a given strength), verifies by rejection against a benign
/// surrogate that models trained *without* the domain misclassify it, and
/// publishes the release with a fraction of samples replaced by their domain
/// versions (labels unchanged). audit measures WSR = correct-classification
/// rate on the transformed verification set; only models trained on the
/// published data classify the domain correctly.
class DwAudit final : public AuditMethod {
 public:
  explicit DwAudit(DwParams params = {}) : params_(params) {}

  AuditMethodId id() const override { return AuditMethodId::dw; }

  /// The secret domain transform: v'[c] = (1-s) v[c] + s (1 - v[perm(c)]).
  Tensor apply_domain(const Tensor& x) const {
    const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
    Tensor out(x.shape);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t src = (ch + 1) % c;
      for (std::size_t j = 0; j < hw; ++j) {
        const float v = x[ch * hw + j];
        const float w = 1.0f - x[src * hw + j];
        out[ch * hw + j] = std::clamp((1.0f - strength_) * v + strength_ * w, 0.0f, 1.0f);
      }
    }
    return out;
  }

  DatasetBundle prepare(const DatasetBundle& raw, const AuditContext& ctx) override {
    strength_ = params_.strength;
    // Rejection fit: a surrogate trained on clean auditor data must
    // misclassify the domain, otherwise the domain generalizes and the
    // watermark carries no signal. Strengthen until it separates.
    TrainConfig tc = ctx.auditor_train;
    tc.seed = derive_seed(ctx.seed, 0xd300ULL);
    auto surrogate = train_network(ctx.auditor_aux, tc);
    bool separated = false;
    for (int attempt = 0; attempt < 3; ++attempt) {
      DatasetBundle probe = ctx.auditor_aux;
      for (Sample& s : probe.samples) s.image = apply_domain(s.image);
      const double acc = evaluate_accuracy(*surrogate, probe);
      if (acc < params_.fail_threshold) { separated = true; break; }
      strength_ = std::min(1.0f, strength_ + 0.1f);
    }
    domain_fit_ok_ = separated;

    DatasetBundle published = raw;
    published.provenance = raw.provenance + "/dw_domain";
    const std::size_t n_domain =
        std::size_t(std::ceil(params_.domain_rate * double(raw.samples.size())));
    std::vector<std::size_t> idx(raw.samples.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng = make_rng(derive_seed(ctx.seed, 0xd301ULL));
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t k = 0; k < n_domain; ++k) {
      Sample& s = published.samples[idx[k]];
      s.image = apply_domain(s.image);  // label stays correct
    }
    prepared_ = true;
    return published;
  }

  AuditVerdict audit(const ModelAccess& model, const DatasetBundle& claim,
                     const AuditContext& ctx) override {
    require_access(model);
    if (!prepared_) throw std::runtime_error("dw: audit before prepare/load_secret");
    std::vector<int> preds, truth;
    // Verification on the claimed dataset: only models trained on its
    // published domain fraction classify the transformed samples correctly.
    for (const Sample& s : claim.samples) {
      preds.push_back(model.predict_label(apply_domain(s.image)));
      truth.push_back(s.label);
    }
    const double w = wsr(preds, WsrExpectation::equals_true(truth));
    AuditVerdict v;
    v.method = id();
    v.metrics["wsr"] = w;
    v.metrics["domain_fit_ok"] = domain_fit_ok_ ? 1.0 : 0.0;
    v.trained = w >= ctx.thresholds.wsr_threshold;
    return v;
  }

  void save_secret(const std::string& dir) const override {
    std::filesystem::create_directories(dir);
    nlohmann::json j;
    j["version"] = 1;
    j["strength"] = strength_;
    j["domain_rate"] = params_.domain_rate;
    j["domain_fit_ok"] = domain_fit_ok_;
    std::ofstream(dir + "/dw_secret.json") << j.dump(2);
  }

  void load_secret(const std::string& dir) override {
    std::ifstream in(dir + "/dw_secret.json");
    if (!in) throw std::runtime_error("dw: missing secret in " + dir);
    nlohmann::json j;
    in >> j;
    strength_ = j.at("strength").get<float>();
    params_.domain_rate = j.at("domain_rate").get<double>();
    domain_fit_ok_ = j.at("domain_fit_ok").get<bool>();
    prepared_ = true;
  }

  bool domain_fit_ok() const { return domain_fit_ok_; }

 private:
  DwParams params_;
  float strength_ = 0.8f;
  bool domain_fit_ok_ = false;
  bool prepared_ = false;
};

}  // namespace auditbench
