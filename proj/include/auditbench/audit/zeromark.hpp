#pragma once

#include <filesystem>
#include <fstream>

#include "auditbench/audit/common.hpp"
#include "auditbench/data/io.hpp"

namespace auditbench {

struct ZeroMarkParams {
  double poison_rate = 0.1;
  int target_label = 4;
  float blend_weight = 0.2f;
  std::size_t bisect_iters = 12;       // binary-search refinement steps
  std::size_t gradient_queries = 48;   // sign queries per boundary gradient
  float probe_radius = 4.0f / 255.0f;  // finite-difference probe length
  std::size_t max_samples = 48;        // benign samples used per audit
};

/// Label-only backdoor-watermark verification (external-feature, intrusive).
/// prepare embeds the same poison-label trigger as the blended backdoor
/// method; audit never queries probabilities and verifies on the claimed
/// dataset's non-target samples. For each benign sample it
/// binary-searches along the blend path toward the triggered version for the
/// decision boundary, estimates the boundary gradient from label-only sign
/// queries in random directions, and runs a cosine-similarity test of the
/// estimated gradients against the secret trigger pattern versus random
/// nulls; boundary gradients of watermarked models align with the trigger.
class ZeroMarkAudit final : public AuditMethod {
 public:
  explicit ZeroMarkAudit(ZeroMarkParams params = {}) : params_(params) {}

  AuditMethodId id() const override { return AuditMethodId::zeromark; }

  DatasetBundle prepare(const DatasetBundle& raw, const AuditContext& ctx) override {
    const Tensor& shape_ref = raw.samples.at(0).image;
    trigger_ = make_noise_trigger(
        {shape_ref.dim(0), shape_ref.dim(1), shape_ref.dim(2)}, params_.target_label,
        params_.blend_weight, derive_seed(ctx.seed, 0x2e40ULL));
    DatasetBundle published = raw;
    published.provenance = raw.provenance + "/zeromark_poisoned";
    const std::size_t n_poison =
        std::size_t(std::ceil(params_.poison_rate * double(raw.samples.size())));
    std::vector<std::size_t> idx(raw.samples.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng = make_rng(derive_seed(ctx.seed, 0x2e41ULL));
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t k = 0; k < n_poison; ++k) {
      Sample& s = published.samples[idx[k]];
      s.image = blend_trigger(s.image, trigger_);
      s.label = trigger_.target_label;
    }
    prepared_ = true;
    return published;
  }

  AuditVerdict audit(const ModelAccess& model, const DatasetBundle& claim,
                     const AuditContext& ctx) override {
    require_access(model);
    if (!prepared_) throw std::runtime_error("zeromark: audit before prepare/load_secret");
    Rng rng = make_rng(derive_seed(ctx.seed, 0x2e42ULL));

    std::vector<int> preds;
    std::vector<Tensor> grads;
    std::size_t skipped = 0, used = 0;
    // Centered trigger direction: the blend moves x toward w * (trigger - x);
    // the x-dependent part averages out, so the centered trigger is the
    // common alignment target.
    Tensor pattern = trigger_.image;
    float mean = 0.0f;
    for (float v : pattern.data) mean += v;
    mean /= float(pattern.numel());
    for (float& v : pattern.data) v -= mean;

    for (const Sample& s : claim.samples) {
      if (s.label == trigger_.target_label) continue;
      const Tensor triggered = blend_trigger(s.image, trigger_);
      preds.push_back(model.predict_label(triggered));
      if (used >= params_.max_samples) continue;
      ++used;
      // Boundary search along the blend path x + t (triggered - x).
      const int base = model.predict_label(s.image);
      if (model.predict_label(triggered) == base) { ++skipped; continue; }
      float lo = 0.0f, hi = 1.0f;
      for (std::size_t it = 0; it < params_.bisect_iters; ++it) {
        const float mid = 0.5f * (lo + hi);
        Tensor probe = s.image;
        for (std::size_t j = 0; j < probe.numel(); ++j)
          probe[j] += mid * (triggered[j] - probe[j]);
        if (model.predict_label(probe) == base) lo = mid; else hi = mid;
      }
      Tensor boundary = s.image;
      const float tb = 0.5f * (lo + hi);
      for (std::size_t j = 0; j < boundary.numel(); ++j)
        boundary[j] += tb * (triggered[j] - boundary[j]);
      // Label-only gradient estimate: random-direction sign queries. A flip
      // away from the base class along +u means the boundary normal has a
      // positive component along u.
      Tensor g(boundary.shape);
      for (std::size_t q = 0; q < params_.gradient_queries; ++q) {
        Tensor u(boundary.shape);
        for (float& v : u.data) v = uniform(rng, 0.0f, 1.0f) < 0.5f ? -1.0f : 1.0f;
        Tensor probe = boundary;
        for (std::size_t j = 0; j < probe.numel(); ++j)
          probe[j] = std::clamp(probe[j] + params_.probe_radius * u[j], 0.0f, 1.0f);
        const float sign = model.predict_label(probe) != base ? 1.0f : -1.0f;
        for (std::size_t j = 0; j < g.numel(); ++j) g[j] += sign * u[j];
      }
      if (g.l2_norm() > 0.0f) grads.push_back(std::move(g));
      else ++skipped;
    }
    if (preds.size() < 2) throw std::invalid_argument("zeromark: verification set too small");
    const double w = wsr(preds, WsrExpectation::equals_target(trigger_.target_label));

    AuditVerdict v;
    v.method = id();
    v.metrics["wsr"] = w;
    v.metrics["skipped_samples"] = double(skipped);
    if (grads.size() < 2) {
      // Boundary search failed almost everywhere: no alignment evidence.
      v.metrics["p_value"] = 1.0;
      v.trained = false;
      return v;
    }
    // Null distribution: random sign vectors of the same shape.
    std::vector<Tensor> nulls;
    for (std::size_t i = 0; i < std::max<std::size_t>(grads.size(), 16); ++i) {
      Tensor nu(pattern.shape);
      for (float& x : nu.data) x = uniform(rng, 0.0f, 1.0f) < 0.5f ? -1.0f : 1.0f;
      nulls.push_back(std::move(nu));
    }
    TestResult t = cosine_similarity_test(grads, pattern, nulls);
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
    std::ofstream(dir + "/zeromark_secret.json") << j.dump(2);
    std::ofstream raw(dir + "/zeromark_trigger.bin", std::ios::binary);
    raw.write(reinterpret_cast<const char*>(trigger_.image.ptr()),
              std::streamsize(trigger_.image.numel() * sizeof(float)));
  }

  void load_secret(const std::string& dir) override {
    std::ifstream in(dir + "/zeromark_secret.json");
    if (!in) throw std::runtime_error("zeromark: missing secret in " + dir);
    nlohmann::json j;
    in >> j;
    params_.poison_rate = j.at("poison_rate").get<double>();
    trigger_.target_label = j.at("target_label").get<int>();
    trigger_.blend_weight = j.at("blend_weight").get<float>();
    trigger_.image = Tensor(j.at("trigger_shape").get<std::vector<std::size_t>>());
    std::ifstream raw(dir + "/zeromark_trigger.bin", std::ios::binary);
    raw.read(reinterpret_cast<char*>(trigger_.image.ptr()),
             std::streamsize(trigger_.image.numel() * sizeof(float)));
    if (!raw) throw std::runtime_error("zeromark: truncated trigger in " + dir);
    prepared_ = true;
  }

  const TriggerPattern& trigger() const { return trigger_; }

 private:
  ZeroMarkParams params_;
  TriggerPattern trigger_;
  bool prepared_ = false;
};

}  // namespace auditbench
