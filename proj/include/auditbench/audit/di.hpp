#pragma once

#include <filesystem>
#include <fstream>

#include "auditbench/audit/common.hpp"

namespace auditbench {

struct DiParams {
  std::size_t directions = 10;   // random directions per sample
  std::size_t max_steps = 50;    // walk budget per direction
  float step_size = 0.05f;       // l_inf step per walk iteration
  std::size_t reference_size = 64;  // held-out reference samples per audit
};

/// Per-sample prediction-margin embedding via Blind Walk: walk along k random
/// signed directions until the label flips; the sorted flip distances form
/// the embedding. Directions that never flip contribute the walk ceiling and
/// are counted as skipped.
struct BlindWalkResult {
  std::vector<double> embedding;  // sorted distances, size = directions
  std::size_t skipped = 0;        // directions with no flip within budget
};

inline BlindWalkResult blind_walk(const ModelAccess& model, const Tensor& x,
                                  const DiParams& p, std::uint64_t seed) {
  const int base = model.predict_label(x);
  Rng rng = make_rng(seed);
  BlindWalkResult r;
  for (std::size_t d = 0; d < p.directions; ++d) {
    Tensor dir(x.shape);
    for (float& v : dir.data) v = uniform(rng, 0.0f, 1.0f) < 0.5f ? -1.0f : 1.0f;
    double dist = double(p.max_steps) * double(p.step_size);  // ceiling
    Tensor probe = x;
    for (std::size_t s = 1; s <= p.max_steps; ++s) {
      for (std::size_t i = 0; i < probe.numel(); ++i)
        probe[i] = std::clamp(x[i] + float(s) * p.step_size * dir[i], 0.0f, 1.0f);
      if (model.predict_label(probe) != base) {
        dist = double(s) * double(p.step_size);
        break;
      }
      if (s == p.max_steps) ++r.skipped;
    }
    r.embedding.push_back(dist);
  }
  std::sort(r.embedding.begin(), r.embedding.end());
  return r;
}

/// Dataset-inference audit (internal-feature, non-intrusive, label access).
/// A confidence regressor is pre-trained on an auditor-side model: members of
/// that model's training split get label 1, held-out samples 0. At audit
/// time the regressor maps blind-walk embeddings of the claim and of an
/// independent reference set to membership confidences; Diff is the clamped
/// mean gap and the p-value comes from a one-sided two-sample test.
class DiAudit final : public AuditMethod {
 public:
  explicit DiAudit(DiParams params = {}) : params_(params) {}

  AuditMethodId id() const override { return AuditMethodId::di; }

  DatasetBundle prepare(const DatasetBundle& raw, const AuditContext& ctx) override {
    if (ctx.auditor_aux.samples.size() < 8)
      throw std::invalid_argument("di: auditor_aux too small");
    const std::uint64_t pseed = derive_seed(ctx.seed, 0xd1d1ULL);
    std::vector<std::size_t> idx(ctx.auditor_aux.samples.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng = make_rng(pseed);
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::size_t half = idx.size() / 2;
    DatasetBundle in = detail::subset(
        ctx.auditor_aux, {idx.begin(), idx.begin() + std::ptrdiff_t(half)});
    DatasetBundle out = detail::subset(
        ctx.auditor_aux, {idx.begin() + std::ptrdiff_t(half), idx.end()});
    TrainConfig tc = ctx.auditor_train;
    tc.seed = pseed;
    auto aud_model = train_network(in, tc);
    ModelAccess acc = make_white_box(aud_model).restrict(AccessLevel::label_only);

    std::vector<std::vector<double>> xs;
    std::vector<int> ys;
    std::size_t q = 0;
    for (const Sample& s : in.samples) {
      xs.push_back(blind_walk(acc, s.image, params_, derive_seed(pseed, 1000 + q++)).embedding);
      ys.push_back(1);
    }
    for (const Sample& s : out.samples) {
      xs.push_back(blind_walk(acc, s.image, params_, derive_seed(pseed, 1000 + q++)).embedding);
      ys.push_back(0);
    }
    regressor_.fit(xs, ys);
    prepared_ = true;
    return raw;  // non-intrusive
  }

  AuditVerdict audit(const ModelAccess& model, const DatasetBundle& claim,
                     const AuditContext& ctx) override {
    require_access(model);
    if (!prepared_) throw std::runtime_error("di: audit before prepare/load_secret");
    const std::uint64_t aseed = derive_seed(ctx.seed, 0xd1a0ULL);
    std::size_t skipped = 0, q = 0;
    std::vector<double> c_claim, c_ref;
    for (const Sample& s : claim.samples) {
      BlindWalkResult r = blind_walk(model, s.image, params_, derive_seed(aseed, q++));
      skipped += r.skipped;
      c_claim.push_back(regressor_.predict(r.embedding));
    }
    const std::size_t n_ref = std::min(params_.reference_size, ctx.auditor_aux.samples.size());
    for (std::size_t i = 0; i < n_ref; ++i) {
      const Sample& s = ctx.auditor_aux.samples[i];
      BlindWalkResult r = blind_walk(model, s.image, params_, derive_seed(aseed, q++));
      skipped += r.skipped;
      c_ref.push_back(regressor_.predict(r.embedding));
    }
    const double diff =
        std::max(0.0, detail::mean_of(c_claim) - detail::mean_of(c_ref));
    TestResult t = welch_t_test_one_sided(c_claim, c_ref, 0.0);
    AuditVerdict v;
    v.method = id();
    v.metrics["p_value"] = t.p_value;
    v.metrics["diff"] = diff;
    v.metrics["skipped_directions"] = double(skipped);
    v.trained = t.p_value < ctx.thresholds.p_threshold;
    return v;
  }

  void save_secret(const std::string& dir) const override {
    std::filesystem::create_directories(dir);
    nlohmann::json j;
    j["version"] = 1;
    j["regressor"] = regressor_.to_json();
    std::ofstream(dir + "/di_secret.json") << j.dump(2);
  }

  void load_secret(const std::string& dir) override {
    std::ifstream in(dir + "/di_secret.json");
    if (!in) throw std::runtime_error("di: missing secret in " + dir);
    nlohmann::json j;
    in >> j;
    regressor_ = detail::LogisticModel::from_json(j.at("regressor"));
    prepared_ = true;
  }

 private:
  DiParams params_;
  detail::LogisticModel regressor_;
  bool prepared_ = false;
};

}  // namespace auditbench
