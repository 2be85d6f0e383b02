#pragma once

#include <filesystem>
#include <fstream>

#include "auditbench/audit/common.hpp"
#include "auditbench/data/io.hpp"

namespace auditbench {
namespace detail {

/// Difference between the largest and second-largest entry.
inline double top_margin(const std::vector<float>& v) {
  if (v.size() < 2) throw std::invalid_argument("top_margin: need >= 2 scores");
  float top1 = -std::numeric_limits<float>::infinity(), top2 = top1;
  for (float s : v) {
    if (s > top1) { top2 = top1; top1 = s; }
    else if (s > top2) { top2 = s; }
  }
  return double(top1) - double(top2);
}

}  // namespace detail

struct DuaParams {
  float mark_strength = 0.5f;  // l_inf budget of each mark
  std::size_t patch = 6;       // side length of the marked square
  double alpha = 0.01;          // sequential-test level
};

/// Sequential-audit method (external-feature, intrusive, logits access). Each
/// datum is given two marked versions within a bounded l_inf budget: the
/// published version joins the released dataset, the hidden twin stays
/// secret. A model trained on the release memorizes the published marks, so
/// its confidence on published versions stochastically dominates the hidden
/// twins; a sequential e-process test over (published, hidden) score pairs
/// stops early for trained models. The published side is read from the
/// submitted claim (index-aligned with the secret twins), so the audit
/// answers "was THIS dataset trained on". The logits-channel score is the
/// label-free top-1-minus-top-2 logit margin; the label channel scores correctness against
/// the claimed labels. Cost = consumed/budget x 100 per channel; 100.00
/// signals non-trained.
class DuaAudit final : public AuditMethod {
 public:
  explicit DuaAudit(DuaParams params = {}) : params_(params) {}

  AuditMethodId id() const override { return AuditMethodId::dua; }

  DatasetBundle prepare(const DatasetBundle& raw, const AuditContext& ctx) override {
    const std::uint64_t pseed = derive_seed(ctx.seed, 0xd0a0ULL);
    DatasetBundle published = raw;
    published.provenance = raw.provenance + "/dua_marked";
    published_pairs_ = DatasetBundle{};
    hidden_pairs_ = DatasetBundle{};
    published_pairs_.class_count = hidden_pairs_.class_count = raw.class_count;
    published_pairs_.provenance = "dua_published_twins";
    hidden_pairs_.provenance = "dua_hidden_twins";
    Rng rng = make_rng(pseed);
    // Each datum gets one random patch location and a random signed pattern
    // on it; the published version adds the pattern, the hidden twin adds
    // its negation. For any model not trained on the release the two
    // versions are exchangeable (the pattern's sign is uniform), while a
    // model trained on the release memorizes the published pattern and
    // loses confidence on its negation.
    for (std::size_t i = 0; i < raw.samples.size(); ++i) {
      Sample pub = raw.samples[i];
      Sample hid = raw.samples[i];
      const std::size_t c = pub.image.dim(0), h = pub.image.dim(1), w = pub.image.dim(2);
      const std::size_t side = std::min({params_.patch, h, w});
      const std::size_t y0 = std::size_t(uniform_int(rng, 0, int(h - side)));
      const std::size_t x0 = std::size_t(uniform_int(rng, 0, int(w - side)));
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = y0; y < y0 + side; ++y)
          for (std::size_t x = x0; x < x0 + side; ++x) {
            const std::size_t j = (ch * h + y) * w + x;
            const float ma = uniform(rng, 0.0f, 1.0f) < 0.5f ? -params_.mark_strength
                                                             : params_.mark_strength;
            pub.image[j] = std::clamp(pub.image[j] + ma, 0.0f, 1.0f);
            hid.image[j] = std::clamp(hid.image[j] - ma, 0.0f, 1.0f);
          }
      published.samples[i] = pub;
      published_pairs_.samples.push_back(pub);
      hidden_pairs_.samples.push_back(hid);
    }
    prepared_ = true;
    return published;
  }

  AuditVerdict audit(const ModelAccess& model, const DatasetBundle& claim,
                     const AuditContext& ctx) override {
    require_access(model);
    if (!prepared_) throw std::runtime_error("dua: audit before prepare/load_secret");
    const std::size_t n = hidden_pairs_.samples.size();
    if (n < 2) throw std::invalid_argument("dua: fewer pairs than minimum sequential length");
    if (claim.samples.size() != n)
      throw std::invalid_argument("dua: claim does not align with the marked pairs");
    // Shuffle the pair order with the experiment seed so the sequential
    // consumption order is reproducible but not tied to dataset order.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng = make_rng(derive_seed(ctx.seed, 0xd0a1ULL));
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<std::pair<double, double>> logits_pairs, label_pairs;
    for (std::size_t i : order) {
      const Sample& pub = claim.samples[i];
      const Sample& hid = hidden_pairs_.samples[i];
      const std::vector<float> pp = model.predict_logits(pub.image);
      const std::vector<float> ph = model.predict_logits(hid.image);
      // Label-free top-1-minus-top-2 logit margin: raw logits never saturate
      // the way float softmax outputs do, so memorized published marks keep a
      // measurable edge over the hidden twins.
      logits_pairs.push_back({detail::top_margin(pp), detail::top_margin(ph)});
      const int lp = int(std::max_element(pp.begin(), pp.end()) - pp.begin());
      const int lh = int(std::max_element(ph.begin(), ph.end()) - ph.begin());
      label_pairs.push_back({lp == pub.label ? 1.0 : 0.0, lh == hid.label ? 1.0 : 0.0});
    }
    const double cost_logits = sequential_audit_test(logits_pairs, params_.alpha, n);
    const double cost_label = sequential_audit_test(label_pairs, params_.alpha, n);
    AuditVerdict v;
    v.method = id();
    v.metrics["cost_logits"] = cost_logits;
    v.metrics["cost_label"] = cost_label;
    v.trained = cost_logits < ctx.thresholds.cost_threshold;
    return v;
  }

  void save_secret(const std::string& dir) const override {
    std::filesystem::create_directories(dir);
    nlohmann::json j;
    j["version"] = 1;
    j["mark_strength"] = params_.mark_strength;
    j["patch"] = params_.patch;
    j["alpha"] = params_.alpha;
    std::ofstream(dir + "/dua_secret.json") << j.dump(2);
    serialize_bundle(published_pairs_, dir + "/dua_published");
    serialize_bundle(hidden_pairs_, dir + "/dua_hidden");
  }

  void load_secret(const std::string& dir) override {
    std::ifstream in(dir + "/dua_secret.json");
    if (!in) throw std::runtime_error("dua: missing secret in " + dir);
    nlohmann::json j;
    in >> j;
    params_.mark_strength = j.at("mark_strength").get<float>();
    params_.patch = j.value("patch", std::size_t(4));
    params_.alpha = j.at("alpha").get<double>();
    published_pairs_ = load_bundle(dir + "/dua_published");
    hidden_pairs_ = load_bundle(dir + "/dua_hidden");
    prepared_ = true;
  }

 private:
  DuaParams params_;
  DatasetBundle published_pairs_, hidden_pairs_;
  bool prepared_ = false;
};

}  // namespace auditbench
