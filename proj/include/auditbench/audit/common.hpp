#pragma once

#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "auditbench/data/bundle.hpp"
#include "auditbench/nn/access.hpp"
#include "auditbench/nn/train.hpp"
#include "auditbench/stats/stats.hpp"

namespace auditbench {

enum class AuditMethodId { mia, rapid, di, dua, dvbw, ubw_p, ubw_c, zeromark, dw };

inline const char* to_string(AuditMethodId m) {
  switch (m) {
    case AuditMethodId::mia: return "mia";
    case AuditMethodId::rapid: return "rapid";
    case AuditMethodId::di: return "di";
    case AuditMethodId::dua: return "dua";
    case AuditMethodId::dvbw: return "dvbw";
    case AuditMethodId::ubw_p: return "ubw_p";
    case AuditMethodId::ubw_c: return "ubw_c";
    case AuditMethodId::zeromark: return "zeromark";
    case AuditMethodId::dw: return "dw";
  }
  return "?";
}

inline AuditMethodId audit_method_from_string(const std::string& s) {
  for (AuditMethodId m : {AuditMethodId::mia, AuditMethodId::rapid, AuditMethodId::di,
                          AuditMethodId::dua, AuditMethodId::dvbw, AuditMethodId::ubw_p,
                          AuditMethodId::ubw_c, AuditMethodId::zeromark, AuditMethodId::dw})
    if (s == to_string(m)) return m;
  throw std::invalid_argument("unknown audit method: " + s);
}

enum class FeatureClass { internal, external };

/// Decision thresholds from the metrics layer, kept in one record so every
/// method applies the same rules: p < p_threshold means trained, WSR below
/// wsr_threshold signals non-trained, sequential cost at 100% signals
/// non-trained. score_threshold is calibrated per experiment for the
/// membership-score methods; margin is the paired-test margin for
/// external-feature verification.
struct AuditThresholds {
  double p_threshold = 0.05;
  double wsr_threshold = 25.0;
  double score_threshold = 0.5;
  double cost_threshold = 100.0;
  double margin = 0.2;
};

/// Static description of one method: taxonomy row plus access requirement.
struct AuditMethodSpec {
  AuditMethodId id;
  FeatureClass feature_class;
  AccessLevel required_access;
  bool intrusive;  // non-intrusive methods have identity prepare
};

inline AuditMethodSpec audit_method_spec(AuditMethodId id) {
  switch (id) {
    case AuditMethodId::mia:
      return {id, FeatureClass::internal, AccessLevel::logits, false};
    case AuditMethodId::rapid:
      return {id, FeatureClass::internal, AccessLevel::logits, false};
    case AuditMethodId::di:
      return {id, FeatureClass::internal, AccessLevel::label_only, false};
    case AuditMethodId::dua:
      return {id, FeatureClass::external, AccessLevel::logits, true};
    case AuditMethodId::dvbw:
      return {id, FeatureClass::external, AccessLevel::logits, true};
    case AuditMethodId::ubw_p:
      return {id, FeatureClass::external, AccessLevel::logits, true};
    case AuditMethodId::ubw_c:
      return {id, FeatureClass::external, AccessLevel::logits, true};
    case AuditMethodId::zeromark:
      return {id, FeatureClass::external, AccessLevel::label_only, true};
    case AuditMethodId::dw:
      return {id, FeatureClass::external, AccessLevel::label_only, true};
  }
  throw std::invalid_argument("bad method id");
}

/// Audit outcome: the trained/non-trained decision plus every metric the
/// method computed (p_value, wsr, score, diff, cost_logits, ...).
struct AuditVerdict {
  AuditMethodId method = AuditMethodId::mia;
  bool trained = false;
  std::map<std::string, double> metrics;
  std::string config_digest;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["method_id"] = to_string(method);
    j["decision"] = trained ? "trained" : "non_trained";
    j["metrics"] = metrics;
    j["config_digest"] = config_digest;
    return j;
  }

  static AuditVerdict from_json(const nlohmann::json& j) {
    AuditVerdict v;
    v.method = audit_method_from_string(j.at("method_id").get<std::string>());
    v.trained = j.at("decision").get<std::string>() == "trained";
    v.metrics = j.at("metrics").get<std::map<std::string, double>>();
    v.config_digest = j.value("config_digest", "");
    return v;
  }
};

/// Auditor-side resources shared by prepare and audit: the auditor's private
/// data split, a training recipe for auditor-side models (shadow, reference,
/// surrogate), the decision thresholds, and the experiment seed.
struct AuditContext {
  DatasetBundle auditor_aux;
  TrainConfig auditor_train;
  AuditThresholds thresholds;
  std::uint64_t seed = 0;
};

/// One auditing method as a (prepare, audit) pair. prepare transforms the raw
/// dataset before release and stores the method's secret internally; audit
/// inspects a suspicious model handle and returns a verdict. Secrets are
/// immutable after prepare and serializable per method.
class AuditMethod {
 public:
  virtual ~AuditMethod() = default;
  virtual AuditMethodId id() const = 0;
  AuditMethodSpec spec() const { return audit_method_spec(id()); }

  virtual DatasetBundle prepare(const DatasetBundle& raw, const AuditContext& ctx) = 0;
  virtual AuditVerdict audit(const ModelAccess& model, const DatasetBundle& claim,
                             const AuditContext& ctx) = 0;

  virtual void save_secret(const std::string& dir) const = 0;
  virtual void load_secret(const std::string& dir) = 0;

 protected:
  /// Rejects model handles below the method's required access level.
  void require_access(const ModelAccess& model) const {
    if (int(model.level()) < int(spec().required_access))
      throw std::runtime_error(std::string(to_string(id())) +
                               ": model access below required level " +
                               to_string(spec().required_access));
  }
};

// --- shared auditor-side helpers -------------------------------------------

namespace detail {

/// True-class probability of each sample under the model (logits access).
inline std::vector<double> true_class_confidences(const ModelAccess& model,
                                                  const DatasetBundle& data) {
  std::vector<double> out;
  out.reserve(data.samples.size());
  for (const Sample& s : data.samples) {
    const std::vector<float> p = model.predict_probs(s.image);
    out.push_back(double(p[std::size_t(s.label)]));
  }
  return out;
}

/// Tiny logistic-regression head trained by gradient descent; used for the
/// membership attack classifiers.
struct LogisticModel {
  std::vector<double> w;
  double b = 0.0;
  std::vector<double> mu, sigma;  // feature standardization fitted with fit()

  double predict(const std::vector<double>& x) const {
    double z = b;
    for (std::size_t i = 0; i < w.size(); ++i)
      z += w[i] * (mu.empty() ? x[i] : (x[i] - mu[i]) / sigma[i]);
    return 1.0 / (1.0 + std::exp(-z));
  }

  void fit(const std::vector<std::vector<double>>& xs, const std::vector<int>& ys,
           std::size_t iters = 2000, double lr = 0.5) {
    if (xs.empty() || xs.size() != ys.size())
      throw std::invalid_argument("logistic fit: bad training set");
    const std::size_t d = xs[0].size();
    const double n = double(xs.size());
    mu.assign(d, 0.0);
    sigma.assign(d, 0.0);
    for (const auto& x : xs)
      for (std::size_t j = 0; j < d; ++j) mu[j] += x[j];
    for (std::size_t j = 0; j < d; ++j) mu[j] /= n;
    for (const auto& x : xs)
      for (std::size_t j = 0; j < d; ++j) sigma[j] += (x[j] - mu[j]) * (x[j] - mu[j]);
    for (std::size_t j = 0; j < d; ++j) sigma[j] = std::max(std::sqrt(sigma[j] / n), 1e-9);
    w.assign(d, 0.0);
    b = 0.0;
    for (std::size_t it = 0; it < iters; ++it) {
      std::vector<double> gw(d, 0.0);
      double gb = 0.0;
      for (std::size_t i = 0; i < xs.size(); ++i) {
        const double e = predict(xs[i]) - double(ys[i]);
        for (std::size_t j = 0; j < d; ++j) gw[j] += e * (xs[i][j] - mu[j]) / sigma[j];
        gb += e;
      }
      for (std::size_t j = 0; j < d; ++j) w[j] -= lr * gw[j] / n;
      b -= lr * gb / n;
    }
  }

  nlohmann::json to_json() const {
    return {{"w", w}, {"b", b}, {"mu", mu}, {"sigma", sigma}};
  }
  static LogisticModel from_json(const nlohmann::json& j) {
    LogisticModel m;
    m.w = j.at("w").get<std::vector<double>>();
    m.b = j.at("b").get<double>();
    m.mu = j.value("mu", std::vector<double>{});
    m.sigma = j.value("sigma", std::vector<double>{});
    return m;
  }
};

/// Membership feature vector for one sample: true-class probability and its
/// clamped log-odds (the log-odds stretch the near-saturated region where
/// memorized members live), margin to the runner-up class, and entropy.
inline std::vector<double> membership_features(const std::vector<float>& probs, int label) {
  double p_true = double(probs[std::size_t(label)]);
  double top = 0.0, second = 0.0;
  double entropy = 0.0;
  for (float pf : probs) {
    const double p = double(pf);
    if (p > top) { second = top; top = p; }
    else if (p > second) second = p;
    if (p > 1e-12) entropy -= p * std::log(p);
  }
  const double pc = std::clamp(p_true, 1e-7, 1.0 - 1e-7);
  const double log_odds = std::log(pc / (1.0 - pc));
  return {p_true, log_odds, top - second, entropy};
}

/// Deterministic sub-bundle by index list.
inline DatasetBundle subset(const DatasetBundle& b, const std::vector<std::size_t>& idx) {
  DatasetBundle out;
  out.class_count = b.class_count;
  out.split_tag = b.split_tag;
  out.provenance = b.provenance + "/subset";
  out.samples.reserve(idx.size());
  for (std::size_t i : idx) out.samples.push_back(b.samples.at(i));
  return out;
}

inline std::vector<std::size_t> index_range(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> v(end - begin);
  std::iota(v.begin(), v.end(), begin);
  return v;
}

}  // namespace detail

}  // namespace auditbench
