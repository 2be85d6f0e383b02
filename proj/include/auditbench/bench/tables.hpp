#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "auditbench/bench/runner.hpp"

namespace auditbench {

/// Recomputes the trained/non-trained decision from stored metrics and the
/// thresholds; emitted pass/fail flags are never read back from the stored
/// decision field.
inline bool recompute_decision(AuditMethodId method,
                               const std::map<std::string, double>& metrics,
                               const AuditThresholds& th) {
  const auto get = [&](const char* k) {
    auto it = metrics.find(k);
    if (it == metrics.end())
      throw std::runtime_error(std::string("table: metric missing: ") + k);
    return it->second;
  };
  switch (method) {
    case AuditMethodId::mia:
    case AuditMethodId::rapid:
      return get("score") > get("score_threshold");
    case AuditMethodId::di:
    case AuditMethodId::dvbw:
    case AuditMethodId::ubw_p:
    case AuditMethodId::ubw_c:
    case AuditMethodId::zeromark:
      return get("p_value") < th.p_threshold;
    case AuditMethodId::dua:
      return get("cost_logits") < th.cost_threshold;
    case AuditMethodId::dw:
      return get("wsr") >= th.wsr_threshold;
  }
  throw std::invalid_argument("bad method id");
}

/// Per-method scores over the paper's five comparison dimensions, each in
/// [0,1]. The scoring rule is this benchmark's reconstruction (the source
/// figure gives no formula):
///   robustness      = fraction of evasion cells where the audit still fires
///   distinctiveness = fraction of forgery cells the audit resists
///   fidelity        = no-attack suspect accuracy / best no-attack accuracy
///   efficiency      = fastest method's (prepare+audit) time / this method's
///   stealthiness    = 1 - mean per-sample l_inf change of prepare
struct SummaryScores {
  double robustness = 0.0;
  double distinctiveness = 0.0;
  double fidelity = 0.0;
  double efficiency = 0.0;
  double stealthiness = 0.0;
  // Dimensions without any contributing cell are emitted as null, not 0.
  bool robustness_evaluated = false;
  bool distinctiveness_evaluated = false;

  nlohmann::json to_json() const {
    nlohmann::json j{{"fidelity", fidelity},
                     {"efficiency", efficiency},
                     {"stealthiness", stealthiness}};
    j["robustness"] = robustness_evaluated ? nlohmann::json(robustness)
                                           : nlohmann::json(nullptr);
    j["distinctiveness"] = distinctiveness_evaluated ? nlohmann::json(distinctiveness)
                                                     : nlohmann::json(nullptr);
    return j;
  }
};

namespace detail {

inline const ResultRecord* find_cell(const std::vector<ResultRecord>& records,
                                     const std::string& method,
                                     const std::string& attack) {
  for (const ResultRecord& r : records)
    if (r.method == method && r.attack_name == attack) return &r;
  return nullptr;
}

}  // namespace detail

/// Loads every stored cell record from a results directory.
inline std::vector<ResultRecord> load_results_dir(const std::filesystem::path& dir) {
  std::vector<ResultRecord> out;
  if (!std::filesystem::exists(dir)) return out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() != ".json" ||
        entry.path().filename() == "config.json")
      continue;
    std::ifstream in(entry.path());
    nlohmann::json j;
    in >> j;
    out.push_back(ResultRecord::from_json(j));
  }
  std::sort(out.begin(), out.end(), [](const ResultRecord& a, const ResultRecord& b) {
    return a.cell_id() < b.cell_id();
  });
  return out;
}

/// Loads every stored cell record of the experiment.
inline std::vector<ResultRecord> load_results(const ExperimentConfig& cfg) {
  return load_results_dir(std::filesystem::path(cfg.output_dir) / cfg.digest());
}

inline std::map<std::string, SummaryScores> summary_scores(
    const ExperimentConfig& cfg, const std::vector<ResultRecord>& records,
    const std::string& baseline_attack = "no_attack") {
  // cross-method normalizers from the no-attack baselines
  double best_acc = 0.0, best_time = std::numeric_limits<double>::infinity();
  for (const std::string& m : cfg.audit_methods)
    if (const ResultRecord* b = detail::find_cell(records, m, baseline_attack);
        b && !b->failed) {
      best_acc = std::max(best_acc, b->accuracy_clean);
      best_time = std::min(best_time, b->timings.prepare_s + b->timings.audit_s);
    }

  std::map<std::string, SummaryScores> out;
  for (const std::string& m : cfg.audit_methods) {
    SummaryScores s;
    std::size_t evasion = 0, evasion_ok = 0, forgery = 0, forgery_ok = 0;
    for (const ResultRecord& r : records) {
      if (r.method != m || r.failed) continue;
      const bool trained =
          recompute_decision(audit_method_from_string(m), r.verdict.metrics,
                             cfg.thresholds);
      if (r.attack_type == "evasion") {
        ++evasion;
        evasion_ok += trained;  // audit should still fire on the trained suspect
      } else if (r.attack_type == "forgery") {
        ++forgery;
        forgery_ok += !trained;  // audit should resist the forged claim
      }
    }
    s.robustness_evaluated = evasion > 0;
    s.distinctiveness_evaluated = forgery > 0;
    s.robustness = evasion ? double(evasion_ok) / double(evasion) : 0.0;
    s.distinctiveness = forgery ? double(forgery_ok) / double(forgery) : 0.0;
    if (const ResultRecord* b = detail::find_cell(records, m, baseline_attack);
        b && !b->failed) {
      s.fidelity = best_acc > 0.0 ? std::min(1.0, b->accuracy_clean / best_acc) : 0.0;
      const double t = b->timings.prepare_s + b->timings.audit_s;
      s.efficiency = t > 0.0 ? std::min(1.0, best_time / t) : 0.0;
      s.stealthiness = std::clamp(1.0 - b->prepare_linf, 0.0, 1.0);
    }
    out[m] = s;
  }
  return out;
}

/// Writes the verdict matrix (CSV + JSON) and the five-dimension summary.
/// Fails loudly when a requested grid cell has no record at all (neither a
/// verdict nor a failure).
inline void emit_tables(const ExperimentConfig& cfg,
                        const std::vector<ResultRecord>& records,
                        const std::string& out_dir) {
  if (records.empty()) throw std::runtime_error("emit_tables: no results");
  for (const std::string& m : cfg.audit_methods)
    for (const AttackEntry& a : cfg.attacks)
      if (!detail::find_cell(records, m, a.name))
        throw std::runtime_error("emit_tables: missing cell " + m + "__" + a.name +
                                 " (no result or failure record)");

  std::filesystem::create_directories(out_dir);

  // JSON matrix
  nlohmann::json matrix;
  matrix["config_digest"] = cfg.digest();
  for (const std::string& m : cfg.audit_methods) {
    nlohmann::json row;
    for (const AttackEntry& a : cfg.attacks) {
      const ResultRecord* r = detail::find_cell(records, m, a.name);
      nlohmann::json cell;
      if (r->failed) {
        cell["failed"] = true;
        cell["failure_stage"] = r->failure_stage;
        cell["error"] = r->error;
      } else {
        cell["metrics"] = r->verdict.metrics;
        cell["accuracy_clean"] = r->accuracy_clean;
        cell["decision"] = recompute_decision(audit_method_from_string(m),
                                              r->verdict.metrics, cfg.thresholds)
                               ? "trained"
                               : "non_trained";
        cell["timings"] = r->timings.to_json();
      }
      row[a.name] = cell;
    }
    matrix["cells"][m] = row;
  }
  nlohmann::json summaries;
  for (const auto& [m, s] : summary_scores(cfg, records)) summaries[m] = s.to_json();
  matrix["summary_scores"] = summaries;
  std::ofstream(out_dir + "/verdicts.json") << matrix.dump(2) << "\n";

  // CSV: one row per (method, metric), one column per attack
  std::set<std::string> metric_names;
  for (const ResultRecord& r : records)
    if (!r.failed)
      for (const auto& [k, v] : r.verdict.metrics) metric_names.insert(k);
  metric_names.insert("accuracy_clean");
  metric_names.insert("decision");

  std::ostringstream csv;
  csv << "method,metric";
  for (const AttackEntry& a : cfg.attacks) csv << "," << a.name;
  csv << "\n";
  for (const std::string& m : cfg.audit_methods)
    for (const std::string& metric : metric_names) {
      csv << m << "," << metric;
      for (const AttackEntry& a : cfg.attacks) {
        const ResultRecord* r = detail::find_cell(records, m, a.name);
        csv << ",";
        if (r->failed) {
          csv << "FAILED:" << r->failure_stage;
        } else if (metric == "decision") {
          csv << (recompute_decision(audit_method_from_string(m), r->verdict.metrics,
                                     cfg.thresholds)
                      ? "trained"
                      : "non_trained");
        } else if (metric == "accuracy_clean") {
          csv << r->accuracy_clean;
        } else if (auto it = r->verdict.metrics.find(metric);
                   it != r->verdict.metrics.end()) {
          csv << it->second;
        }
      }
      csv << "\n";
    }
  std::ofstream(out_dir + "/table.csv") << csv.str();
}

}  // namespace auditbench
