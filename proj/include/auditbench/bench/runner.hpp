#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>

#include "auditbench/attack/pipeline.hpp"
#include "auditbench/audit/registry.hpp"
#include "auditbench/bench/config.hpp"
#include "auditbench/forgery/forge.hpp"

namespace auditbench {

struct PhaseTimings {
  double prepare_s = 0.0;  // audit-method prepare (marking, shadow models, ...)
  double attack_s = 0.0;   // attack-owned work (preprocessing, wrapper fitting, forging)
  double train_s = 0.0;    // suspect / independent model training
  double audit_s = 0.0;    // verdict computation
  double total_s = 0.0;

  nlohmann::json to_json() const {
    return {{"prepare_s", prepare_s}, {"attack_s", attack_s}, {"train_s", train_s},
            {"audit_s", audit_s},     {"total_s", total_s}};
  }
  static PhaseTimings from_json(const nlohmann::json& j) {
    PhaseTimings t;
    t.prepare_s = j.value("prepare_s", 0.0);
    t.attack_s = j.value("attack_s", 0.0);
    t.train_s = j.value("train_s", 0.0);
    t.audit_s = j.value("audit_s", 0.0);
    t.total_s = j.value("total_s", 0.0);
    return t;
  }
};

/// One grid cell's outcome: either a verdict with timings or a failure record
/// carrying the stage where it broke. Records are append-only on disk.
struct ResultRecord {
  std::string config_digest;
  std::string method;
  std::string attack_name;
  std::string attack_type;  // none | evasion | forgery
  bool failed = false;
  std::string failure_stage;
  std::string error;
  AuditVerdict verdict;
  double accuracy_clean = 0.0;  // suspect accuracy on the auditor split (%)
  double prepare_linf = 0.0;    // mean per-sample l_inf change introduced by prepare
  PhaseTimings timings;
  nlohmann::json attack_log = nlohmann::json::object();
  nlohmann::json environment = nlohmann::json::object();

  std::string cell_id() const { return method + "__" + attack_name; }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["config_digest"] = config_digest;
    j["method"] = method;
    j["attack_name"] = attack_name;
    j["attack_type"] = attack_type;
    j["failed"] = failed;
    if (failed) {
      j["failure_stage"] = failure_stage;
      j["error"] = error;
    } else {
      j["verdict"] = verdict.to_json();
      j["accuracy_clean"] = accuracy_clean;
      j["prepare_linf"] = prepare_linf;
    }
    j["timings"] = timings.to_json();
    j["attack_log"] = attack_log;
    j["environment"] = environment;
    return j;
  }

  static ResultRecord from_json(const nlohmann::json& j) {
    ResultRecord r;
    r.config_digest = j.at("config_digest").get<std::string>();
    r.method = j.at("method").get<std::string>();
    r.attack_name = j.at("attack_name").get<std::string>();
    r.attack_type = j.value("attack_type", "none");
    r.failed = j.value("failed", false);
    if (r.failed) {
      r.failure_stage = j.value("failure_stage", "");
      r.error = j.value("error", "");
    } else {
      r.verdict = AuditVerdict::from_json(j.at("verdict"));
      r.accuracy_clean = j.value("accuracy_clean", 0.0);
      r.prepare_linf = j.value("prepare_linf", 0.0);
    }
    r.timings = PhaseTimings::from_json(j.value("timings", nlohmann::json::object()));
    r.attack_log = j.value("attack_log", nlohmann::json::object());
    r.environment = j.value("environment", nlohmann::json::object());
    return r;
  }
};

namespace detail {

inline nlohmann::json environment_fingerprint() {
  nlohmann::json j;
#if defined(__clang__)
  j["compiler"] = std::string("clang ") + __clang_version__;
#elif defined(__GNUC__)
  j["compiler"] = "gcc " + std::to_string(__GNUC__) + "." + std::to_string(__GNUC_MINOR__);
#else
  j["compiler"] = "unknown";
#endif
#if defined(__linux__)
  j["platform"] = "linux";
#elif defined(__APPLE__)
  j["platform"] = "darwin";
#else
  j["platform"] = "other";
#endif
  j["pointer_bits"] = int(sizeof(void*) * 8);
  return j;
}

class StageClock {
 public:
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - mark_).count();
    mark_ = now;
    return s;
  }
  double total() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
  std::chrono::steady_clock::time_point mark_ = start_;
};

}  // namespace detail

/// Executes the (audit method x attack) grid of one experiment. Splits are
/// derived once; the independent model used by forgery cells is trained once
/// and reused. Completed cells are skipped by digest unless forced.
class BenchRunner {
 public:
  explicit BenchRunner(ExperimentConfig config) : cfg_(std::move(config)) {
    corpus_ = cfg_.dataset.load(cfg_.seed);
    auto parts = split_dataset(corpus_, cfg_.splits, cfg_.seed);
    release_ = std::move(parts[0]);
    auditor_ = std::move(parts[1]);
    attacker_ = std::move(parts[2]);
    ctx_.auditor_aux = auditor_;
    ctx_.auditor_train = cfg_.auditor_train;
    ctx_.thresholds = cfg_.thresholds;
    ctx_.seed = cfg_.seed;
  }

  const ExperimentConfig& config() const { return cfg_; }
  const DatasetBundle& release() const { return release_; }
  const DatasetBundle& auditor_aux() const { return auditor_; }
  const DatasetBundle& attacker_aux() const { return attacker_; }
  const AuditContext& context() const { return ctx_; }

  std::filesystem::path results_dir() const {
    return std::filesystem::path(cfg_.output_dir) / cfg_.digest();
  }

  std::filesystem::path cell_path(const std::string& method,
                                  const std::string& attack_name) const {
    return results_dir() / (method + "__" + attack_name + ".json");
  }

  std::optional<ResultRecord> load_cell(const std::string& method,
                                        const std::string& attack_name) const {
    std::ifstream in(cell_path(method, attack_name));
    if (!in) return std::nullopt;
    nlohmann::json j;
    in >> j;
    return ResultRecord::from_json(j);
  }

  /// Runs one grid cell; returns the stored record when the cell already
  /// completed and force is false. Stage failures yield a failure record.
  ResultRecord run_cell(const std::string& method_name, const AttackEntry& attack,
                        bool force = false) {
    if (!force)
      if (std::optional<ResultRecord> done = load_cell(method_name, attack.name))
        return *done;

    ResultRecord rec;
    rec.config_digest = cfg_.digest();
    rec.method = method_name;
    rec.attack_name = attack.name;
    rec.attack_type = attack.type;
    rec.environment = detail::environment_fingerprint();
    std::string stage = "setup";
    detail::StageClock clock;
    try {
      const AuditMethodId mid = audit_method_from_string(method_name);
      std::unique_ptr<AuditMethod> method = make_method(mid);
      if (attack.type == "forgery") {
        run_forgery_cell(*method, attack, rec, stage, clock);
      } else {
        run_training_cell(*method, attack, rec, stage, clock);
      }
      rec.timings.total_s = clock.total();
      rec.verdict.config_digest = rec.config_digest;
    } catch (const std::exception& e) {
      rec.failed = true;
      rec.failure_stage = stage;
      rec.error = e.what();
      rec.timings.total_s = clock.total();
    }
    store(rec);
    return rec;
  }

  /// Runs every (method, attack) combination; returns all records.
  std::vector<ResultRecord> run_all(const std::string& cell_filter = "",
                                    bool force = false) {
    std::vector<ResultRecord> out;
    for (const std::string& m : cfg_.audit_methods)
      for (const AttackEntry& a : cfg_.attacks) {
        const std::string id = m + "__" + a.name;
        if (!cell_filter.empty() && id.find(cell_filter) == std::string::npos) continue;
        out.push_back(run_cell(m, a, force));
      }
    return out;
  }

  /// Relative wall-clock overhead of an attack column against the no-attack
  /// baseline of the same method; throws when the baseline is missing.
  double measure_overhead(const std::string& method, const std::string& attack_name,
                          const std::string& baseline_name) const {
    std::optional<ResultRecord> base = load_cell(method, baseline_name);
    std::optional<ResultRecord> cell = load_cell(method, attack_name);
    if (!base || base->failed)
      throw std::runtime_error("overhead: missing baseline cell " + method + "__" +
                               baseline_name);
    if (!cell || cell->failed)
      throw std::runtime_error("overhead: missing attack cell " + method + "__" + attack_name);
    if (base->timings.total_s <= 0.0)
      throw std::runtime_error("overhead: degenerate baseline timing");
    return cell->timings.total_s / base->timings.total_s;
  }

  /// The forgery cells' suspect: a model trained on the unmarked release.
  std::shared_ptr<Network> independent_model() {
    if (!independent_) {
      TrainConfig tc = cfg_.suspect_train;
      tc.seed = derive_seed(cfg_.seed, 0x1dbe9dULL);
      detail::StageClock clock;
      independent_ = train_network(release_, tc);
      independent_train_s_ = clock.total();
    }
    return independent_;
  }

 private:
  std::unique_ptr<AuditMethod> make_method(AuditMethodId mid) const {
    const std::string key = to_string(mid);
    const nlohmann::json p = cfg_.audit_params.value(key, nlohmann::json::object());
    switch (mid) {
      case AuditMethodId::mia: {
        MiaParams mp;
        mp.shadow_count = p.value("shadow_count", mp.shadow_count);
        return std::make_unique<MiaAudit>(mp);
      }
      case AuditMethodId::rapid: {
        RapidParams rp;
        rp.reference_count = p.value("reference_count", rp.reference_count);
        return std::make_unique<RapidAudit>(rp);
      }
      case AuditMethodId::di: {
        DiParams dp;
        dp.directions = p.value("directions", dp.directions);
        return std::make_unique<DiAudit>(dp);
      }
      case AuditMethodId::dua: {
        DuaParams dp;
        dp.mark_strength = p.value("mark_strength", dp.mark_strength);
        dp.patch = p.value("patch", dp.patch);
        dp.alpha = p.value("alpha", dp.alpha);
        return std::make_unique<DuaAudit>(dp);
      }
      case AuditMethodId::dvbw: {
        DvbwParams dp;
        dp.poison_rate = p.value("poison_rate", dp.poison_rate);
        dp.target_label = p.value("target_label", dp.target_label);
        dp.blend_weight = p.value("blend_weight", dp.blend_weight);
        return std::make_unique<DvbwAudit>(dp);
      }
      case AuditMethodId::ubw_p:
      case AuditMethodId::ubw_c: {
        UbwParams up;
        up.poison_rate = p.value("poison_rate", up.poison_rate);
        up.blend_weight = p.value("blend_weight", up.blend_weight);
        up.epsilon = p.value("epsilon", up.epsilon);
        up.opt_steps = p.value("opt_steps", up.opt_steps);
        return std::make_unique<UbwAudit>(mid == AuditMethodId::ubw_c, up);
      }
      case AuditMethodId::zeromark: {
        ZeroMarkParams zp;
        zp.poison_rate = p.value("poison_rate", zp.poison_rate);
        zp.target_label = p.value("target_label", zp.target_label);
        zp.blend_weight = p.value("blend_weight", zp.blend_weight);
        zp.max_samples = p.value("max_samples", zp.max_samples);
        return std::make_unique<ZeroMarkAudit>(zp);
      }
      case AuditMethodId::dw: {
        DwParams dp;
        dp.domain_rate = p.value("domain_rate", dp.domain_rate);
        dp.strength = p.value("strength", dp.strength);
        dp.fail_threshold = p.value("fail_threshold", dp.fail_threshold);
        return std::make_unique<DwAudit>(dp);
      }
    }
    throw std::invalid_argument("bad method id");
  }

  void run_training_cell(AuditMethod& method, const AttackEntry& attack,
                         ResultRecord& rec, std::string& stage,
                         detail::StageClock& clock) {
    stage = "prepare";
    DatasetBundle claim = method.prepare(release_, ctx_);
    rec.timings.prepare_s = clock.lap();
    {
      double acc = 0.0;
      for (std::size_t i = 0; i < claim.samples.size(); ++i) {
        float d = 0.0f;
        const Tensor& a = claim.samples[i].image;
        const Tensor& b = release_.samples[i].image;
        for (std::size_t k = 0; k < a.numel(); ++k)
          d = std::max(d, std::fabs(a[k] - b[k]));
        acc += d;
      }
      rec.prepare_linf = acc / double(claim.samples.size());
    }

    const HybridPipeline& pipe = attack.pipeline;
    stage = "pre_processing";
    DatasetBundle train_data =
        apply_preprocessing(pipe, claim, &attacker_, derive_seed(cfg_.seed, 0xa77ac4ULL));
    rec.timings.attack_s += clock.lap();

    stage = "training_setup";
    TrainConfig tc = cfg_.suspect_train;
    tc.seed = derive_seed(cfg_.seed, 0x5a5bec7ULL);
    TrainingAttackSetup setup =
        prepare_training(pipe, tc, &attacker_, train_data.size());
    if (!setup.extra_train_data.empty())
      for (const Sample& s : setup.extra_train_data.samples)
        train_data.samples.push_back(s);
    rec.attack_log["training"] = setup.log;
    rec.timings.attack_s += clock.lap();

    stage = "train";
    std::shared_ptr<Network> suspect;
    if (cfg_.scenario == "fine_tune") {
      // warm start on the attacker's own data, then continue on the claim
      TrainConfig warm = setup.config;
      warm.epochs = std::max<std::size_t>(1, warm.epochs / 2);
      warm.seed = derive_seed(cfg_.seed, 0xf19e70ULL);
      suspect = train_network(attacker_, warm);
      TrainConfig cont = setup.config;
      cont.epochs = std::max<std::size_t>(1, cont.epochs / 2);
      train(*suspect, train_data, cont, setup.hook.get());
    } else {
      suspect = train_network(train_data, setup.config, setup.hook.get());
    }
    rec.timings.train_s = clock.lap();
    rec.accuracy_clean = evaluate_accuracy(*suspect, auditor_);

    stage = "post_training";
    ModelAccess access = make_white_box(suspect);
    access = apply_post_training(pipe, access, &attacker_,
                                 derive_seed(cfg_.seed, 0x905705ULL));
    rec.timings.attack_s += clock.lap();

    stage = "audit";
    const AccessLevel level = audit_method_spec(method.id()).required_access;
    rec.verdict = method.audit(access.restrict(level), claim, ctx_);
    rec.timings.audit_s = clock.lap();
  }

  void run_forgery_cell(AuditMethod& method, const AttackEntry& attack,
                        ResultRecord& rec, std::string& stage,
                        detail::StageClock& clock) {
    stage = "train";
    std::shared_ptr<Network> indep = independent_model();
    rec.timings.train_s = independent_train_s_;
    clock.lap();
    rec.accuracy_clean = evaluate_accuracy(*indep, auditor_);

    stage = "forge";
    ForgeryCampaignConfig fc;
    fc.generator = attack.generator;
    fc.black_box = attack.black_box;
    const nlohmann::json& p = attack.forgery_params;
    fc.options.epsilon = p.value("epsilon", fc.options.epsilon);
    fc.options.steps = p.value("steps", fc.options.steps);
    fc.options.step_size = p.value("step_size", fc.options.step_size);
    fc.options.seed = derive_seed(cfg_.seed, 0xf09e5ULL);
    fc.universal.base = fc.options;
    fc.universal.max_epochs = p.value("uap_max_epochs", fc.universal.max_epochs);
    fc.universal.fooling_rate_floor =
        p.value("uap_fooling_floor", fc.universal.fooling_rate_floor);
    fc.substitute.arch = p.value("substitute_arch", cfg_.suspect_train.arch);
    fc.substitute.train = cfg_.auditor_train;
    fc.substitute.train.epochs =
        p.value("substitute_epochs", cfg_.auditor_train.epochs);
    fc.substitute.train.seed = derive_seed(cfg_.seed, 0x5b57ULL);
    fc.substitute.agreement_floor = p.value("agreement_floor", fc.substitute.agreement_floor);
    ForgeryCampaignResult r = run_forgery_campaign(method, indep, attacker_, ctx_, fc);
    rec.attack_log = r.log;
    rec.timings.attack_s = clock.lap();
    rec.timings.audit_s = 0.0;  // folded into the campaign
    rec.verdict = r.verdict;
  }

  void store(const ResultRecord& rec) const {
    std::filesystem::create_directories(results_dir());
    // The directory is self-describing so the table stage can run from it
    // alone.
    const std::filesystem::path cfg_file = results_dir() / "config.json";
    if (!std::filesystem::exists(cfg_file))
      std::ofstream(cfg_file) << cfg_.to_json().dump(2) << "\n";
    std::ofstream(cell_path(rec.method, rec.attack_name)) << rec.to_json().dump(2) << "\n";
  }

  ExperimentConfig cfg_;
  DatasetBundle corpus_, release_, auditor_, attacker_;
  AuditContext ctx_;
  std::shared_ptr<Network> independent_;
  double independent_train_s_ = 0.0;
};

}  // namespace auditbench
