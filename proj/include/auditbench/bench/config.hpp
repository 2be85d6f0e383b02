#pragma once

#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "auditbench/attack/plugin.hpp"
#include "auditbench/audit/common.hpp"
#include "auditbench/data/bundle.hpp"
#include "auditbench/data/io.hpp"
#include "auditbench/forgery/forge.hpp"
#include "auditbench/nn/train.hpp"

namespace auditbench {

/// Where the corpus comes from. "synthetic" is generated procedurally;
/// "cifar10" reads binary batch files; "image_folder" reads a class-per-
/// directory tree of PPM images.
struct DatasetSpec {
  std::string kind = "synthetic";
  // synthetic parameters
  int class_count = 10;
  std::size_t sample_count = 1500;
  std::size_t channels = 3, height = 16, width = 16;
  float noise_std = 0.25f;
  float distortion = 0.8f;
  // file-backed parameters
  std::vector<std::string> paths;
  std::size_t max_samples = 0;  // 0 = all

  nlohmann::json to_json() const {
    return {{"kind", kind},           {"class_count", class_count},
            {"sample_count", sample_count}, {"channels", channels},
            {"height", height},       {"width", width},
            {"noise_std", noise_std}, {"distortion", distortion},
            {"paths", paths},         {"max_samples", max_samples}};
  }

  static DatasetSpec from_json(const nlohmann::json& j) {
    DatasetSpec s;
    s.kind = j.value("kind", s.kind);
    s.class_count = j.value("class_count", s.class_count);
    s.sample_count = j.value("sample_count", s.sample_count);
    s.channels = j.value("channels", s.channels);
    s.height = j.value("height", s.height);
    s.width = j.value("width", s.width);
    s.noise_std = j.value("noise_std", s.noise_std);
    s.distortion = j.value("distortion", s.distortion);
    s.paths = j.value("paths", s.paths);
    s.max_samples = j.value("max_samples", s.max_samples);
    if (s.kind != "synthetic" && s.kind != "cifar10" && s.kind != "image_folder")
      throw std::invalid_argument("dataset: unknown kind " + s.kind);
    return s;
  }

  DatasetBundle load(std::uint64_t seed) const {
    if (kind == "synthetic")
      return make_synthetic_bundle(class_count, sample_count, channels, height, width,
                                   seed, noise_std, distortion);
    DatasetBundle b;
    if (kind == "cifar10") {
      std::vector<std::filesystem::path> ps(paths.begin(), paths.end());
      b = load_cifar10_batches(ps);
    } else {
      b = load_image_folder(paths.at(0));
    }
    if (max_samples > 0 && b.samples.size() > max_samples)
      b.samples.resize(max_samples);
    return b;
  }
};

/// One column of the benchmark grid: the no-attack baseline, an evasion
/// pipeline, or a forgery campaign.
struct AttackEntry {
  std::string name;                      // column label, unique per config
  std::string type = "none";             // none | evasion | forgery
  HybridPipeline pipeline;               // evasion
  ForgeryGenerator generator = ForgeryGenerator::pgd;  // forgery
  bool black_box = false;                // forgery
  nlohmann::json forgery_params = nlohmann::json::object();

  nlohmann::json to_json() const {
    nlohmann::json j{{"name", name}, {"type", type}};
    if (type == "evasion") j["pipeline"] = pipeline.to_json();
    if (type == "forgery") {
      j["generator"] = to_string(generator);
      j["black_box"] = black_box;
      j["params"] = forgery_params;
    }
    return j;
  }

  static AttackEntry from_json(const nlohmann::json& j) {
    AttackEntry e;
    e.name = j.at("name").get<std::string>();
    e.type = j.value("type", "none");
    if (e.type == "evasion") {
      std::vector<AttackPlugin> plugins;
      const nlohmann::json& p = j.at("pipeline");
      const auto read_phase = [&](const char* key) {
        if (!p.contains(key)) return;
        for (const nlohmann::json& a : p.at(key))
          plugins.push_back(make_attack_plugin(a.at("attack_id").get<std::string>(),
                                               a.value("params", nlohmann::json::object())));
      };
      read_phase("pre_processing");
      read_phase("training");
      read_phase("post_training");
      e.pipeline = compose_hybrid(plugins);
    } else if (e.type == "forgery") {
      e.generator = forgery_generator_from_string(j.at("generator").get<std::string>());
      e.black_box = j.value("black_box", false);
      e.forgery_params = j.value("params", nlohmann::json::object());
    } else if (e.type != "none") {
      throw std::invalid_argument("attack entry: unknown type " + e.type);
    }
    return e;
  }
};

namespace detail {

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"arch", c.arch},
          {"width_mult", c.width_mult},
          {"epochs", c.epochs},
          {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"cosine_decay", c.cosine_decay},
          {"seed", c.seed}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {}) {
  base.arch = j.value("arch", base.arch);
  base.width_mult = j.value("width_mult", base.width_mult);
  base.epochs = j.value("epochs", base.epochs);
  base.learning_rate = j.value("learning_rate", base.learning_rate);
  base.batch_size = j.value("batch_size", base.batch_size);
  base.momentum = j.value("momentum", base.momentum);
  base.weight_decay = j.value("weight_decay", base.weight_decay);
  base.cosine_decay = j.value("cosine_decay", base.cosine_decay);
  base.seed = j.value("seed", base.seed);
  return base;
}

}  // namespace detail

/// Full description of one benchmark experiment: corpus, splits, training
/// recipes, audit methods with parameters, and the attack grid columns. The
/// digest over the canonical serialization is embedded in every verdict.
struct ExperimentConfig {
  std::string name = "experiment";
  DatasetSpec dataset;
  SplitRatios splits{0.55, 0.30, 0.15};
  std::uint64_t seed = 41;
  TrainConfig suspect_train;
  TrainConfig auditor_train;
  AuditThresholds thresholds;
  std::string scenario = "from_scratch";  // or fine_tune
  std::vector<std::string> audit_methods;
  nlohmann::json audit_params = nlohmann::json::object();  // method id -> params
  std::vector<AttackEntry> attacks;
  std::string output_dir = "results";

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["name"] = name;
    j["dataset"] = dataset.to_json();
    j["splits"] = {{"release", splits.release},
                   {"auditor", splits.auditor},
                   {"attacker", splits.attacker}};
    j["seed"] = seed;
    j["suspect_train"] = detail::train_config_to_json(suspect_train);
    j["auditor_train"] = detail::train_config_to_json(auditor_train);
    j["thresholds"] = {{"p_threshold", thresholds.p_threshold},
                       {"wsr_threshold", thresholds.wsr_threshold},
                       {"score_threshold", thresholds.score_threshold},
                       {"cost_threshold", thresholds.cost_threshold},
                       {"margin", thresholds.margin}};
    j["scenario"] = scenario;
    j["audit_methods"] = audit_methods;
    j["audit_params"] = audit_params;
    nlohmann::json atts = nlohmann::json::array();
    for (const AttackEntry& a : attacks) atts.push_back(a.to_json());
    j["attacks"] = atts;
    j["output_dir"] = output_dir;
    return j;
  }

  static ExperimentConfig from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    c.name = j.value("name", c.name);
    c.dataset = DatasetSpec::from_json(j.value("dataset", nlohmann::json::object()));
    if (j.contains("splits")) {
      c.splits.release = j["splits"].value("release", c.splits.release);
      c.splits.auditor = j["splits"].value("auditor", c.splits.auditor);
      c.splits.attacker = j["splits"].value("attacker", c.splits.attacker);
    }
    c.seed = j.value("seed", c.seed);
    if (j.contains("suspect_train"))
      c.suspect_train = detail::train_config_from_json(j["suspect_train"]);
    if (j.contains("auditor_train"))
      c.auditor_train = detail::train_config_from_json(j["auditor_train"]);
    if (j.contains("thresholds")) {
      const nlohmann::json& t = j["thresholds"];
      c.thresholds.p_threshold = t.value("p_threshold", c.thresholds.p_threshold);
      c.thresholds.wsr_threshold = t.value("wsr_threshold", c.thresholds.wsr_threshold);
      c.thresholds.score_threshold = t.value("score_threshold", c.thresholds.score_threshold);
      c.thresholds.cost_threshold = t.value("cost_threshold", c.thresholds.cost_threshold);
      c.thresholds.margin = t.value("margin", c.thresholds.margin);
    }
    c.scenario = j.value("scenario", c.scenario);
    if (c.scenario != "from_scratch" && c.scenario != "fine_tune")
      throw std::invalid_argument("config: unknown scenario " + c.scenario);
    c.audit_methods = j.value("audit_methods", c.audit_methods);
    for (const std::string& m : c.audit_methods) audit_method_from_string(m);  // validates
    c.audit_params = j.value("audit_params", nlohmann::json::object());
    for (auto it = c.audit_params.begin(); it != c.audit_params.end(); ++it)
      audit_method_from_string(it.key());
    if (j.contains("attacks")) {
      std::set<std::string> names;
      for (const nlohmann::json& a : j["attacks"]) {
        AttackEntry e = AttackEntry::from_json(a);
        if (!names.insert(e.name).second)
          throw std::invalid_argument("config: duplicate attack name " + e.name);
        c.attacks.push_back(std::move(e));
      }
    }
    c.output_dir = j.value("output_dir", c.output_dir);
    return c;
  }

  /// Stable hash of the canonical serialization (excluding output_dir, which
  /// does not change what is computed).
  std::string digest() const {
    nlohmann::json j = to_json();
    j.erase("output_dir");
    const std::uint64_t h = detail::fnv1a64(j.dump());
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }
};

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  nlohmann::json j;
  in >> j;
  return ExperimentConfig::from_json(j);
}

}  // namespace auditbench
