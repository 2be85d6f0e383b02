// Benchmark driver: runs (audit method x attack) grid cells from a JSON
// config, emits verdict tables and summary scores, and reports relative
// attack overhead against the no-attack baseline.
#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "auditbench/bench/runner.hpp"
#include "auditbench/bench/tables.hpp"

using namespace auditbench;

namespace {

int cmd_run(const std::string& config_path, const std::string& cells, bool force) {
  ExperimentConfig cfg = load_experiment_config(config_path);
  BenchRunner runner(cfg);
  std::printf("experiment %s digest %s -> %s\n", cfg.name.c_str(), cfg.digest().c_str(),
              runner.results_dir().string().c_str());
  std::size_t failed = 0;
  for (const std::string& m : cfg.audit_methods)
    for (const AttackEntry& a : cfg.attacks) {
      const std::string id = m + "__" + a.name;
      if (!cells.empty() && id.find(cells) == std::string::npos) continue;
      std::printf("[cell] %s ...\n", id.c_str());
      std::fflush(stdout);
      ResultRecord r = runner.run_cell(m, a, force);
      if (r.failed) {
        ++failed;
        std::printf("[cell] %s FAILED at %s: %s\n", id.c_str(), r.failure_stage.c_str(),
                    r.error.c_str());
      } else {
        std::printf("[cell] %s done in %.1fs (decision=%s)\n", id.c_str(),
                    r.timings.total_s, r.verdict.trained ? "trained" : "non_trained");
      }
      std::fflush(stdout);
    }
  std::printf("run complete, %zu failed cell(s)\n", failed);
  return failed == 0 ? 0 : 1;
}

int cmd_tables(const std::string& in_dir, const std::string& out_dir) {
  std::ifstream cfg_in(std::filesystem::path(in_dir) / "config.json");
  if (!cfg_in)
    throw std::runtime_error("tables: " + in_dir + "/config.json not found; run cells first");
  nlohmann::json j;
  cfg_in >> j;
  ExperimentConfig cfg = ExperimentConfig::from_json(j);
  std::vector<ResultRecord> records = load_results_dir(in_dir);
  emit_tables(cfg, records, out_dir);
  std::printf("wrote %s/verdicts.json and %s/table.csv (%zu cells)\n", out_dir.c_str(),
              out_dir.c_str(), records.size());
  return 0;
}

int cmd_overhead(const std::string& config_path, const std::string& baseline) {
  ExperimentConfig cfg = load_experiment_config(config_path);
  BenchRunner runner(cfg);
  std::printf("%-10s %-24s %-10s %s\n", "method", "attack", "overhead", "type");
  for (const std::string& m : cfg.audit_methods)
    for (const AttackEntry& a : cfg.attacks) {
      if (a.name == baseline) continue;
      try {
        const double o = runner.measure_overhead(m, a.name, baseline);
        std::printf("%-10s %-24s %-10.3f %s\n", m.c_str(), a.name.c_str(), o,
                    a.type.c_str());
      } catch (const std::exception& e) {
        std::printf("%-10s %-24s %-10s %s\n", m.c_str(), a.name.c_str(), "-", e.what());
      }
    }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dataset-auditing benchmark driver"};
  app.require_subcommand(1);

  std::string config_path, cells, in_dir, out_dir, baseline = "no_attack";
  bool force = false;

  CLI::App* run = app.add_subcommand("run", "execute grid cells");
  run->add_option("--config", config_path, "experiment config JSON")->required();
  run->add_option("--cells", cells, "substring filter on method__attack ids");
  run->add_flag("--force", force, "recompute cells that already have records");

  CLI::App* tables = app.add_subcommand("tables", "emit verdict tables from stored cells");
  tables->add_option("--in", in_dir, "results directory written by 'run'")->required();
  tables->add_option("--out", out_dir, "output directory for tables")->required();

  CLI::App* overhead = app.add_subcommand("overhead", "relative attack overhead report");
  overhead->add_option("--config", config_path, "experiment config JSON")->required();
  overhead->add_option("--baseline", baseline, "baseline attack column name");

  CLI11_PARSE(app, argc, argv);
  try {
    if (run->parsed()) return cmd_run(config_path, cells, force);
    if (tables->parsed()) return cmd_tables(in_dir, out_dir);
    if (overhead->parsed()) return cmd_overhead(config_path, baseline);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
