// Trains a model on the configured release split and writes a checkpoint.
#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "auditbench/bench/config.hpp"
#include "auditbench/nn/checkpoint.hpp"

using namespace auditbench;

int main(int argc, char** argv) {
  CLI::App app{"train a classifier from an experiment config"};
  std::string config_path, out_path;
  app.add_option("--config", config_path, "experiment config JSON")->required();
  app.add_option("--out", out_path, "checkpoint output path")->required();
  CLI11_PARSE(app, argc, argv);

  try {
    ExperimentConfig cfg = load_experiment_config(config_path);
    DatasetBundle corpus = cfg.dataset.load(cfg.seed);
    auto parts = split_dataset(corpus, cfg.splits, cfg.seed);
    const DatasetBundle& release = parts[0];
    const DatasetBundle& auditor = parts[1];
    std::printf("training %s on %zu samples (%zu epochs)\n", cfg.suspect_train.arch.c_str(),
                release.size(), cfg.suspect_train.epochs);
    std::shared_ptr<Network> net = train_network(release, cfg.suspect_train);
    std::printf("held-out accuracy %.2f%%\n", evaluate_accuracy(*net, auditor));
    save_checkpoint(*net, cfg.suspect_train.width_mult, out_path);
    std::printf("checkpoint written to %s\n", out_path.c_str());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
