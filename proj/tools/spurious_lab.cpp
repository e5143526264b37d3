#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "spurious_lab.h"

namespace {

const std::vector<std::string> kSubcommands{"synth", "train",      "eval",           "cka",           "ood",
                                            "rollout", "mask-sweep", "imbalance-sweep", "finetune-trace", "verify"};

int report(int status) {
  if (status != SPLAB_OK) std::fprintf(stderr, "spurious-lab: %s: %s\n", splab_status_name(status), splab_last_error());
  switch (status) {
    case SPLAB_OK: return 0;
    case SPLAB_ERR_SCHEMA: return 2;
    case SPLAB_ERR_VERIFY: return 3;
    default: return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spurious-correlation robustness lab"};
  app.set_version_flag("--version", std::string(splab_version()));
  bool print_schema = false;
  std::string subcommand, config_path, out_dir, checkpoint;
  long long seed_index = -1;
  std::vector<std::size_t> images;

  app.add_flag("--print-schema", print_schema, "Print the JSON schema of config files and exit");
  app.add_option("subcommand", subcommand, "One of: synth, train, eval, cka, ood, rollout, mask-sweep, "
                                           "imbalance-sweep, finetune-trace, verify")
      ->check(CLI::IsMember(kSubcommands));
  app.add_option("--config", config_path, "Experiment config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "Output root, overriding output_dir from the config");
  app.add_option("--seed-index", seed_index, "Run only the k-th seed of the config")->check(CLI::NonNegativeNumber);
  app.add_option("--checkpoint", checkpoint, "Checkpoint to evaluate instead of the run's model.splab");
  app.add_option("--images", images, "Test-set image ids for rollout")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  if (print_schema) {
    std::fputs(splab_config_schema(), stdout);
    return 0;
  }
  if (subcommand.empty() || config_path.empty()) {
    std::fprintf(stderr, "%s", app.help().c_str());
    return 1;
  }

  splab_experiment* experiment = nullptr;
  if (int s = splab_experiment_open(config_path.c_str(), &experiment); s != SPLAB_OK) return report(s);
  int status = SPLAB_OK;
  if (!out_dir.empty()) status = splab_experiment_set_output_dir(experiment, out_dir.c_str());
  if (status == SPLAB_OK) status = splab_experiment_set_seed_index(experiment, seed_index);
  if (status == SPLAB_OK && !checkpoint.empty()) status = splab_experiment_set_checkpoint(experiment, checkpoint.c_str());
  if (status == SPLAB_OK && !images.empty()) status = splab_experiment_set_images(experiment, images.data(), images.size());
  if (status == SPLAB_OK) status = splab_experiment_run(experiment, subcommand.c_str());
  if (status == SPLAB_OK) {
    std::printf("%s: done (%s)\n", subcommand.c_str(), splab_experiment_root_dir(experiment));
  }
  splab_experiment_close(experiment);
  return report(status);
}
