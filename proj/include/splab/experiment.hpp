#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "splab/data.hpp"
#include "splab/models.hpp"
#include "splab/training.hpp"

namespace splab {

inline constexpr const char* kToolVersion = "1.0.0";

struct DatasetSpec {
  std::string source = "synth";  // synth | idx | composite
  std::vector<int> classes{0, 1};
  std::vector<std::string> environments{"red", "green", "purple", "pink"};
  std::vector<std::vector<int>> same_class{{0, 2}, {1, 3}};
  double r = 0.45;
  double test_r = 0.25;
  std::size_t train_per_class = 1000;
  std::size_t test_per_class = 200;
  std::uint64_t seed = 0;
  // idx source only; relative paths resolve against the config file.
  std::string idx_train_images, idx_train_labels, idx_test_images, idx_test_labels;
};

struct ModelSpec {
  std::string kind = "vit";  // vit | cnn
  std::size_t image_size = 28;
  std::size_t patch_size = 7;
  std::size_t embed_dim = 32;
  std::size_t heads = 2;
  std::size_t depth = 2;
  std::size_t mlp_ratio = 2;
  std::vector<std::size_t> channels{8, 16, 32};
  std::string representation = "class_token";  // class_token | mean_patch
};

struct ObjectiveSpec {
  std::string kind = "erm";  // erm | gdro
  double eta = 0.01;
};

struct OptimizerSpec {
  double base_lr = 3e-2;
  double momentum = 0.9;
  std::size_t warmup_steps = 10;
  std::size_t epochs = 5;
  std::size_t batch_size = 64;
  double clip_norm = 1.0;
};

struct EvaluationSpec {
  std::vector<std::string> pair_policies{"bw", "random"};
  std::vector<int> ood_classes{5, 6, 7, 8};
  std::size_t ood_count = 400;
  // Background colors of the spurious OOD images; a subset of dataset.environments.
  std::vector<std::string> ood_environments{"red", "green"};
  std::vector<std::size_t> cka_layers;  // empty: every layer
  std::size_t cka_batch = 256;
  std::string cka_policy = "random";
  std::vector<std::size_t> mask_distances{0, 1, 2, 3};
  std::vector<double> imbalance_fractions{0.0, 0.5, 0.9};
  std::vector<std::size_t> rollout_images{0, 1, 2, 3};
  std::size_t top_n = 1;
  std::size_t finetune_epochs = 20;
};

struct ExperimentConfig {
  std::string name = "experiment";
  DatasetSpec dataset;
  ModelSpec model;
  ObjectiveSpec objective;
  OptimizerSpec optimizer;
  EvaluationSpec evaluation;
  std::string output_dir = "runs";
  std::vector<std::uint64_t> seeds{0};
  std::filesystem::path base_dir;  // directory of the config file; not serialized

  // Strict parse: unknown keys, wrong types and out-of-range values throw
  // SchemaError carrying the JSON pointer of the key. Absent keys take defaults.
  static ExperimentConfig parse(std::string_view json_text);
  static ExperimentConfig load(const std::filesystem::path& path);

  // Every field with defaults filled in, keys sorted, no whitespace.
  std::string canonical_json() const;
  // 16 hex digits of FNV-1a over canonical_json().
  std::string hash() const;

  std::variant<ViTConfig, CNNConfig> model_config(std::uint64_t run_seed) const;
  TrainConfig train_config(std::uint64_t run_seed, std::size_t epochs) const;
  RepresentationMode representation() const;
};

// JSON Schema (draft 2020-12) of the config file.
std::string config_schema();

struct RunOptions {
  std::optional<std::filesystem::path> out;   // overrides output_dir
  std::optional<std::size_t> seed_index;      // empty: every seed
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::vector<std::size_t>> images;  // rollout image ids
};

struct VerifyReport {
  std::size_t checked = 0;
  std::vector<std::string> mismatches;

  bool ok() const { return mismatches.empty(); }
};

struct PreparedData;

// Binds a config to its output tree:
//   <out>/<name>-<hash>/config.json
//   <out>/<name>-<hash>/dataset/...          (synth)
//   <out>/<name>-<hash>/seed-<seed>/...      (everything else)
class Experiment {
 public:
  Experiment(ExperimentConfig config, RunOptions options = {});
  ~Experiment();
  Experiment(Experiment&&) noexcept;
  Experiment& operator=(Experiment&&) noexcept;

  const ExperimentConfig& config() const { return config_; }
  std::filesystem::path root_dir() const;
  std::filesystem::path run_dir(std::size_t seed_index) const;
  std::vector<std::size_t> selected_seeds() const;

  // synth, train, eval, cka, ood, rollout, mask-sweep, imbalance-sweep,
  // finetune-trace, verify. verify throws VerificationError on mismatch.
  void run(std::string_view subcommand);
  static const std::vector<std::string>& subcommands();

  void synth();
  void train();
  void eval();
  void cka();
  void ood();
  void rollout();
  void mask_sweep();
  void imbalance_sweep();
  void finetune_trace();
  VerifyReport verify() const;

 private:
  const PreparedData& data();
  Model load_model(std::size_t seed_index) const;

  ExperimentConfig config_;
  RunOptions options_;
  std::unique_ptr<PreparedData> data_;
};

}  // namespace splab
