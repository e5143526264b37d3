#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <variant>
#include <vector>

#include "splab/data.hpp"
#include "splab/models.hpp"
#include "splab/tensor.hpp"

namespace splab {

struct OptimizerConfig {
  double base_lr = 3e-2;
  double momentum = 0.9;
  std::size_t warmup_steps = 0;
  std::size_t total_steps = 0;
  double clip_norm = 1.0;
  std::size_t batch_size = 64;

  void validate() const;
};

// Linear warmup 0 -> base_lr over warmup_steps, then cosine decay to 0 at
// total_steps.
double lr_at(std::size_t step, const OptimizerConfig& config);

// Scales the gradients of `params` by c / ||g|| when the global L2 norm
// exceeds c. Returns the norm before clipping.
double clip_global_norm(std::span<Tensor> params, double max_norm);

struct OptimizerState {
  std::vector<std::vector<double>> velocity;
  std::size_t step = 0;  // updates applied so far
};
OptimizerState make_optimizer_state(const Model& model);

struct Batch {
  std::vector<RgbImage> images;
  std::vector<int> labels;
  std::vector<int> groups;

  std::size_t size() const { return images.size(); }
};

// Clips, then applies v <- momentum * v + g; w <- w - lr * v with
// lr = lr_at(state.step + 1).
void apply_sgd_momentum(std::span<Tensor> params, OptimizerState& state, const OptimizerConfig& config);

// One step on the mean cross-entropy of the batch. Returns the batch loss.
double erm_step(Model& model, const Batch& batch, OptimizerState& opt_state, const OptimizerConfig& config);

// Online group DRO: exponentiated-gradient weights over groups.
struct GDROState {
  std::vector<int> groups;  // group ids, in weight order
  std::vector<double> q;    // on the simplex
  double eta = 0.01;

  static GDROState uniform(std::vector<int> groups, double eta);
};

// q_g <- q_g * exp(eta * L_g), then renormalize.
void gdro_update_weights(GDROState& state, std::span<const double> group_losses);

// Computes per-group mean losses L_g, updates q, descends on sum_g q_g L_g.
// Every group of the state must appear in the batch. Returns the weighted loss.
double gdro_step(Model& model, const Batch& batch, GDROState& gdro, OptimizerState& opt_state,
                 const OptimizerConfig& config);

struct TraceRow {
  std::size_t epoch = 0;
  double avg_loss = 0.0;
  double minority_loss = 0.0;
  double avg_acc = 0.0;
  double minority_acc = 0.0;
  double lr = 0.0;
};

struct TrainingTrace {
  int minority_group = -1;
  std::vector<TraceRow> rows;
  // Per-epoch, per-sample training losses and predictions behind each row;
  // filled only when TrainConfig::record_samples is set.
  std::vector<std::vector<double>> sample_losses;
  std::vector<std::vector<int>> sample_predictions;

  // epoch,avg_loss,minority_loss,avg_acc,minority_acc,lr
  void write_csv(const std::filesystem::path& path) const;
};

enum class Objective { ERM, GDRO };

struct TrainConfig {
  std::variant<ViTConfig, CNNConfig> model;
  Objective objective = Objective::ERM;
  double gdro_eta = 0.01;
  OptimizerConfig optimizer;  // total_steps is derived from epochs
  std::size_t epochs = 1;
  std::uint64_t seed = 0;
  bool record_samples = false;
};

struct TrainResult {
  Model model;
  TrainingTrace trace;
  std::size_t total_steps = 0;
};

// Deterministic in (dataset, config). ERM shuffles once per epoch; GDRO draws
// group-balanced batches. Trace rows are measured on the full training set
// after each epoch; the minority group is the smallest training group.
TrainResult train(const GroupedDataset& dataset, const TrainConfig& config);

// Logits of every image, computed in fixed-size chunks. Chunks may run on
// `threads` threads; results are identical for any thread count.
Tensor evaluate_logits(const Model& model, std::span<const RgbImage> images, std::size_t threads = 1,
                       std::size_t chunk = 256);

// Parallelism cap from SPLAB_THREADS (default 1).
std::size_t configured_threads();

}  // namespace splab
