#include "splab/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <string>
#include <thread>

#include "splab/errors.hpp"
#include "splab/metrics.hpp"
#include "splab/ops.hpp"
#include "splab/report.hpp"
#include "splab/rng.hpp"

namespace splab {

void OptimizerConfig::validate() const {
  if (warmup_steps > total_steps) {
    throw ConfigError("warmup_steps " + std::to_string(warmup_steps) + " exceeds total_steps " +
                      std::to_string(total_steps));
  }
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (base_lr < 0.0 || momentum < 0.0 || momentum >= 1.0) throw ConfigError("invalid learning rate or momentum");
}

double lr_at(std::size_t step, const OptimizerConfig& config) {
  if (step > config.total_steps) {
    throw RangeError("lr_at: step " + std::to_string(step) + " beyond total_steps " +
                     std::to_string(config.total_steps));
  }
  if (step < config.warmup_steps) {
    return config.base_lr * static_cast<double>(step) / static_cast<double>(config.warmup_steps);
  }
  const std::size_t decay = config.total_steps - config.warmup_steps;
  if (decay == 0) return config.base_lr;
  const double progress = static_cast<double>(step - config.warmup_steps) / static_cast<double>(decay);
  return config.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double clip_global_norm(std::span<Tensor> params, double max_norm) {
  if (!(max_norm > 0.0)) throw ContractError("clip_global_norm: max norm must be positive");
  double sq = 0.0;
  for (auto& p : params)
    for (double g : p.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& p : params)
      for (double& g : p.mutable_grad()) g *= factor;
  }
  return norm;
}

OptimizerState make_optimizer_state(const Model& model) {
  OptimizerState state;
  for (const auto& p : model.parameters()) state.velocity.emplace_back(p.numel(), 0.0);
  return state;
}

void apply_sgd_momentum(std::span<Tensor> params, OptimizerState& state, const OptimizerConfig& config) {
  if (state.velocity.size() != params.size()) throw ContractError("optimizer state does not match the parameters");
  clip_global_norm(params, config.clip_norm);
  const double lr = lr_at(std::min(state.step + 1, config.total_steps), config);
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto w = params[t].mutable_data();
    const auto g = params[t].grad();
    auto& v = state.velocity[t];
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = config.momentum * v[i] + g[i];
      w[i] -= lr * v[i];
    }
  }
  ++state.step;
}

namespace {

// Forward with tape, weights derived from the per-sample losses, backward of
// the weighted sum, then the optimizer update.
double weighted_step(Model& model, const Batch& batch,
                     const std::function<std::vector<double>(std::span<const double>)>& weights_for,
                     OptimizerState& opt_state, const OptimizerConfig& config) {
  auto params = model.parameters();
  for (auto& p : params) p.zero_grad();
  double loss_value = 0.0;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor losses = cross_entropy_rows(model.logits(batch.images), batch.labels);
    Tensor loss = weighted_sum(losses, weights_for(losses.data()));
    loss_value = loss.item();
    if (!std::isfinite(loss_value)) {
      throw NumericError("training diverged: non-finite loss at step " + std::to_string(opt_state.step));
    }
    tape.backward(loss);
  }
  apply_sgd_momentum(params, opt_state, config);
  return loss_value;
}

}  // namespace

double erm_step(Model& model, const Batch& batch, OptimizerState& opt_state, const OptimizerConfig& config) {
  if (batch.size() == 0) throw ContractError("erm_step: empty batch");
  const std::vector<double> weights(batch.size(), 1.0 / static_cast<double>(batch.size()));
  return weighted_step(
      model, batch, [&](std::span<const double>) { return weights; }, opt_state, config);
}

GDROState GDROState::uniform(std::vector<int> groups, double eta) {
  if (groups.empty()) throw ContractError("GDRO needs at least one group");
  GDROState s;
  s.q.assign(groups.size(), 1.0 / static_cast<double>(groups.size()));
  s.groups = std::move(groups);
  s.eta = eta;
  return s;
}

void gdro_update_weights(GDROState& state, std::span<const double> group_losses) {
  if (group_losses.size() != state.q.size()) throw ContractError("gdro: one loss per group expected");
  double total = 0.0;
  for (std::size_t g = 0; g < state.q.size(); ++g) {
    state.q[g] *= std::exp(state.eta * group_losses[g]);
    total += state.q[g];
  }
  for (double& q : state.q) q /= total;
}

double gdro_step(Model& model, const Batch& batch, GDROState& gdro, OptimizerState& opt_state,
                 const OptimizerConfig& config) {
  if (batch.groups.size() != batch.size()) throw ContractError("gdro_step: batch lacks group ids");
  std::vector<std::size_t> counts(gdro.groups.size(), 0);
  std::vector<std::size_t> slot(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto it = std::find(gdro.groups.begin(), gdro.groups.end(), batch.groups[i]);
    if (it == gdro.groups.end()) {
      throw ContractError("gdro_step: batch contains unknown group " + std::to_string(batch.groups[i]));
    }
    slot[i] = static_cast<std::size_t>(it - gdro.groups.begin());
    ++counts[slot[i]];
  }
  for (std::size_t g = 0; g < counts.size(); ++g) {
    if (counts[g] == 0) {
      throw ContractError("gdro_step: sampler contract violated, group " + std::to_string(gdro.groups[g]) +
                          " is missing from the batch");
    }
  }

  const auto weights_for = [&](std::span<const double> losses) {
    std::vector<double> group_loss(counts.size(), 0.0);
    for (std::size_t i = 0; i < batch.size(); ++i) group_loss[slot[i]] += losses[i];
    for (std::size_t g = 0; g < counts.size(); ++g) group_loss[g] /= static_cast<double>(counts[g]);
    gdro_update_weights(gdro, group_loss);
    std::vector<double> weights(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      weights[i] = gdro.q[slot[i]] / static_cast<double>(counts[slot[i]]);
    }
    return weights;
  };
  return weighted_step(model, batch, weights_for, opt_state, config);
}

void TrainingTrace::write_csv(const std::filesystem::path& path) const {
  CsvWriter csv(path);
  csv.row({"epoch", "avg_loss", "minority_loss", "avg_acc", "minority_acc", "lr"});
  for (const auto& r : rows) {
    csv.row({std::to_string(r.epoch), format_number(r.avg_loss), format_number(r.minority_loss),
             format_number(r.avg_acc), format_number(r.minority_acc), format_number(r.lr)});
  }
}

std::size_t configured_threads() {
  const char* env = std::getenv("SPLAB_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || v < 1) throw ConfigError("SPLAB_THREADS must be a positive integer");
  return static_cast<std::size_t>(v);
}

Tensor evaluate_logits(const Model& model, std::span<const RgbImage> images, std::size_t threads, std::size_t chunk) {
  if (images.empty()) throw ContractError("evaluate_logits: no images");
  if (Tape::active() != nullptr) throw ContractError("evaluate_logits must not run while recording a tape");
  const std::size_t n_chunks = (images.size() + chunk - 1) / chunk;
  std::vector<std::vector<double>> parts(n_chunks);
  const auto run = [&](std::size_t c) {
    const std::size_t lo = c * chunk, hi = std::min(images.size(), lo + chunk);
    const Tensor logits = model.logits(images.subspan(lo, hi - lo));
    parts[c].assign(logits.data().begin(), logits.data().end());
  };
  threads = std::max<std::size_t>(1, std::min(threads, n_chunks));
  if (threads == 1) {
    for (std::size_t c = 0; c < n_chunks; ++c) run(c);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        for (std::size_t c = t; c < n_chunks; c += threads) run(c);
      });
    }
    for (auto& th : pool) th.join();
  }
  std::vector<double> all;
  for (auto& p : parts) all.insert(all.end(), p.begin(), p.end());
  return Tensor({images.size(), model.n_classes()}, std::move(all));
}

namespace {

std::vector<std::vector<std::size_t>> erm_batches(std::size_t n, std::size_t batch_size, Rng& rng) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t lo = 0; lo < n; lo += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(lo),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, lo + batch_size)));
  }
  return batches;
}

// Cycles through a reshuffled permutation of each group so every batch holds
// the same number of samples from every group.
class GroupBalancedSampler {
 public:
  GroupBalancedSampler(const GroupedDataset& ds, const std::vector<int>& groups, std::uint64_t seed) : rng_(seed) {
    for (int g : groups) {
      std::vector<std::size_t> members;
      for (std::size_t i = 0; i < ds.size(); ++i)
        if (ds.images[i].g == g) members.push_back(i);
      pools_.push_back({std::move(members), 0});
      rng_.shuffle(std::span<std::size_t>(pools_.back().members));
    }
  }

  std::vector<std::size_t> next(std::size_t batch_size) {
    const std::size_t per_group = std::max<std::size_t>(1, batch_size / pools_.size());
    std::vector<std::size_t> batch;
    for (auto& pool : pools_) {
      for (std::size_t k = 0; k < per_group; ++k) {
        if (pool.cursor == pool.members.size()) {
          rng_.shuffle(std::span<std::size_t>(pool.members));
          pool.cursor = 0;
        }
        batch.push_back(pool.members[pool.cursor++]);
      }
    }
    return batch;
  }

 private:
  struct Pool {
    std::vector<std::size_t> members;
    std::size_t cursor;
  };
  Rng rng_;
  std::vector<Pool> pools_;
};

Batch gather(const GroupedDataset& ds, const std::vector<std::size_t>& idx) {
  Batch b;
  for (std::size_t i : idx) {
    b.images.push_back(ds.images[i].pixels);
    b.labels.push_back(ds.images[i].y);
    b.groups.push_back(ds.images[i].g);
  }
  return b;
}

TraceRow measure_epoch(const Model& model, const GroupedDataset& ds, const std::vector<RgbImage>& images,
                       int minority_group, std::size_t epoch, double lr, TrainingTrace* samples) {
  const Tensor logits = evaluate_logits(model, images, configured_threads());
  std::vector<int> labels(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) labels[i] = ds.images[i].y;
  const Tensor losses = cross_entropy_rows(logits, labels);
  const auto preds = argmax_rows(logits);
  TraceRow row;
  row.epoch = epoch;
  row.lr = lr;
  std::size_t correct = 0, m_correct = 0, m_count = 0;
  double loss_total = 0.0, m_loss = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const bool ok = preds[i] == labels[i];
    correct += ok ? 1 : 0;
    loss_total += losses.at(i);
    if (ds.images[i].g == minority_group) {
      ++m_count;
      m_correct += ok ? 1 : 0;
      m_loss += losses.at(i);
    }
  }
  row.avg_loss = loss_total / static_cast<double>(ds.size());
  row.avg_acc = static_cast<double>(correct) / static_cast<double>(ds.size());
  row.minority_loss = m_count ? m_loss / static_cast<double>(m_count) : 0.0;
  row.minority_acc = m_count ? static_cast<double>(m_correct) / static_cast<double>(m_count) : 0.0;
  if (samples) {
    samples->sample_losses.emplace_back(losses.data().begin(), losses.data().end());
    samples->sample_predictions.push_back(preds);
  }
  return row;
}

}  // namespace

TrainResult train(const GroupedDataset& dataset, const TrainConfig& config) {
  if (dataset.images.empty()) throw ContractError("train: empty dataset");
  if (config.epochs == 0) throw ConfigError("train: epochs must be positive");
  OptimizerConfig opt = config.optimizer;
  const std::size_t steps_per_epoch = (dataset.size() + opt.batch_size - 1) / opt.batch_size;
  opt.total_steps = steps_per_epoch * config.epochs;
  opt.validate();

  TrainResult result{init_model(config.model), {}, opt.total_steps};
  if (result.model.image_size() != dataset.images.front().pixels.height) {
    throw DimensionError("model expects " + std::to_string(result.model.image_size()) + "-pixel images, dataset has " +
                         std::to_string(dataset.images.front().pixels.height));
  }
  OptimizerState state = make_optimizer_state(result.model);
  std::vector<int> active_groups;
  for (const auto& [g, count] : dataset.group_counts)
    if (count > 0) active_groups.push_back(g);
  GDROState gdro = GDROState::uniform(active_groups, config.gdro_eta);
  GroupBalancedSampler sampler(dataset, active_groups, derive_seed(config.seed, "gdro-sampler"));
  result.trace.minority_group = dataset.smallest_group();
  std::vector<RgbImage> all_images;
  for (const auto& img : dataset.images) all_images.push_back(img.pixels);

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    if (config.objective == Objective::ERM) {
      Rng rng(derive_seed(config.seed, "epoch/" + std::to_string(epoch)));
      for (const auto& idx : erm_batches(dataset.size(), opt.batch_size, rng)) {
        erm_step(result.model, gather(dataset, idx), state, opt);
      }
    } else {
      for (std::size_t s = 0; s < steps_per_epoch; ++s) {
        gdro_step(result.model, gather(dataset, sampler.next(opt.batch_size)), gdro, state, opt);
      }
    }
    TraceRow row = measure_epoch(result.model, dataset, all_images, result.trace.minority_group, epoch,
                                 lr_at(state.step, opt), config.record_samples ? &result.trace : nullptr);
    if (!std::isfinite(row.avg_loss)) {
      throw NumericError("training diverged: non-finite average loss after epoch " + std::to_string(epoch));
    }
    result.trace.rows.push_back(row);
  }
  return result;
}

}  // namespace splab
