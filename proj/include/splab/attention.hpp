#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <utility>
#include <vector>

#include "splab/data.hpp"
#include "splab/metrics.hpp"
#include "splab/models.hpp"

namespace splab {

// Row-stochastic T x T matrix, class token at index 0.
struct RolloutMatrix {
  std::size_t tokens = 0;
  std::vector<double> values;

  double at(std::size_t i, std::size_t j) const { return values[i * tokens + j]; }
};

// Heads are averaged per layer; with `residual` each layer becomes
// 0.5 A + 0.5 I, row-renormalized. Rollout = A_L ... A_1.
// Throws ContractError if an input row sum is off by more than 1e-6.
RolloutMatrix attention_rollout(const AttentionCapture& capture, bool residual = true);

struct PatchOverlay {
  std::set<std::pair<std::size_t, std::size_t>> patches;  // (row, col) on the patch grid
  std::size_t n = 0;
  std::size_t grid_side = 0;
};

// Union over query patches of the n highest-valued target patches in their
// rollout rows; ties go to the lower token index. The class token never
// appears in the overlay; with exclude_class_token it also never competes.
PatchOverlay top_n_attended(const RolloutMatrix& rollout, std::size_t grid_side, std::size_t n,
                            bool exclude_class_token = true);

// Class-token row restricted to patch tokens, reshaped to the grid (row-major)
// and divided by its maximum.
std::vector<double> class_token_heatmap(const RolloutMatrix& rollout, std::size_t grid_side);

// Marked patches tinted red at 50% alpha.
RgbImage render_overlay(const RgbImage& image, const PatchOverlay& overlay, std::size_t patch_size);
// Grayscale image, each heatmap cell filling a patch_size x patch_size block.
RgbImage render_heatmap(const std::vector<double>& heatmap, std::size_t grid_side, std::size_t patch_size);

struct MaskSweepRow {
  std::optional<std::size_t> distance;  // empty for the unmasked row
  double average_accuracy = 0.0;
  double worst_group_accuracy = 0.0;
  ConsistencyResult consistency;
  std::vector<int> eval_predictions;
  std::vector<int> pair_x_predictions;
  std::vector<int> pair_x_bar_predictions;
};

// Unmasked row first, then one row per distance (ascending) with the distance
// mask applied at inference.
std::vector<MaskSweepRow> mask_sweep(const Model& model, const GroupedDataset& eval_data,
                                     const std::vector<ConsistencyPair>& pairs,
                                     const std::vector<std::size_t>& distances);

// Predictions of a ViT under an optional mask, chunked like evaluate_logits.
std::vector<int> masked_predictions(const Model& model, std::span<const RgbImage> images, const AttentionMask* mask);

}  // namespace splab
