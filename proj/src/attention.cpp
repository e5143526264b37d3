#include "splab/attention.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "splab/errors.hpp"
#include "splab/training.hpp"

namespace splab {
namespace {

std::vector<double> matmul_square(const std::vector<double>& a, const std::vector<double>& b, std::size_t T) {
  std::vector<double> out(T * T, 0.0);
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t k = 0; k < T; ++k) {
      const double aik = a[i * T + k];
      for (std::size_t j = 0; j < T; ++j) out[i * T + j] += aik * b[k * T + j];
    }
  return out;
}

}  // namespace

RolloutMatrix attention_rollout(const AttentionCapture& capture, bool residual) {
  if (capture.layers.empty()) throw ContractError("attention_rollout: capture has no layers");
  const std::size_t T = capture.tokens;
  std::vector<double> rollout;
  for (std::size_t l = 0; l < capture.layers.size(); ++l) {
    const auto& heads = capture.layers[l];
    if (heads.empty()) throw ContractError("attention_rollout: layer " + std::to_string(l) + " has no heads");
    std::vector<double> avg(T * T, 0.0);
    for (const auto& h : heads) {
      if (h.size() != T * T) throw DimensionError("attention_rollout: head matrix is not " + std::to_string(T) + "x" + std::to_string(T));
      for (std::size_t i = 0; i < T; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < T; ++j) row += h[i * T + j];
        if (std::abs(row - 1.0) > 1e-6) {
          throw ContractError("attention_rollout: layer " + std::to_string(l) + " row " + std::to_string(i) +
                              " sums to " + std::to_string(row));
        }
      }
      for (std::size_t k = 0; k < T * T; ++k) avg[k] += h[k];
    }
    for (double& v : avg) v /= static_cast<double>(heads.size());
    if (residual) {
      for (std::size_t i = 0; i < T; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < T; ++j) {
          double& v = avg[i * T + j];
          v = 0.5 * v + (i == j ? 0.5 : 0.0);
          row += v;
        }
        for (std::size_t j = 0; j < T; ++j) avg[i * T + j] /= row;
      }
    }
    rollout = l == 0 ? std::move(avg) : matmul_square(avg, rollout, T);
  }
  return RolloutMatrix{T, std::move(rollout)};
}

PatchOverlay top_n_attended(const RolloutMatrix& rollout, std::size_t grid_side, std::size_t n,
                            bool exclude_class_token) {
  const std::size_t T = rollout.tokens;
  if (grid_side * grid_side + 1 != T) throw DimensionError("top_n_attended: grid does not match rollout size");
  if (n < 1 || n > T - 1) throw RangeError("top_n_attended: n must lie in [1, " + std::to_string(T - 1) + "]");
  PatchOverlay overlay{{}, n, grid_side};
  const std::size_t first = exclude_class_token ? 1 : 0;
  std::vector<std::size_t> order;
  for (std::size_t q = 1; q < T; ++q) {
    order.resize(T - first);
    std::iota(order.begin(), order.end(), first);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return rollout.at(q, a) > rollout.at(q, b); });
    for (std::size_t k = 0; k < n && k < order.size(); ++k) {
      if (order[k] == 0) continue;
      overlay.patches.insert({(order[k] - 1) / grid_side, (order[k] - 1) % grid_side});
    }
  }
  return overlay;
}

std::vector<double> class_token_heatmap(const RolloutMatrix& rollout, std::size_t grid_side) {
  const std::size_t T = rollout.tokens;
  if (grid_side * grid_side + 1 != T) throw DimensionError("class_token_heatmap: grid does not match rollout size");
  std::vector<double> heat(rollout.values.begin() + 1, rollout.values.begin() + static_cast<std::ptrdiff_t>(T));
  const double mx = *std::max_element(heat.begin(), heat.end());
  if (mx > 0.0)
    for (double& v : heat) v /= mx;
  return heat;
}

RgbImage render_overlay(const RgbImage& image, const PatchOverlay& overlay, std::size_t patch_size) {
  RgbImage out = image;
  for (const auto& [pr, pc] : overlay.patches) {
    for (std::size_t i = 0; i < patch_size; ++i)
      for (std::size_t j = 0; j < patch_size; ++j) {
        double* px = out.pixels.data() + ((pr * patch_size + i) * out.width + pc * patch_size + j) * 3;
        px[0] = 0.5 * px[0] + 0.5;
        px[1] = 0.5 * px[1];
        px[2] = 0.5 * px[2];
      }
  }
  return out;
}

RgbImage render_heatmap(const std::vector<double>& heatmap, std::size_t grid_side, std::size_t patch_size) {
  const std::size_t side = grid_side * patch_size;
  RgbImage out{side, side, std::vector<double>(side * side * 3)};
  for (std::size_t r = 0; r < side; ++r)
    for (std::size_t c = 0; c < side; ++c) {
      const double v = heatmap[(r / patch_size) * grid_side + c / patch_size];
      for (std::size_t ch = 0; ch < 3; ++ch) out.pixels[(r * side + c) * 3 + ch] = v;
    }
  return out;
}

std::vector<int> masked_predictions(const Model& model, std::span<const RgbImage> images, const AttentionMask* mask) {
  if (mask == nullptr) return argmax_rows(evaluate_logits(model, images, configured_threads()));
  std::vector<int> preds;
  constexpr std::size_t kChunk = 256;
  for (std::size_t lo = 0; lo < images.size(); lo += kChunk) {
    const auto part = images.subspan(lo, std::min(kChunk, images.size() - lo));
    const auto p = argmax_rows(vit_forward(model.vit(), part, mask).logits);
    preds.insert(preds.end(), p.begin(), p.end());
  }
  return preds;
}

std::vector<MaskSweepRow> mask_sweep(const Model& model, const GroupedDataset& eval_data,
                                     const std::vector<ConsistencyPair>& pairs,
                                     const std::vector<std::size_t>& distances) {
  if (model.kind() != Model::Kind::ViT) throw ContractError("mask_sweep needs a ViT model");
  if (!std::is_sorted(distances.begin(), distances.end())) throw ContractError("mask_sweep: distances must be ascending");
  std::vector<RgbImage> eval_images, xs, xbars;
  std::vector<int> labels, groups, pair_labels;
  for (const auto& img : eval_data.images) {
    eval_images.push_back(img.pixels);
    labels.push_back(img.y);
    groups.push_back(img.g);
  }
  for (const auto& p : pairs) {
    xs.push_back(p.x);
    xbars.push_back(p.x_bar);
    pair_labels.push_back(p.y);
  }
  std::vector<std::optional<std::size_t>> settings{std::nullopt};
  settings.insert(settings.end(), distances.begin(), distances.end());
  std::vector<MaskSweepRow> rows;
  for (const auto& dist : settings) {
    std::optional<AttentionMask> mask;
    if (dist) mask = build_distance_mask(model.vit().config.grid_side(), *dist);
    const AttentionMask* m = mask ? &*mask : nullptr;
    MaskSweepRow row;
    row.distance = dist;
    row.eval_predictions = masked_predictions(model, eval_images, m);
    row.pair_x_predictions = masked_predictions(model, xs, m);
    row.pair_x_bar_predictions = masked_predictions(model, xbars, m);
    const auto acc = group_accuracies(row.eval_predictions, labels, groups);
    row.average_accuracy = acc.average;
    row.worst_group_accuracy = acc.worst;
    row.consistency = consistency_from_predictions(row.pair_x_predictions, row.pair_x_bar_predictions, pair_labels);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace splab
