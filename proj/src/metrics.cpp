#include "splab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "splab/errors.hpp"
#include "splab/training.hpp"

namespace splab {

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw DimensionError("argmax_rows expects [B x C] logits, got " + shape_string(logits.shape()));
  const std::size_t B = logits.dim(0), C = logits.dim(1);
  const auto L = logits.data();
  std::vector<int> out(B);
  for (std::size_t b = 0; b < B; ++b) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < C; ++c)
      if (L[b * C + c] > L[b * C + best]) best = c;
    out[b] = static_cast<int>(best);
  }
  return out;
}

GroupAccuracyReport group_accuracies(std::span<const int> predictions, std::span<const int> labels,
                                     std::span<const int> groups) {
  if (predictions.empty()) throw ContractError("group_accuracies: empty input");
  if (predictions.size() != labels.size() || labels.size() != groups.size()) {
    throw ContractError("group_accuracies: predictions, labels and groups differ in length");
  }
  std::map<int, std::size_t> correct;
  GroupAccuracyReport r;
  std::size_t total_correct = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    ++r.counts[groups[i]];
    const bool ok = predictions[i] == labels[i];
    correct[groups[i]] += ok ? 1 : 0;
    total_correct += ok ? 1 : 0;
  }
  r.worst = std::numeric_limits<double>::infinity();
  for (const auto& [g, n] : r.counts) {
    const double acc = static_cast<double>(correct[g]) / static_cast<double>(n);
    r.per_group[g] = acc;
    if (acc < r.worst) {
      r.worst = acc;
      r.worst_group = g;
    }
  }
  r.average = static_cast<double>(total_correct) / static_cast<double>(predictions.size());
  return r;
}

ConsistencyResult consistency_from_predictions(std::span<const int> pred_x, std::span<const int> pred_x_bar,
                                               std::span<const int> labels) {
  if (pred_x.empty()) throw ContractError("consistency: no pairs");
  if (pred_x.size() != pred_x_bar.size() || pred_x.size() != labels.size()) {
    throw ContractError("consistency: prediction and label lists differ in length");
  }
  ConsistencyResult r;
  r.total = pred_x.size();
  for (std::size_t i = 0; i < pred_x.size(); ++i) {
    if (pred_x[i] != labels[i]) continue;
    ++r.correct;
    if (pred_x[i] == pred_x_bar[i]) ++r.consistent_correct;
  }
  r.unconditional = static_cast<double>(r.consistent_correct) / static_cast<double>(r.total);
  if (r.correct == 0) {
    r.degenerate = true;
    r.conditional = 0.0;
  } else {
    r.conditional = static_cast<double>(r.consistent_correct) / static_cast<double>(r.correct);
  }
  return r;
}

ConsistencyResult consistency_measure(const Model& model, const std::vector<ConsistencyPair>& pairs) {
  if (pairs.empty()) throw ContractError("consistency_measure: no pairs");
  std::vector<RgbImage> xs, xbars;
  std::vector<int> labels;
  for (const auto& p : pairs) {
    xs.push_back(p.x);
    xbars.push_back(p.x_bar);
    labels.push_back(p.y);
  }
  const std::size_t threads = configured_threads();
  const auto px = argmax_rows(evaluate_logits(model, xs, threads));
  const auto pxb = argmax_rows(evaluate_logits(model, xbars, threads));
  return consistency_from_predictions(px, pxb, labels);
}

namespace {

std::vector<double> centered_columns(const Tensor& m) {
  const std::size_t n = m.dim(0), p = m.dim(1);
  std::vector<double> out(m.data().begin(), m.data().end());
  for (std::size_t j = 0; j < p; ++j) {
    double mu = 0.0;
    for (std::size_t i = 0; i < n; ++i) mu += out[i * p + j];
    mu /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) out[i * p + j] -= mu;
  }
  return out;
}

// ||A^T B||_F^2 for column-major-free row-major A[n x p], B[n x q].
double cross_frobenius_sq(const std::vector<double>& a, std::size_t p, const std::vector<double>& b, std::size_t q,
                          std::size_t n) {
  double total = 0.0;
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j < q; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < n; ++k) dot += a[k * p + i] * b[k * q + j];
      total += dot * dot;
    }
  }
  return total;
}

}  // namespace

double linear_cka(const Tensor& x, const Tensor& y) {
  if (x.rank() != 2 || y.rank() != 2 || x.dim(0) != y.dim(0)) {
    throw DimensionError("linear_cka: representations " + shape_string(x.shape()) + " and " + shape_string(y.shape()) +
                         " must share the row count");
  }
  const std::size_t n = x.dim(0), p = x.dim(1), q = y.dim(1);
  if (n < 2) throw DegenerateInputError("linear_cka: need at least 2 samples");
  const auto xc = centered_columns(x);
  const auto yc = centered_columns(y);
  const double numerator = cross_frobenius_sq(yc, q, xc, p, n);
  const double denominator = std::sqrt(cross_frobenius_sq(xc, p, xc, p, n)) * std::sqrt(cross_frobenius_sq(yc, q, yc, q, n));
  if (!(denominator > 0.0)) throw DegenerateInputError("linear_cka: a representation is constant across samples");
  return numerator / denominator;
}

double cka_layer_score(const Model& model, std::size_t layer, std::span<const RgbImage> batch_a,
                       std::span<const RgbImage> batch_b, RepresentationMode mode) {
  if (batch_a.size() != batch_b.size()) throw ContractError("cka_layer_score: batches must be index-paired");
  return linear_cka(model.layer_representation(batch_a, layer, mode), model.layer_representation(batch_b, layer, mode));
}

double energy_score(std::span<const double> logits, double temperature) {
  if (logits.empty()) throw ContractError("energy_score: empty logits");
  if (!(temperature > 0.0)) throw ContractError("energy_score: temperature must be positive");
  double mx = logits[0] / temperature;
  for (double l : logits) mx = std::max(mx, l / temperature);
  double total = 0.0;
  for (double l : logits) total += std::exp(l / temperature - mx);
  return -temperature * (mx + std::log(total));
}

std::vector<double> id_scores_from_logits(const Tensor& logits, double temperature) {
  const std::size_t B = logits.dim(0), C = logits.dim(1);
  std::vector<double> out(B);
  for (std::size_t b = 0; b < B; ++b) out[b] = -energy_score(logits.data().subspan(b * C, C), temperature);
  return out;
}

double auroc(std::span<const double> id_scores, std::span<const double> ood_scores) {
  if (id_scores.empty() || ood_scores.empty()) throw ContractError("auroc: both score sets must be nonempty");
  std::vector<double> ood(ood_scores.begin(), ood_scores.end());
  std::sort(ood.begin(), ood.end());
  // Twice the Mann-Whitney statistic stays an exact integer in a double.
  double twice = 0.0;
  for (double s : id_scores) {
    const auto lo = std::lower_bound(ood.begin(), ood.end(), s);
    const auto hi = std::upper_bound(ood.begin(), ood.end(), s);
    twice += 2.0 * static_cast<double>(lo - ood.begin()) + static_cast<double>(hi - lo);
  }
  return twice / 2.0 / (static_cast<double>(id_scores.size()) * static_cast<double>(ood_scores.size()));
}

double fpr_at_tpr(std::span<const double> id_scores, std::span<const double> ood_scores, double tpr_target) {
  if (id_scores.empty() || ood_scores.empty()) throw ContractError("fpr_at_tpr: both score sets must be nonempty");
  if (!(tpr_target > 0.0 && tpr_target <= 1.0)) throw ContractError("fpr_at_tpr: target must lie in (0, 1]");
  std::vector<double> id(id_scores.begin(), id_scores.end());
  std::sort(id.begin(), id.end(), std::greater<>());
  // The tolerance absorbs representation error such as 0.95 * 20 = 19.000000000000004.
  auto k = static_cast<std::size_t>(std::ceil(tpr_target * static_cast<double>(id.size()) - 1e-9));
  k = std::clamp<std::size_t>(k, 1, id.size());
  const double tau = id[k - 1];
  std::size_t above = 0;
  for (double s : ood_scores) above += s >= tau ? 1 : 0;
  return static_cast<double>(above) / static_cast<double>(ood_scores.size());
}

OODReport ood_report(std::span<const double> id_scores, std::span<const double> ood_scores) {
  OODReport r;
  r.auroc = auroc(id_scores, ood_scores);
  r.fpr95 = fpr_at_tpr(id_scores, ood_scores, 0.95);
  return r;
}

}  // namespace splab
