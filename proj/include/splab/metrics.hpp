#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "splab/data.hpp"
#include "splab/models.hpp"
#include "splab/tensor.hpp"

namespace splab {

// Row-wise argmax of [B x C] logits; ties go to the lower class index.
std::vector<int> argmax_rows(const Tensor& logits);

struct GroupAccuracyReport {
  std::map<int, double> per_group;
  std::map<int, std::size_t> counts;
  double average = 0.0;  // count-weighted, i.e. overall accuracy
  double worst = 0.0;    // min over groups with count > 0
  int worst_group = -1;  // lowest id among groups attaining the minimum
};

GroupAccuracyReport group_accuracies(std::span<const int> predictions, std::span<const int> labels,
                                     std::span<const int> groups);

// Consistency Measure. Conditional (primary) form:
//   #{i : f(x_i) = y_i and f(x_i) = f(x_bar_i)} / #{i : f(x_i) = y_i}
// Unconditional form divides the same numerator by N. A zero denominator
// yields 0 with `degenerate` set.
struct ConsistencyResult {
  double conditional = 0.0;
  double unconditional = 0.0;
  std::size_t correct = 0;
  std::size_t consistent_correct = 0;
  std::size_t total = 0;
  bool degenerate = false;
};

ConsistencyResult consistency_from_predictions(std::span<const int> pred_x, std::span<const int> pred_x_bar,
                                               std::span<const int> labels);
ConsistencyResult consistency_measure(const Model& model, const std::vector<ConsistencyPair>& pairs);

// Linear CKA of X[n x p] and Y[n x q] after column centering:
//   ||Yc^T Xc||_F^2 / (||Xc^T Xc||_F ||Yc^T Yc||_F)
// Throws DegenerateInputError for n < 2 or a zero denominator.
double linear_cka(const Tensor& x, const Tensor& y);

// CKA between layer representations of two index-paired batches.
double cka_layer_score(const Model& model, std::size_t layer, std::span<const RgbImage> batch_a,
                       std::span<const RgbImage> batch_b, RepresentationMode mode = RepresentationMode::ClassToken);

// E = -T log sum_k exp(logit_k / T), via a stable log-sum-exp.
double energy_score(std::span<const double> logits, double temperature = 1.0);

// Scores where higher means more in-distribution: -E per row of [B x C] logits.
std::vector<double> id_scores_from_logits(const Tensor& logits, double temperature = 1.0);

// Mann-Whitney AUROC with in-distribution as the positive class; ties count 1/2.
double auroc(std::span<const double> id_scores, std::span<const double> ood_scores);

// tau = the ceil(target * n_id)-th largest ID score; returns #{ood >= tau} / n_ood.
double fpr_at_tpr(std::span<const double> id_scores, std::span<const double> ood_scores, double tpr_target = 0.95);

struct OODReport {
  double auroc = 0.0;
  double fpr95 = 0.0;
  std::string convention = "higher_score_is_in_distribution";
  std::string score = "negative_energy_T1";
};

OODReport ood_report(std::span<const double> id_scores, std::span<const double> ood_scores);

}  // namespace splab
