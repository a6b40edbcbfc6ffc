#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pisa/assignment.hpp"

namespace pisa {

struct IsrParams {
  double gamma_pos = 2.0;
  double beta_pos = 0.0;
  double gamma_neg = 0.5;
  double beta_neg = 0.0;
  bool enable_pos = true;
  bool enable_neg = true;
  double cluster_iou_thr = 0.7;
};

// Linear rank-to-importance map u = (n_max - r) / n_max, where n_max is the
// largest class size across all lists. Output is aligned with the input.
std::vector<std::vector<double>> rank_to_importance(const std::vector<std::vector<int>>& ranks_by_class);

// w = ((1 - beta) u + beta)^gamma. Throws for gamma <= 0 or beta outside [0, 1).
double importance_to_weight(double u, double gamma, double beta);

// w'_i = w_i * sum(ce) / sum(w * ce). Returns w unchanged when sum(w * ce) == 0.
std::vector<double> normalize_weights(std::span<const double> w, std::span<const double> ce);

// Per-sample ISR quantities, aligned with the batch. Ignored samples carry
// zero weight. When a side is disabled its samples get u = w = w_norm = 1.
struct WeightSet {
  std::vector<double> u;
  std::vector<double> w;
  std::vector<double> w_norm;
  std::vector<int> class_id;
};

// Ranks positives with IoU-HLR within each foreground class and negatives
// with Score-HLR (single background class), maps ranks through the shared
// n_max, and normalizes positives and negatives separately against `ce`.
// gamma == 0 selects the uniform-weight limit of the power map.
WeightSet isr_weights(const SampleBatch& batch, std::span<const double> ce, const IsrParams& params);

}  // namespace pisa
