#pragma once

#include <array>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "pisa/assignment.hpp"
#include "pisa/isr.hpp"

namespace pisa {

struct CeResult {
  double loss = 0.0;             // sum_i w_i * CE_i
  Eigen::MatrixXd grad_logits;   // d loss / d logits
  std::vector<double> per_sample;  // unweighted CE_i
};

// Weighted softmax cross-entropy computed from logits. Throws on non-finite
// logits or weights, or on a target outside [0, cols).
CeResult weighted_ce(const Eigen::MatrixXd& logits, std::span<const int> targets,
                     std::span<const double> weights);

struct CarlResult {
  double loss = 0.0;
  double v_sum = 0.0;              // S = sum_j v_j
  std::vector<double> v;
  std::vector<double> c;           // c_i = n v_i / S, also d loss / d L_i
  std::vector<double> grad_p;      // exact d loss / d p_i
  std::vector<double> grad_p_direct;  // (n/S)(1 - v_i/S) dv_i/dp_i L_i, the own-sample term
};

// Classification-aware regression loss sum_i c_i L_i with v_i =
// ((1-b) p_i + b)^k and c_i = v_i / mean(v). Gradients include the cross
// terms through S. Empty input gives a zero loss.
CarlResult carl(std::span<const double> p, std::span<const double> reg_losses, double k, double b);

// Large-batch approximation (n/S) dv_i/dp_i L_i. Only meaningful when every
// v_i is small relative to S, so n < 2 throws std::domain_error.
std::vector<double> carl_grad_approx(std::span<const double> p, std::span<const double> reg_losses,
                                     double k, double b);

struct CarlParams {
  bool enable = true;
  double k = 1.0;
  double b = 0.2;
  double weight = 1.0;
  bool replace_reg = false;  // drop the plain smooth-L1 term when CARL is on
};

struct LossConfig {
  CarlParams carl;
  double reg_weight = 1.0;
  // Regression residuals are divided by these before smooth-L1.
  std::array<double, 4> delta_stds{0.1, 0.1, 0.2, 0.2};
};

struct LossBundle {
  double cls_loss = 0.0;
  double reg_loss = 0.0;
  double carl_loss = 0.0;
  Eigen::MatrixXd grad_logits;   // per sample, per class
  std::vector<Delta> grad_deltas;  // per sample

  double total() const { return cls_loss + reg_loss + carl_loss; }
};

// Smooth-L1 loss of one positive summed over the four normalized offsets.
double regression_loss(const Delta& pred, const Delta& target, const std::array<double, 4>& stds);

// Classification loss (mean over non-ignored samples, ISR-weighted when
// `weights` is given), smooth-L1 regression and CARL (both averaged over the
// positive count). Gradients are with respect to the batch logits and
// regression deltas.
LossBundle total_loss(const SampleBatch& batch, const WeightSet* weights, const LossConfig& config);

}  // namespace pisa
