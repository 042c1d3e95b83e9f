#pragma once

#include <vector>

#include "nodx/tensor.hpp"

namespace nodx {

inline constexpr double kBceClampEps = 1e-7;
inline constexpr double kDiceEps = 1e-5;

/// Binary cross-entropy on a probability clamped to [eps, 1-eps]:
/// -(label*ln(p) + (1-label)*ln(1-p)).
double bce(double prob, int label);

/// d bce(sigmoid(z), label) / dz. Zero where the clamp is active.
double bce_grad_wrt_logit(double logit, int label);

/// 1 - (2*sum(p*t) + eps) / (sum(p) + sum(t) + eps).
double dice_loss(const Tensor& pred, const Tensor& target);

/// Gradient of dice_loss with respect to pred.
Tensor dice_loss_grad(const Tensor& pred, const Tensor& target);

/// Mean voxelwise binary cross-entropy of probabilities against a binary mask.
double mask_cross_entropy(const Tensor& pred, const Tensor& target);
Tensor mask_cross_entropy_grad(const Tensor& pred, const Tensor& target);

struct SegLossTerms {
  double total = 0.0;
  double dice = 0.0;
  double ce = 0.0;
  double w = 1.0;
};

/// Dice + w * CE on probabilities.
SegLossTerms seg_total_loss(const Tensor& pred, const Tensor& target, double w = 1.0);

/// Gradient of seg_total_loss.total with respect to pred.
Tensor seg_total_loss_grad(const Tensor& pred, const Tensor& target, double w = 1.0);

struct LossWeights {
  std::vector<double> w;  // one positive weight per manifestation
};

/// w_i = 1 / AUC_i from the phase-1 validation AUCs.
LossWeights weights_from_phase1_auc(const std::vector<double>& aucs);

/// L_all = L_D + sum_i w_i * L_M_i.
double total_loss(double diag_loss, const std::vector<double>& manifestation_losses,
                  const LossWeights& weights);

struct SelectionWeights {
  std::vector<double> w_sel;  // each 1/K

  static SelectionWeights uniform(int k);
};

/// V_D + sum_i w_sel_i * V_M_i.
double selection_score(double diag_metric, const std::vector<double>& manifestation_metrics,
                       const SelectionWeights& weights);

}  // namespace nodx
