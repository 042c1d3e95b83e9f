#include "nodx/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "nodx/nn/layers.hpp"

namespace nodx {

double bce(double prob, int label) {
  if (label != 0 && label != 1) throw std::invalid_argument("bce: label must be 0 or 1");
  const double p = std::clamp(prob, kBceClampEps, 1.0 - kBceClampEps);
  return -(label * std::log(p) + (1 - label) * std::log(1.0 - p));
}

double bce_grad_wrt_logit(double logit, int label) {
  const double p = nn::sigmoid(logit);
  if (p < kBceClampEps || p > 1.0 - kBceClampEps) return 0.0;  // clamp is flat
  return p - static_cast<double>(label);
}

namespace {
void require_same_extents(const Tensor& a, const Tensor& b, const char* who) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(who) + ": mismatched extents");
}
}  // namespace

double dice_loss(const Tensor& pred, const Tensor& target) {
  require_same_extents(pred, target, "dice_loss");
  double inter = 0.0, psum = 0.0, tsum = 0.0;
  for (size_t i = 0; i < pred.numel(); ++i) {
    inter += pred[i] * target[i];
    psum += pred[i];
    tsum += target[i];
  }
  return 1.0 - (2.0 * inter + kDiceEps) / (psum + tsum + kDiceEps);
}

Tensor dice_loss_grad(const Tensor& pred, const Tensor& target) {
  require_same_extents(pred, target, "dice_loss");
  double inter = 0.0, psum = 0.0, tsum = 0.0;
  for (size_t i = 0; i < pred.numel(); ++i) {
    inter += pred[i] * target[i];
    psum += pred[i];
    tsum += target[i];
  }
  const double num = 2.0 * inter + kDiceEps;
  const double den = psum + tsum + kDiceEps;
  Tensor g(pred.shape());
  for (size_t i = 0; i < pred.numel(); ++i)
    g[i] = (num - 2.0 * target[i] * den) / (den * den);
  return g;
}

double mask_cross_entropy(const Tensor& pred, const Tensor& target) {
  require_same_extents(pred, target, "mask_cross_entropy");
  double acc = 0.0;
  for (size_t i = 0; i < pred.numel(); ++i)
    acc += bce(pred[i], target[i] != 0.0 ? 1 : 0);
  return acc / static_cast<double>(pred.numel());
}

Tensor mask_cross_entropy_grad(const Tensor& pred, const Tensor& target) {
  require_same_extents(pred, target, "mask_cross_entropy");
  Tensor g(pred.shape());
  const double inv_n = 1.0 / static_cast<double>(pred.numel());
  for (size_t i = 0; i < pred.numel(); ++i) {
    const double p = pred[i];
    if (p < kBceClampEps || p > 1.0 - kBceClampEps) {
      g[i] = 0.0;
      continue;
    }
    const double t = target[i] != 0.0 ? 1.0 : 0.0;
    g[i] = (p - t) / (p * (1.0 - p)) * inv_n;
  }
  return g;
}

SegLossTerms seg_total_loss(const Tensor& pred, const Tensor& target, double w) {
  if (w < 0.0) throw std::invalid_argument("seg_total_loss: w must be nonnegative");
  SegLossTerms t;
  t.dice = dice_loss(pred, target);
  t.ce = mask_cross_entropy(pred, target);
  t.w = w;
  t.total = t.dice + w * t.ce;
  return t;
}

Tensor seg_total_loss_grad(const Tensor& pred, const Tensor& target, double w) {
  Tensor g = dice_loss_grad(pred, target);
  const Tensor gce = mask_cross_entropy_grad(pred, target);
  for (size_t i = 0; i < g.numel(); ++i) g[i] += w * gce[i];
  return g;
}

LossWeights weights_from_phase1_auc(const std::vector<double>& aucs) {
  if (aucs.empty()) throw std::invalid_argument("weights_from_phase1_auc: empty AUC list");
  LossWeights out;
  for (double a : aucs) {
    if (!(a > 0.0 && a <= 1.0))
      throw std::invalid_argument("weights_from_phase1_auc: AUC must be in (0, 1]");
    out.w.push_back(1.0 / a);
  }
  return out;
}

double total_loss(double diag_loss, const std::vector<double>& manifestation_losses,
                  const LossWeights& weights) {
  if (manifestation_losses.size() != weights.w.size())
    throw std::invalid_argument("total_loss: weight/loss length mismatch");
  double acc = diag_loss;
  for (size_t i = 0; i < weights.w.size(); ++i)
    acc += weights.w[i] * manifestation_losses[i];
  return acc;
}

SelectionWeights SelectionWeights::uniform(int k) {
  if (k <= 0) throw std::invalid_argument("SelectionWeights: k must be positive");
  SelectionWeights s;
  s.w_sel.assign(static_cast<size_t>(k), 1.0 / static_cast<double>(k));
  return s;
}

double selection_score(double diag_metric, const std::vector<double>& manifestation_metrics,
                       const SelectionWeights& weights) {
  if (manifestation_metrics.size() != weights.w_sel.size())
    throw std::invalid_argument("selection_score: weight/metric length mismatch");
  double acc = diag_metric;
  for (size_t i = 0; i < weights.w_sel.size(); ++i)
    acc += weights.w_sel[i] * manifestation_metrics[i];
  return acc;
}

}  // namespace nodx
