#pragma once

// Segmentation losses: BCE, smoothed soft Dice, a differentiable accuracy
// surrogate, the three composite losses and the weighted dual-head total.

#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>

#include "glandseg/tensor.hpp"

namespace glandseg {

enum class LossKind { L1, L2, L3 };

inline std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::L1: return "L1";
    case LossKind::L2: return "L2";
    case LossKind::L3: return "L3";
  }
  return "?";
}

inline LossKind parse_loss_kind(std::string_view s) {
  if (s == "L1" || s == "l1") return LossKind::L1;
  if (s == "L2" || s == "l2") return LossKind::L2;
  if (s == "L3" || s == "l3") return LossKind::L3;
  throw std::invalid_argument("unknown loss kind '" + std::string(s) + "' (expected L1, L2 or L3)");
}

struct LossOptions {
  double smoothing = 1.0;        // S in the Dice ratio
  double clamp_eps = 1e-7;       // probabilities are clamped to [eps, 1 - eps] inside logs
  double coarse_weight = 2.0;    // weight of the internal-head loss
};

// Mean binary cross-entropy; `truth` is a constant {0,1} map.
template <typename T>
BasicTensor<T> bce(const BasicTensor<T>& truth, const BasicTensor<T>& prob,
                   const LossOptions& opts = {}) {
  detail::require_same_shape(truth, prob, "bce");
  const T eps = static_cast<T>(opts.clamp_eps);
  auto p = clamp(prob, eps, T(1) - eps);
  auto one_minus_truth = add_scalar(scalar_mul(truth, T(-1)), T(1));
  auto one_minus_p = add_scalar(scalar_mul(p, T(-1)), T(1));
  auto per_pixel = add(mul(truth, log(p)), mul(one_minus_truth, log(one_minus_p)));
  return scalar_mul(reduce_mean(per_pixel), T(-1));
}

template <typename T>
BasicTensor<T> soft_dice(const BasicTensor<T>& truth, const BasicTensor<T>& prob,
                         double smoothing = 1.0) {
  detail::require_same_shape(truth, prob, "soft_dice");
  const T s = static_cast<T>(smoothing);
  auto numer = add_scalar(scalar_mul(reduce_sum(mul(truth, prob)), T(2)), s);
  auto denom = add_scalar(add(reduce_sum(truth), reduce_sum(prob)), s);
  return div(numer, denom);
}

// mean(G·O + (1−G)·(1−O)); equals (TP+TN)/N whenever O is binary.
template <typename T>
BasicTensor<T> soft_accuracy(const BasicTensor<T>& truth, const BasicTensor<T>& prob) {
  detail::require_same_shape(truth, prob, "soft_accuracy");
  auto one_minus_truth = add_scalar(scalar_mul(truth, T(-1)), T(1));
  auto one_minus_p = add_scalar(scalar_mul(prob, T(-1)), T(1));
  return reduce_mean(add(mul(truth, prob), mul(one_minus_truth, one_minus_p)));
}

template <typename T>
struct CompositeTerms {
  BasicTensor<T> bce, dice, accuracy, loss;
};

template <typename T>
CompositeTerms<T> composite_terms(LossKind kind, const BasicTensor<T>& truth,
                                  const BasicTensor<T>& prob, const LossOptions& opts = {}) {
  CompositeTerms<T> t;
  t.bce = bce(truth, prob, opts);
  t.dice = soft_dice(truth, prob, opts.smoothing);
  t.accuracy = soft_accuracy(truth, prob);
  auto dice_term = exp(add_scalar(t.dice, T(1)));
  switch (kind) {
    case LossKind::L1:
      t.loss = sub(t.bce, dice_term);
      break;
    case LossKind::L2:
      t.loss = sub(sub(t.bce, dice_term), t.accuracy);
      break;
    case LossKind::L3:
      t.loss = sub(sub(scalar_mul(t.bce, T(2)), dice_term), t.accuracy);
      break;
  }
  return t;
}

template <typename T>
BasicTensor<T> composite_loss(LossKind kind, const BasicTensor<T>& truth,
                              const BasicTensor<T>& prob, const LossOptions& opts = {}) {
  return composite_terms(kind, truth, prob, opts).loss;
}

// Scalar record of one step. bce/dice/accuracy describe the full-resolution head.
struct LossValues {
  double bce = 0, dice = 0, accuracy = 0;
  double l_i = 0, l_o = 0, l_final = 0;
};

template <typename T>
struct TotalLoss {
  BasicTensor<T> l_final, l_i, l_o;
  LossValues values;
};

template <typename T>
TotalLoss<T> total_loss(LossKind coarse_kind, LossKind final_kind, const BasicTensor<T>& truth_full,
                        const BasicTensor<T>& prob_full, const BasicTensor<T>& truth_coarse,
                        const BasicTensor<T>& prob_coarse, const LossOptions& opts = {}) {
  auto inner = composite_terms(coarse_kind, truth_coarse, prob_coarse, opts);
  auto outer = composite_terms(final_kind, truth_full, prob_full, opts);
  TotalLoss<T> total;
  total.l_i = inner.loss;
  total.l_o = outer.loss;
  total.l_final = add(scalar_mul(inner.loss, static_cast<T>(opts.coarse_weight)), outer.loss);
  total.values = {outer.bce.item(),  outer.dice.item(), outer.accuracy.item(),
                  inner.loss.item(), outer.loss.item(), total.l_final.item()};
  return total;
}

template <typename T>
TotalLoss<T> total_loss(LossKind kind, const BasicTensor<T>& truth_full, const BasicTensor<T>& prob_full,
                        const BasicTensor<T>& truth_coarse, const BasicTensor<T>& prob_coarse,
                        const LossOptions& opts = {}) {
  return total_loss(kind, kind, truth_full, prob_full, truth_coarse, prob_coarse, opts);
}

}  // namespace glandseg
