#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "xrseg/ops.hpp"
#include "xrseg/tape.hpp"
#include "xrseg/tensor.hpp"

namespace xrseg {

// --- hard (thresholded) metrics --------------------------------------------

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

template <typename T>
ConfusionCounts confusion_counts(const Tensor<T>& pred, const Tensor<T>& truth,
                                 double threshold = 0.5) {
  check(pred.shape == truth.shape, "shape-mismatch",
        "confusion_counts: " + shape_str(pred.shape) + " vs " +
            shape_str(truth.shape));
  ConfusionCounts c;
  const std::size_t n = pred.numel();
  for (std::size_t i = 0; i < n; ++i) {
    const bool p = pred.data()[i] >= (T)threshold;
    const bool t = truth.data()[i] >= (T)0.5;
    if (p && t)
      ++c.tp;
    else if (p && !t)
      ++c.fp;
    else if (!p && t)
      ++c.fn;
    else
      ++c.tn;
  }
  return c;
}

struct DerivedMetrics {
  double accuracy = 0, precision = 0, recall = 0, f1 = 0, specificity = 0,
         sensitivity = 0;
  double dice = 0, jaccard = 0;  // hard-mask overlap (dice == f1)
  bool degenerate = false;       // some ratio had a 0/0 resolved to 0
};

inline DerivedMetrics derive_metrics(const ConfusionCounts& c) {
  DerivedMetrics m;
  auto ratio = [&](double num, double den) {
    if (den == 0) {
      m.degenerate = true;
      return 0.0;
    }
    return num / den;
  };
  const double tp = (double)c.tp, fp = (double)c.fp, fn = (double)c.fn,
               tn = (double)c.tn;
  m.accuracy = ratio(tp + tn, tp + tn + fp + fn);
  m.precision = ratio(tp, tp + fp);
  m.recall = ratio(tp, tp + fn);
  m.f1 = ratio(2 * m.precision * m.recall, m.precision + m.recall);
  m.specificity = ratio(tn, tn + fp);
  m.sensitivity = m.recall;
  m.dice = ratio(2 * tp, 2 * tp + fp + fn);
  m.jaccard = ratio(tp, tp + fp + fn);
  return m;
}

// One row of the training/validation log.
struct MetricsReport {
  double loss = 0;
  double dice_coef = 0;
  double jaccard_coef = 0;
  double binary_accuracy = 0;
  double precision = 0;
  double recall = 0;
  double specificity = 0;
  double sensitivity = 0;
  double f1 = 0;
};

// --- soft overlap coefficients ----------------------------------------------

// dice = (2*sum(p*t) + eps) / (sum(p) + sum(t) + eps); eps=0 with empty
// operands is defined as perfect agreement.
template <typename T>
double dice_coef(const Tensor<T>& pred, const Tensor<T>& truth,
                 double eps = 0.0) {
  check(pred.shape == truth.shape, "shape-mismatch",
        "dice_coef: " + shape_str(pred.shape) + " vs " +
            shape_str(truth.shape));
  double inter = 0, sp = 0, st = 0;
  const std::size_t n = pred.numel();
  for (std::size_t i = 0; i < n; ++i) {
    inter += (double)pred.data()[i] * (double)truth.data()[i];
    sp += pred.data()[i];
    st += truth.data()[i];
  }
  const double den = sp + st + eps;
  if (den == 0) return 1.0;
  return (2.0 * inter + eps) / den;
}

// jaccard = (sum(p*t) + eps) / (sum(p) + sum(t) - sum(p*t) + eps)
template <typename T>
double jaccard_coef(const Tensor<T>& pred, const Tensor<T>& truth,
                    double eps = 0.0) {
  check(pred.shape == truth.shape, "shape-mismatch",
        "jaccard_coef: " + shape_str(pred.shape) + " vs " +
            shape_str(truth.shape));
  double inter = 0, sp = 0, st = 0;
  const std::size_t n = pred.numel();
  for (std::size_t i = 0; i < n; ++i) {
    inter += (double)pred.data()[i] * (double)truth.data()[i];
    sp += pred.data()[i];
    st += truth.data()[i];
  }
  const double den = sp + st - inter + eps;
  if (den == 0) return 1.0;
  return (inter + eps) / den;
}

// --- differentiable losses ----------------------------------------------------

constexpr double kDiceLossEps = 1e-6;
constexpr double kBceClamp = 1e-7;

// 1 - soft dice over the whole tensor, recorded as a single tape node.
template <typename T>
Tensor<T> dice_loss(const Tensor<T>& pred, const Tensor<T>& truth,
                    Tape<T>* tape = nullptr) {
  check(pred.shape == truth.shape, "shape-mismatch",
        "dice_loss: " + shape_str(pred.shape) + " vs " +
            shape_str(truth.shape));
  double inter = 0, sp = 0, st = 0;
  const std::size_t n = pred.numel();
  for (std::size_t i = 0; i < n; ++i) {
    inter += (double)pred.data()[i] * (double)truth.data()[i];
    sp += pred.data()[i];
    st += truth.data()[i];
  }
  const double dice = (2.0 * inter + kDiceLossEps) / (sp + st + kDiceLossEps);
  Tensor<T> out = Tensor<T>::scalar((T)(1.0 - dice));
  detail::maybe_record(tape, OpKind::DiceLoss, {pred}, out,
                       LossCtx<T>{truth, inter, sp + st, kDiceLossEps});
  return out;
}

// Mean binary cross-entropy with probability clamping.
template <typename T>
Tensor<T> bce_loss(const Tensor<T>& pred, const Tensor<T>& truth,
                   Tape<T>* tape = nullptr) {
  check(pred.shape == truth.shape, "shape-mismatch",
        "bce_loss: " + shape_str(pred.shape) + " vs " +
            shape_str(truth.shape));
  double acc = 0;
  const std::size_t n = pred.numel();
  for (std::size_t i = 0; i < n; ++i) {
    double p = pred.data()[i];
    if (p < kBceClamp) p = kBceClamp;
    if (p > 1.0 - kBceClamp) p = 1.0 - kBceClamp;
    const double t = truth.data()[i];
    acc += -(t * std::log(p) + (1.0 - t) * std::log(1.0 - p));
  }
  Tensor<T> out = Tensor<T>::scalar((T)(acc / (double)n));
  detail::maybe_record(tape, OpKind::BceLoss, {pred}, out,
                       LossCtx<T>{truth, 0, 0, kBceClamp});
  return out;
}

// --- score distribution curve --------------------------------------------------

struct CurvePoint {
  double threshold;
  double fraction;  // fraction of scores <= threshold (empirical CDF)
};

// Empirical CDF sampled at thresholds i/n_points for i in 1..n_points.
// Scores live in [0,1], so the final fraction is always 1.
inline std::vector<CurvePoint> cumulative_curve(const std::vector<double>& scores,
                                                std::size_t n_points = 100) {
  check(!scores.empty(), "bad-arg", "cumulative_curve: empty score list");
  check(n_points >= 1, "bad-arg", "cumulative_curve: need at least 1 point");
  std::vector<CurvePoint> out;
  out.reserve(n_points);
  for (std::size_t i = 1; i <= n_points; ++i) {
    const double thr = (double)i / (double)n_points;
    std::size_t k = 0;
    for (double s : scores)
      if (s <= thr) ++k;
    out.push_back({thr, (double)k / (double)scores.size()});
  }
  return out;
}

}  // namespace xrseg
