#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

#include "diga/core.hpp"

namespace diga {

template <typename T>
T safe_log(T p) {
  return std::log(std::max(p, std::numeric_limits<T>::min()));
}

struct CeResult {
  double value = 0.0;
  std::size_t valid = 0;
  bool empty = true;  // no non-ignore pixel; value is 0
};

/// Mean over non-ignore pixels of -log p[y].
template <typename T>
CeResult ce_loss(const ProbMap<T>& probs, const LabelMap& labels, int ignore_id) {
  if (probs.height != labels.height || probs.width != labels.width)
    throw ShapeError("ce_loss: probs and labels differ in size");
  const std::size_t n = probs.plane();
  double sum = 0.0;
  std::size_t valid = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto y = labels.data[i];
    if (y == ignore_id) continue;
    sum -= safe_log(probs.data[static_cast<std::size_t>(y) * n + i]);
    ++valid;
  }
  if (valid == 0) return {};
  return {sum / static_cast<double>(valid), valid, false};
}

/// Adds scale * d(ce_loss)/d(logits) into `grad` (softmax logits).
template <typename T>
void ce_grad(const ProbMap<T>& probs, const LabelMap& labels, int ignore_id, double scale,
             Tensor<T>& grad) {
  const std::size_t n = probs.plane();
  std::size_t valid = 0;
  for (auto y : labels.data) valid += (y != ignore_id);
  if (valid == 0) return;
  const T s = static_cast<T>(scale / static_cast<double>(valid));
  for (std::size_t i = 0; i < n; ++i) {
    const auto y = labels.data[i];
    if (y == ignore_id) continue;
    for (int c = 0; c < probs.channels; ++c)
      grad.data[c * n + i] += s * (probs.data[c * n + i] - (c == y ? T{1} : T{0}));
  }
}

/// Pixel-mean of the soft cross-entropy H(a, b) = -sum_c a_c log b_c.
template <typename T>
double soft_cross_entropy(const ProbMap<T>& target, const ProbMap<T>& pred) {
  require_same_shape(target, pred, "soft_cross_entropy");
  const std::size_t n = target.plane();
  double sum = 0.0;
  for (std::size_t k = 0; k < target.size(); ++k)
    sum -= static_cast<double>(target.data[k]) * safe_log(pred.data[k]);
  return sum / static_cast<double>(n);
}

/// Adds scale * d(soft_cross_entropy(target, softmax(z)))/dz into `grad`.
template <typename T>
void soft_cross_entropy_grad(const ProbMap<T>& target, const ProbMap<T>& pred, double scale,
                             Tensor<T>& grad) {
  const std::size_t n = target.plane();
  const T s = static_cast<T>(scale / static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    T mass{0};
    for (int c = 0; c < target.channels; ++c) mass += target.data[c * n + i];
    for (int c = 0; c < target.channels; ++c)
      grad.data[c * n + i] += s * (mass * pred.data[c * n + i] - target.data[c * n + i]);
  }
}

/// Symmetric distillation:
///   H(teacher_clean, student_aug) + alpha * H(teacher_aug, student_clean).
template <typename T>
double distill_loss(const ProbMap<T>& teacher_clean, const ProbMap<T>& student_aug,
                    const ProbMap<T>& teacher_aug, const ProbMap<T>& student_clean,
                    double alpha) {
  require_same_shape(teacher_clean, student_aug, "distill_loss");
  require_same_shape(teacher_aug, student_clean, "distill_loss");
  require_same_shape(teacher_clean, teacher_aug, "distill_loss");
  return soft_cross_entropy(teacher_clean, student_aug) +
         alpha * soft_cross_entropy(teacher_aug, student_clean);
}

}  // namespace diga
