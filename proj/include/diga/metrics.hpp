#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "diga/config.hpp"
#include "diga/core.hpp"
#include "diga/image_ops.hpp"
#include "diga/model.hpp"

namespace diga {

/// Rows are ground truth, columns predictions.
struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<std::int64_t> counts;
  std::int64_t ignored = 0;

  explicit ConfusionMatrix(int c = 0)
      : num_classes(c), counts(static_cast<std::size_t>(c) * c, 0) {}

  std::int64_t& at(int gt, int pred) {
    return counts[static_cast<std::size_t>(gt) * num_classes + pred];
  }
  [[nodiscard]] std::int64_t at(int gt, int pred) const {
    return counts[static_cast<std::size_t>(gt) * num_classes + pred];
  }
  [[nodiscard]] std::int64_t total() const {
    std::int64_t t = 0;
    for (auto v : counts) t += v;
    return t;
  }

  bool operator==(const ConfusionMatrix&) const = default;
};

/// Predictions must be complete (no ignore id); gt-ignore pixels are counted
/// in `ignored`.
inline void accumulate(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& gt,
                       int ignore_id) {
  require_same_shape(pred, gt, "accumulate");
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto p = pred.data[i];
    if (p < 0 || p >= cm.num_classes)
      throw ValidationError("accumulate: prediction " + std::to_string(p) +
                            " is not a class id");
  }
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const auto g = gt.data[i];
    if (g == ignore_id) {
      ++cm.ignored;
      continue;
    }
    if (g < 0 || g >= cm.num_classes)
      throw ValidationError("accumulate: ground truth " + std::to_string(g) + " out of range");
    ++cm.at(g, pred.data[i]);
  }
}

struct MiouResult {
  std::vector<double> iou;       // NaN for classes absent from the ground truth
  std::vector<bool> present;     // class has at least one gt pixel
  double mean = std::numeric_limits<double>::quiet_NaN();
};

/// IoU_k = TP / (TP + FP + FN); the mean runs over classes present in gt.
inline MiouResult miou(const ConfusionMatrix& cm) {
  const int C = cm.num_classes;
  MiouResult r;
  r.iou.assign(static_cast<std::size_t>(C), std::numeric_limits<double>::quiet_NaN());
  r.present.assign(static_cast<std::size_t>(C), false);
  double sum = 0.0;
  int n = 0;
  for (int k = 0; k < C; ++k) {
    std::int64_t gt = 0, pred = 0;
    for (int j = 0; j < C; ++j) {
      gt += cm.at(k, j);
      pred += cm.at(j, k);
    }
    if (gt == 0) continue;
    const auto tp = cm.at(k, k);
    const double iou = static_cast<double>(tp) / static_cast<double>(gt + pred - tp);
    r.iou[static_cast<std::size_t>(k)] = iou;
    r.present[static_cast<std::size_t>(k)] = true;
    sum += iou;
    ++n;
  }
  if (n > 0) r.mean = sum / n;
  return r;
}

/// Averaged class distributions over rescaled copies of the input.
template <typename T>
ProbMap<T> mst_predict(const Architecture& arch, std::span<const T> params, const Tensor<T>& x,
                       std::span<const double> scales) {
  if (scales.empty()) throw ValidationError("mst_predict: no scales");
  ProbMap<T> acc(arch.num_classes, x.height, x.width);
  const int s = arch.feature_stride;
  for (double scale : scales) {
    auto snap = [&](int n) {
      return std::max(s, static_cast<int>(std::lround(n * scale / s)) * s);
    };
    const int h = snap(x.height), w = snap(x.width);
    ProbMap<T> p;
    if (h == x.height && w == x.width) {
      p = forward_any(arch, params, x).probs;
    } else {
      p = resize_bilinear(forward_any(arch, params, resize_bilinear(x, h, w)).probs, x.height,
                          x.width);
    }
    for (std::size_t i = 0; i < acc.size(); ++i) acc.data[i] += p.data[i];
  }
  const std::size_t n = acc.plane();
  for (std::size_t i = 0; i < n; ++i) {
    T z{0};
    for (int c = 0; c < acc.channels; ++c) z += acc.data[c * n + i];
    for (int c = 0; c < acc.channels; ++c) acc.data[c * n + i] /= z;
  }
  return acc;
}

/// Per-pixel 1 - max_c p(c).
template <typename T>
ScalarMap uncertainty_map(const ProbMap<T>& probs) {
  ScalarMap u(1, probs.height, probs.width);
  const std::size_t n = probs.plane();
  for (std::size_t i = 0; i < n; ++i) {
    T m = probs.data[i];
    for (int c = 1; c < probs.channels; ++c) m = std::max(m, probs.data[c * n + i]);
    u.data[i] = static_cast<float>(T{1} - m);
  }
  return u;
}

/// Argmax kept where its probability reaches that class's threshold.
template <typename T>
LabelMap threshold_labels(const ProbMap<T>& probs, std::span<const double> thresholds,
                          int ignore_id) {
  if (static_cast<int>(thresholds.size()) != probs.channels)
    throw ShapeError("threshold_labels: need one threshold per class");
  LabelMap out = argmax_labels(probs);
  const std::size_t n = probs.plane();
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = out.data[i];
    if (probs.data[static_cast<std::size_t>(k) * n + i] < thresholds[static_cast<std::size_t>(k)])
      out.data[i] = ignore_id;
  }
  return out;
}

/// Counts behind pseudo-label precision, recall and coverage. Only pixels
/// with a non-ignore ground truth are evaluated.
struct PseudoCounts {
  std::int64_t labelled = 0;  // non-ignore pseudo-label pixels
  std::int64_t correct = 0;
  std::int64_t gt_valid = 0;

  void add(const LabelMap& pseudo, const LabelMap& gt, int ignore_id) {
    require_same_shape(pseudo, gt, "pseudo_quality");
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (gt.data[i] == ignore_id) continue;
      ++gt_valid;
      if (pseudo.data[i] == ignore_id) continue;
      ++labelled;
      correct += (pseudo.data[i] == gt.data[i]);
    }
  }
};

/// Undefined values (zero denominators) are empty optionals.
struct PseudoQuality {
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> coverage;
};

inline PseudoQuality quality_of(const PseudoCounts& c) {
  PseudoQuality q;
  if (c.labelled > 0) q.precision = static_cast<double>(c.correct) / c.labelled;
  if (c.gt_valid > 0) {
    q.recall = static_cast<double>(c.correct) / c.gt_valid;
    q.coverage = static_cast<double>(c.labelled) / c.gt_valid;
  }
  return q;
}

inline PseudoQuality pseudo_quality(const LabelMap& pseudo, const LabelMap& gt, int ignore_id) {
  PseudoCounts c;
  c.add(pseudo, gt, ignore_id);
  return quality_of(c);
}

/// Predicts every image (optionally multi-scale) and scores against gt.
template <typename T>
MiouResult evaluate_miou(const Architecture& arch, std::span<const T> params,
                         std::span<const Image> images, std::span<const LabelMap> labels,
                         const TrainConfig& cfg, bool multi_scale) {
  ConfusionMatrix cm(arch.num_classes);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto x = to_tensor<T>(images[i]);
    const auto probs = multi_scale ? mst_predict(arch, params, x, cfg.mst_scales)
                                   : forward_any(arch, params, x).probs;
    accumulate(cm, argmax_labels(probs), labels[i], cfg.ignore_id);
  }
  return miou(cm);
}

}  // namespace diga
