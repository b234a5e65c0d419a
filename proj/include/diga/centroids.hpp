#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "diga/augment.hpp"
#include "diga/core.hpp"
#include "diga/model.hpp"
#include "diga/warmup.hpp"

namespace diga {

/// One feature-space centroid per class; rows of absent classes never vote.
struct CentroidBank {
  int num_classes = 0;
  int feature_dim = 0;
  std::vector<double> rho;    // num_classes x feature_dim, row-major
  std::vector<bool> present;

  CentroidBank() = default;
  CentroidBank(int c, int d)
      : num_classes(c), feature_dim(d), rho(static_cast<std::size_t>(c) * d, 0.0),
        present(static_cast<std::size_t>(c), false) {}

  std::span<double> row(int k) {
    return {rho.data() + static_cast<std::size_t>(k) * feature_dim,
            static_cast<std::size_t>(feature_dim)};
  }
  [[nodiscard]] std::span<const double> row(int k) const {
    return {rho.data() + static_cast<std::size_t>(k) * feature_dim,
            static_cast<std::size_t>(feature_dim)};
  }
  [[nodiscard]] bool any_present() const {
    for (bool p : present)
      if (p) return true;
    return false;
  }

  bool operator==(const CentroidBank&) const = default;
};

/// Per-class feature sums and pixel counts; means are sums / counts.
struct ClassMeans {
  int num_classes = 0;
  int feature_dim = 0;
  std::vector<double> sums;
  std::vector<std::int64_t> counts;

  ClassMeans(int c, int d)
      : num_classes(c), feature_dim(d), sums(static_cast<std::size_t>(c) * d, 0.0),
        counts(static_cast<std::size_t>(c), 0) {}

  [[nodiscard]] bool has(int k) const { return counts[static_cast<std::size_t>(k)] > 0; }

  /// Empty when the class has no pixels.
  [[nodiscard]] std::optional<std::vector<double>> mean(int k) const {
    if (!has(k)) return std::nullopt;
    std::vector<double> m(static_cast<std::size_t>(feature_dim));
    const double n = static_cast<double>(counts[static_cast<std::size_t>(k)]);
    for (int d = 0; d < feature_dim; ++d)
      m[static_cast<std::size_t>(d)] = sums[static_cast<std::size_t>(k) * feature_dim + d] / n;
    return m;
  }

  /// Adds every labelled feature pixel; labels must be at feature resolution.
  template <typename T>
  void add(const Tensor<T>& features, const LabelMap& labels) {
    if (features.height != labels.height || features.width != labels.width)
      throw ShapeError("batch_class_means: labels must be at feature resolution");
    const std::size_t n = features.plane();
    for (std::size_t i = 0; i < n; ++i) {
      const auto k = labels.data[i];
      if (k < 0 || k >= num_classes) continue;  // ignore id
      ++counts[static_cast<std::size_t>(k)];
      double* s = sums.data() + static_cast<std::size_t>(k) * feature_dim;
      for (int d = 0; d < feature_dim; ++d) s[d] += features.data[static_cast<std::size_t>(d) * n + i];
    }
  }
};

template <typename T>
ClassMeans batch_class_means(const Tensor<T>& features, const LabelMap& labels, int num_classes) {
  ClassMeans m(num_classes, features.channels);
  m.add(features, labels);
  return m;
}

/// Centroid of each class as the average, over images containing the class,
/// of that image's masked feature mean.
class CentroidInitializer {
 public:
  CentroidInitializer(int num_classes, int feature_dim)
      : bank_(num_classes, feature_dim), images_(static_cast<std::size_t>(num_classes), 0) {}

  template <typename T>
  void add_image(const Tensor<T>& features, const LabelMap& labels_at_feature_res) {
    const auto m = batch_class_means(features, labels_at_feature_res, bank_.num_classes);
    for (int k = 0; k < bank_.num_classes; ++k) {
      const auto mk = m.mean(k);
      if (!mk) continue;
      auto r = bank_.row(k);
      for (int d = 0; d < bank_.feature_dim; ++d) r[static_cast<std::size_t>(d)] += (*mk)[static_cast<std::size_t>(d)];
      ++images_[static_cast<std::size_t>(k)];
    }
  }

  [[nodiscard]] CentroidBank finish() const {
    CentroidBank b = bank_;
    for (int k = 0; k < b.num_classes; ++k) {
      const auto n = images_[static_cast<std::size_t>(k)];
      b.present[static_cast<std::size_t>(k)] = n > 0;
      for (auto& v : b.row(k)) v = n > 0 ? v / static_cast<double>(n) : 0.0;
    }
    return b;
  }

 private:
  CentroidBank bank_;
  std::vector<std::int64_t> images_;
};

/// Offline initialization from the warm-up student encoder on CrDoMix views.
template <typename T>
CentroidBank init_centroids(const ModelPair<T>& pair, std::span<const LabelledImage> source,
                            const TrainConfig& cfg, const TargetStats& stats) {
  CentroidInitializer init(cfg.num_classes, cfg.feature_dim);
  const auto seed = static_cast<std::uint64_t>(cfg.seed);
  for (std::size_t i = 0; i < source.size(); ++i) {
    const auto& s = source[i];
    const auto view = make_source_view(s.image, s.label, derive_seed(seed, {200, i}), cfg, stats);
    const auto feats = encode<T>(pair.arch, pair.student, to_tensor<T>(view));
    init.add_image(feats, downsample_nearest(s.label, cfg.feature_stride));
  }
  return init.finish();
}

/// Nearest present centroid (L2) per feature pixel; ties go to the smallest id.
template <typename T>
LabelMap vote_labels(const Tensor<T>& features, const CentroidBank& bank) {
  if (!bank.any_present()) throw ValidationError("vote_labels: centroid bank has no present class");
  if (features.channels != bank.feature_dim)
    throw ShapeError("vote_labels: feature dimension does not match the bank");
  LabelMap out(features.height, features.width);
  const std::size_t n = features.plane();
  const int D = bank.feature_dim;
  std::vector<double> f(static_cast<std::size_t>(D));
  for (std::size_t i = 0; i < n; ++i) {
    for (int d = 0; d < D; ++d) f[static_cast<std::size_t>(d)] = features.data[static_cast<std::size_t>(d) * n + i];
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (int k = 0; k < bank.num_classes; ++k) {
      if (!bank.present[static_cast<std::size_t>(k)]) continue;
      const auto r = bank.row(k);
      double dist = 0.0;
      for (int d = 0; d < D; ++d) {
        const double e = f[static_cast<std::size_t>(d)] - r[static_cast<std::size_t>(d)];
        dist += e * e;
      }
      if (dist < best_d) {
        best_d = dist;
        best = k;
      }
    }
    out.data[i] = best;
  }
  return out;
}

/// rho <- m(m rho + (1-m) rho_s) + (1-m) rho_t. A class missing from one
/// batch keeps the single-source form m rho + (1-m) rho_other; missing from
/// both leaves the row unchanged.
inline void ema_update_centroids(CentroidBank& bank, const ClassMeans& source,
                                 const ClassMeans& target, double momentum) {
  const double m = momentum, r = 1.0 - momentum;
  for (int k = 0; k < bank.num_classes; ++k) {
    const auto ms = source.mean(k), mt = target.mean(k);
    if (!ms && !mt) continue;
    auto row = bank.row(k);
    for (int d = 0; d < bank.feature_dim; ++d) {
      const auto dd = static_cast<std::size_t>(d);
      double v = row[dd];
      if (ms && mt)
        v = m * (m * v + r * (*ms)[dd]) + r * (*mt)[dd];
      else if (ms)
        v = m * v + r * (*ms)[dd];
      else
        v = m * v + r * (*mt)[dd];
      row[dd] = v;
    }
    if (!bank.present[static_cast<std::size_t>(k)]) {
      // A class first seen mid-training starts from its batch mean.
      const auto& first = ms ? *ms : *mt;
      for (int d = 0; d < bank.feature_dim; ++d) row[static_cast<std::size_t>(d)] = first[static_cast<std::size_t>(d)];
      bank.present[static_cast<std::size_t>(k)] = true;
    }
  }
}

}  // namespace diga
