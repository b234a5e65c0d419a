#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <set>
#include <span>
#include <vector>

#include "diga/config.hpp"
#include "diga/core.hpp"
#include "diga/domains.hpp"
#include "diga/image_ops.hpp"
#include "diga/rng.hpp"

namespace diga {

/// Amplitudes of the photometric augmentation menu.
struct AugmentParams {
  double brightness = 0.0;  // additive offset, U(-b, b)
  double contrast = 0.0;    // scale about the image mean, U(1-c, 1+c)
  double saturation = 0.0;  // blend with grey, U(1-s, 1+s)
  double hue = 0.0;         // rotation about the grey axis, U(-h, h) degrees
  double grayscale_prob = 0.0;
  double blur_prob = 0.0;

  static AugmentParams from_config(const TrainConfig& cfg) {
    return {cfg.jitter_brightness, cfg.jitter_contrast, cfg.jitter_saturation,
            cfg.jitter_hue,        cfg.grayscale_prob,  cfg.blur_prob};
  }
};

/// Colour jitter, grayscale and blur. Pixels never move; output is clamped to [0,1].
inline Image photometric_augment(const Image& x, std::uint64_t seed, const AugmentParams& p) {
  Rng rng(derive_seed(seed, Stream::augment));
  Image out = x;
  const std::size_t n = out.plane();
  // Draw every random number up front so the stream does not depend on which
  // branches fire.
  const double brightness = uniform(rng, -p.brightness, p.brightness);
  const double contrast = uniform(rng, 1.0 - p.contrast, 1.0 + p.contrast);
  const double saturation = uniform(rng, 1.0 - p.saturation, 1.0 + p.saturation);
  const double hue = uniform(rng, -p.hue, p.hue);
  const bool gray = bernoulli(rng, p.grayscale_prob);
  const bool blur = bernoulli(rng, p.blur_prob);

  if (p.hue > 0.0) transform_colors(out, hue_rotation(hue));
  if (p.saturation > 0.0) {
    for (std::size_t i = 0; i < n; ++i) {
      auto rgb = pixel(out, i);
      const double g = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2];
      for (auto& v : rgb) v = g + saturation * (v - g);
      set_pixel(out, i, rgb);
    }
  }
  if (p.contrast > 0.0) {
    const auto m = channel_means(out);
    const double mean = (m[0] + m[1] + m[2]) / 3.0;
    for (auto& v : out.data) v = static_cast<float>(mean + contrast * (v - mean));
  }
  if (p.brightness > 0.0)
    for (auto& v : out.data) v = static_cast<float>(v + brightness);
  if (gray) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto rgb = pixel(out, i);
      const double g = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2];
      set_pixel(out, i, {g, g, g});
    }
  }
  clamp01(out);
  if (blur) out = binomial_blur(out);
  return out;
}

/// Per-channel population statistics of a set of images.
struct TargetStats {
  std::array<double, 3> mean{};
  std::array<double, 3> stddev{};
};

inline TargetStats estimate_target_stats(std::span<const Image> images) {
  if (images.empty()) throw ValidationError("estimate_target_stats: empty image set");
  std::array<double, 3> sum{}, sq{};
  double count = 0.0;
  for (const auto& im : images) {
    for (int c = 0; c < 3; ++c)
      for (float v : im.channel(c)) {
        sum[static_cast<std::size_t>(c)] += v;
        sq[static_cast<std::size_t>(c)] += static_cast<double>(v) * v;
      }
    count += static_cast<double>(im.plane());
  }
  TargetStats s;
  for (std::size_t c = 0; c < 3; ++c) {
    s.mean[c] = sum[c] / count;
    s.stddev[c] = std::sqrt(std::max(0.0, sq[c] / count - s.mean[c] * s.mean[c]));
    if (!(s.stddev[c] > 1e-12))
      throw ValidationError("estimate_target_stats: channel " + std::to_string(c) +
                            " has zero standard deviation");
  }
  return s;
}

/// Reads the unlabelled target-train images only.
inline TargetStats estimate_target_stats(const DatasetIndex& index) {
  const auto images = index.load_images("target_train");
  return estimate_target_stats(images);
}

/// Source-to-target translator stand-in: each channel of the image is
/// re-normalized from its own mean/std to the target mean/std, then clamped.
inline Image translate_s2t(const Image& x, const TargetStats& stats) {
  Image out = x;
  for (int c = 0; c < 3; ++c) {
    auto ch = out.channel(c);
    double s = 0.0, sq = 0.0;
    for (float v : ch) {
      s += v;
      sq += static_cast<double>(v) * v;
    }
    const double n = static_cast<double>(ch.size());
    const double mean = s / n;
    const double sd = std::sqrt(std::max(0.0, sq / n - mean * mean));
    const auto cc = static_cast<std::size_t>(c);
    if (sd < 1e-8) {
      std::fill(ch.begin(), ch.end(), static_cast<float>(stats.mean[cc]));
    } else {
      const double gain = stats.stddev[cc] / sd;
      for (auto& v : ch) v = static_cast<float>((v - mean) * gain + stats.mean[cc]);
    }
  }
  clamp01(out);
  return out;
}

/// Binary mask over the pixels of a randomly chosen half of the classes present.
struct ClassMask {
  LabelMap mask;  // 0/1
  std::vector<int> chosen_classes;
};

inline ClassMask build_class_mask(const LabelMap& labels, std::uint64_t seed, int ignore_id) {
  std::set<int> present;
  for (auto v : labels.data)
    if (v != ignore_id) present.insert(v);
  if (present.empty()) throw ValidationError("build_class_mask: label map has only ignore pixels");
  std::vector<int> classes(present.begin(), present.end());
  Rng rng(derive_seed(seed, Stream::mask));
  shuffle(classes, rng);
  const std::size_t keep = std::max<std::size_t>(1, classes.size() / 2);
  classes.resize(keep);
  std::sort(classes.begin(), classes.end());

  ClassMask cm{LabelMap(labels.height, labels.width, 0), classes};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto v = labels.data[i];
    if (v != ignore_id && std::binary_search(classes.begin(), classes.end(), v))
      cm.mask.data[i] = 1;
  }
  return cm;
}

/// Per-pixel selection: augmented source where the mask is set, translated elsewhere.
inline Image crdomix(const Image& augmented, const Image& translated, const ClassMask& cm) {
  if (!augmented.same_shape(translated) || cm.mask.height != augmented.height ||
      cm.mask.width != augmented.width)
    throw ShapeError("crdomix: inputs must share height and width");
  Image out = translated;
  const std::size_t n = out.plane();
  for (std::size_t i = 0; i < n; ++i)
    if (cm.mask.data[i])
      for (int c = 0; c < out.channels; ++c) out.data[c * n + i] = augmented.data[c * n + i];
  return out;
}

}  // namespace diga
