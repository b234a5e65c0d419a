#pragma once

#include <cassert>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace diga {

// Error hierarchy. The CLI maps each family to a distinct exit code.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Dense planar tensor, channel-major (c, y, x).
template <typename T>
struct Tensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(int c, int h, int w, T fill = T{0})
      : channels(c), height(h), width(w),
        data(static_cast<std::size_t>(c) * h * w, fill) {}

  [[nodiscard]] std::size_t plane() const {
    return static_cast<std::size_t>(height) * width;
  }
  [[nodiscard]] std::size_t size() const { return data.size(); }

  T& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  const T& at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }

  std::span<T> channel(int c) {
    return {data.data() + static_cast<std::size_t>(c) * plane(), plane()};
  }
  std::span<const T> channel(int c) const {
    return {data.data() + static_cast<std::size_t>(c) * plane(), plane()};
  }

  [[nodiscard]] bool same_shape(const Tensor& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }

  bool operator==(const Tensor&) const = default;
};

/// RGB raster with values in [0,1], planar layout.
using Image = Tensor<float>;

/// Per-pixel class distribution, C planes.
template <typename T>
using ProbMap = Tensor<T>;

/// H x W integer class ids; a reserved ignore id marks unlabelled pixels.
struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<std::int32_t> data;

  LabelMap() = default;
  LabelMap(int h, int w, std::int32_t fill = 0)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  std::int32_t& at(int y, int x) {
    return data[static_cast<std::size_t>(y) * width + x];
  }
  std::int32_t at(int y, int x) const {
    return data[static_cast<std::size_t>(y) * width + x];
  }
  [[nodiscard]] std::size_t size() const { return data.size(); }
  [[nodiscard]] bool same_shape(const LabelMap& o) const {
    return height == o.height && width == o.width;
  }

  bool operator==(const LabelMap&) const = default;
};

/// H x W real-valued map (uncertainty, masks).
using ScalarMap = Tensor<float>;

inline void require_same_shape(const LabelMap& a, const LabelMap& b,
                               const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": label map shapes differ (" +
                     std::to_string(a.height) + "x" + std::to_string(a.width) +
                     " vs " + std::to_string(b.height) + "x" +
                     std::to_string(b.width) + ")");
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b,
                        const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": tensor shapes differ");
  }
}

/// Nearest-neighbour downsample by an integer factor, sampling cell centres.
inline LabelMap downsample_nearest(const LabelMap& labels, int factor) {
  LabelMap out(labels.height / factor, labels.width / factor);
  const int off = factor / 2;
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      out.at(y, x) = labels.at(y * factor + off, x * factor + off);
  return out;
}

/// Nearest-neighbour upsample by an integer factor.
inline LabelMap upsample_nearest(const LabelMap& labels, int factor) {
  LabelMap out(labels.height * factor, labels.width * factor);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      out.at(y, x) = labels.at(y / factor, x / factor);
  return out;
}

/// Per-pixel argmax over channels; ties go to the smallest class id.
template <typename T>
LabelMap argmax_labels(const ProbMap<T>& probs) {
  LabelMap out(probs.height, probs.width);
  const std::size_t n = probs.plane();
  for (std::size_t i = 0; i < n; ++i) {
    int best = 0;
    T best_v = probs.data[i];
    for (int c = 1; c < probs.channels; ++c) {
      const T v = probs.data[c * n + i];
      if (v > best_v) {
        best_v = v;
        best = c;
      }
    }
    out.data[i] = best;
  }
  return out;
}

}  // namespace diga
