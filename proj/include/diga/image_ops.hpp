#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "diga/core.hpp"

namespace diga {

using Mat3 = std::array<std::array<double, 3>, 3>;

/// Rotation by `degrees` about the grey axis (1,1,1) of RGB space.
inline Mat3 hue_rotation(double degrees) {
  const double t = degrees * 3.14159265358979323846 / 180.0;
  const double c = std::cos(t), s = std::sin(t) / std::sqrt(3.0), k = (1.0 - c) / 3.0;
  return {{{c + k, k - s, k + s}, {k + s, c + k, k - s}, {k - s, k + s, c + k}}};
}

inline std::array<double, 3> mat_vec(const Mat3& m, const std::array<double, 3>& v) {
  std::array<double, 3> r{};
  for (int i = 0; i < 3; ++i) r[i] = m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2];
  return r;
}

inline void clamp01(Image& image) {
  for (auto& v : image.data) v = std::clamp(v, 0.0f, 1.0f);
}

inline std::array<double, 3> pixel(const Image& im, std::size_t i) {
  const auto n = im.plane();
  return {im.data[i], im.data[n + i], im.data[2 * n + i]};
}

inline void set_pixel(Image& im, std::size_t i, const std::array<double, 3>& v) {
  const auto n = im.plane();
  for (int c = 0; c < 3; ++c) im.data[c * n + i] = static_cast<float>(v[c]);
}

/// Apply a 3x3 colour matrix to every pixel (no clamping).
inline void transform_colors(Image& image, const Mat3& m) {
  for (std::size_t i = 0; i < image.plane(); ++i) set_pixel(image, i, mat_vec(m, pixel(image, i)));
}

inline std::array<double, 3> channel_means(const Image& image) {
  std::array<double, 3> m{};
  for (int c = 0; c < 3; ++c) {
    double s = 0.0;
    for (float v : image.channel(c)) s += v;
    m[c] = s / static_cast<double>(image.plane());
  }
  return m;
}

/// Separable 3x3 binomial blur [1 2 1]/4 with edge replication.
inline Image binomial_blur(const Image& in) {
  Image tmp(in.channels, in.height, in.width), out(in.channels, in.height, in.width);
  const int h = in.height, w = in.width;
  for (int c = 0; c < in.channels; ++c) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const float l = in.at(c, y, std::max(x - 1, 0));
        const float r = in.at(c, y, std::min(x + 1, w - 1));
        tmp.at(c, y, x) = 0.25f * l + 0.5f * in.at(c, y, x) + 0.25f * r;
      }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const float u = tmp.at(c, std::max(y - 1, 0), x);
        const float d = tmp.at(c, std::min(y + 1, h - 1), x);
        out.at(c, y, x) = 0.25f * u + 0.5f * tmp.at(c, y, x) + 0.25f * d;
      }
  }
  return out;
}

/// One output coordinate of a half-pixel-centred bilinear resize.
struct ResizeTap {
  int i0 = 0;
  int i1 = 0;
  double w0 = 1.0;
  double w1 = 0.0;
};

inline std::vector<ResizeTap> resize_taps(int in_size, int out_size) {
  std::vector<ResizeTap> taps(static_cast<std::size_t>(out_size));
  const double scale = static_cast<double>(in_size) / out_size;
  for (int o = 0; o < out_size; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in_size - 1));
    const int i0 = static_cast<int>(std::floor(src));
    const int i1 = std::min(i0 + 1, in_size - 1);
    const double f = src - i0;
    taps[static_cast<std::size_t>(o)] = {i0, i1, 1.0 - f, f};
  }
  return taps;
}

/// Bilinear resize of every channel to (out_h, out_w).
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& in, int out_h, int out_w) {
  Tensor<T> out(in.channels, out_h, out_w);
  const auto ty = resize_taps(in.height, out_h);
  const auto tx = resize_taps(in.width, out_w);
  for (int c = 0; c < in.channels; ++c)
    for (int y = 0; y < out_h; ++y) {
      const auto& a = ty[static_cast<std::size_t>(y)];
      for (int x = 0; x < out_w; ++x) {
        const auto& b = tx[static_cast<std::size_t>(x)];
        const double v = a.w0 * (b.w0 * in.at(c, a.i0, b.i0) + b.w1 * in.at(c, a.i0, b.i1)) +
                         a.w1 * (b.w0 * in.at(c, a.i1, b.i0) + b.w1 * in.at(c, a.i1, b.i1));
        out.at(c, y, x) = static_cast<T>(v);
      }
    }
  return out;
}

}  // namespace diga
