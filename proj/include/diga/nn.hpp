#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "diga/core.hpp"
#include "diga/image_ops.hpp"

namespace diga::nn {

/// Square convolution with replicate padding of kernel/2.
struct ConvSpec {
  int in = 0;
  int out = 0;
  int kernel = 3;
  int stride = 1;
  bool relu = true;

  [[nodiscard]] std::size_t weight_count() const {
    return static_cast<std::size_t>(out) * in * kernel * kernel;
  }
  [[nodiscard]] std::size_t param_count() const { return weight_count() + out; }
  [[nodiscard]] int pad() const { return kernel / 2; }
  [[nodiscard]] int out_size(int n) const { return (n + 2 * pad() - kernel) / stride + 1; }
};

template <typename T>
Tensor<T> replicate_pad(const Tensor<T>& in, int p) {
  if (p == 0) return in;
  Tensor<T> out(in.channels, in.height + 2 * p, in.width + 2 * p);
  for (int c = 0; c < in.channels; ++c)
    for (int y = 0; y < out.height; ++y) {
      const int sy = std::clamp(y - p, 0, in.height - 1);
      for (int x = 0; x < out.width; ++x)
        out.at(c, y, x) = in.at(c, sy, std::clamp(x - p, 0, in.width - 1));
    }
  return out;
}

/// Adjoint of replicate_pad: border gradients fold onto the edge pixels.
template <typename T>
Tensor<T> fold_pad(const Tensor<T>& grad_padded, int p, int h, int w) {
  if (p == 0) return grad_padded;
  Tensor<T> out(grad_padded.channels, h, w);
  for (int c = 0; c < grad_padded.channels; ++c)
    for (int y = 0; y < grad_padded.height; ++y) {
      const int sy = std::clamp(y - p, 0, h - 1);
      for (int x = 0; x < grad_padded.width; ++x)
        out.at(c, sy, std::clamp(x - p, 0, w - 1)) += grad_padded.at(c, y, x);
    }
  return out;
}

/// `params` holds weights (out, in, k, k) followed by biases.
template <typename T>
Tensor<T> conv_forward(const ConvSpec& spec, std::span<const T> params, const Tensor<T>& in) {
  const int k = spec.kernel, s = spec.stride;
  const Tensor<T> pad = replicate_pad(in, spec.pad());
  const int ho = spec.out_size(in.height), wo = spec.out_size(in.width);
  Tensor<T> out(spec.out, ho, wo);
  const T* w = params.data();
  const T* bias = params.data() + spec.weight_count();
  const std::size_t pp = pad.plane();
  for (int o = 0; o < spec.out; ++o) {
    T* dst_plane = out.data.data() + static_cast<std::size_t>(o) * out.plane();
    std::fill(dst_plane, dst_plane + out.plane(), bias[o]);
    for (int i = 0; i < spec.in; ++i) {
      const T* src_plane = pad.data.data() + static_cast<std::size_t>(i) * pp;
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const T wv = w[((static_cast<std::size_t>(o) * spec.in + i) * k + ky) * k + kx];
          for (int y = 0; y < ho; ++y) {
            const T* src = src_plane + static_cast<std::size_t>(y * s + ky) * pad.width + kx;
            T* dst = dst_plane + static_cast<std::size_t>(y) * wo;
            if (s == 1) {
              for (int x = 0; x < wo; ++x) dst[x] += wv * src[x];
            } else {
              for (int x = 0; x < wo; ++x) dst[x] += wv * src[x * s];
            }
          }
        }
    }
  }
  if (spec.relu)
    for (auto& v : out.data) v = v > T{0} ? v : T{0};
  return out;
}

/// Backward through one conv. `out` is the layer's (post-activation) output,
/// `grad_out` its gradient. Accumulates into `grad_params`; returns the input
/// gradient when `need_input_grad`.
template <typename T>
Tensor<T> conv_backward(const ConvSpec& spec, std::span<const T> params, const Tensor<T>& in,
                        const Tensor<T>& out, Tensor<T> grad_out, std::span<T> grad_params,
                        bool need_input_grad) {
  if (spec.relu)
    for (std::size_t i = 0; i < grad_out.size(); ++i)
      if (!(out.data[i] > T{0})) grad_out.data[i] = T{0};
  const int k = spec.kernel, s = spec.stride, p = spec.pad();
  const Tensor<T> pad = replicate_pad(in, p);
  Tensor<T> grad_pad;
  if (need_input_grad) grad_pad = Tensor<T>(pad.channels, pad.height, pad.width);
  const int ho = out.height, wo = out.width;
  const T* w = params.data();
  T* gw = grad_params.data();
  T* gb = grad_params.data() + spec.weight_count();
  const std::size_t pp = pad.plane();
  for (int o = 0; o < spec.out; ++o) {
    const T* go_plane = grad_out.data.data() + static_cast<std::size_t>(o) * grad_out.plane();
    T bsum{0};
    for (std::size_t j = 0; j < grad_out.plane(); ++j) bsum += go_plane[j];
    gb[o] += bsum;
    for (int i = 0; i < spec.in; ++i) {
      const T* src_plane = pad.data.data() + static_cast<std::size_t>(i) * pp;
      T* gsrc_plane = need_input_grad ? grad_pad.data.data() + static_cast<std::size_t>(i) * pp
                                      : nullptr;
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const std::size_t widx = ((static_cast<std::size_t>(o) * spec.in + i) * k + ky) * k + kx;
          const T wv = w[widx];
          T acc{0};
          for (int y = 0; y < ho; ++y) {
            const std::size_t row = static_cast<std::size_t>(y * s + ky) * pad.width + kx;
            const T* src = src_plane + row;
            const T* go = go_plane + static_cast<std::size_t>(y) * wo;
            if (s == 1) {
              for (int x = 0; x < wo; ++x) acc += go[x] * src[x];
              if (gsrc_plane) {
                T* gsrc = gsrc_plane + row;
                for (int x = 0; x < wo; ++x) gsrc[x] += wv * go[x];
              }
            } else {
              for (int x = 0; x < wo; ++x) acc += go[x] * src[x * s];
              if (gsrc_plane) {
                T* gsrc = gsrc_plane + row;
                for (int x = 0; x < wo; ++x) gsrc[x * s] += wv * go[x];
              }
            }
          }
          gw[widx] += acc;
        }
    }
  }
  if (!need_input_grad) return {};
  return fold_pad(grad_pad, p, in.height, in.width);
}

/// Adjoint of resize_bilinear.
template <typename T>
Tensor<T> resize_bilinear_backward(const Tensor<T>& grad_out, int in_h, int in_w) {
  Tensor<T> g(grad_out.channels, in_h, in_w);
  const auto ty = resize_taps(in_h, grad_out.height);
  const auto tx = resize_taps(in_w, grad_out.width);
  for (int c = 0; c < grad_out.channels; ++c)
    for (int y = 0; y < grad_out.height; ++y) {
      const auto& a = ty[static_cast<std::size_t>(y)];
      for (int x = 0; x < grad_out.width; ++x) {
        const auto& b = tx[static_cast<std::size_t>(x)];
        const double v = grad_out.at(c, y, x);
        g.at(c, a.i0, b.i0) += static_cast<T>(a.w0 * b.w0 * v);
        g.at(c, a.i0, b.i1) += static_cast<T>(a.w0 * b.w1 * v);
        g.at(c, a.i1, b.i0) += static_cast<T>(a.w1 * b.w0 * v);
        g.at(c, a.i1, b.i1) += static_cast<T>(a.w1 * b.w1 * v);
      }
    }
  return g;
}

/// Numerically stable per-pixel softmax over channels.
template <typename T>
ProbMap<T> softmax(const Tensor<T>& logits) {
  ProbMap<T> p(logits.channels, logits.height, logits.width);
  const std::size_t n = logits.plane();
  const int C = logits.channels;
  for (std::size_t i = 0; i < n; ++i) {
    T m = logits.data[i];
    for (int c = 1; c < C; ++c) m = std::max(m, logits.data[c * n + i]);
    T z{0};
    for (int c = 0; c < C; ++c) {
      const T e = std::exp(logits.data[c * n + i] - m);
      p.data[c * n + i] = e;
      z += e;
    }
    for (int c = 0; c < C; ++c) p.data[c * n + i] /= z;
  }
  return p;
}

}  // namespace diga::nn
