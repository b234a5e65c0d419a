#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "diga/config.hpp"
#include "diga/core.hpp"
#include "diga/image_ops.hpp"
#include "diga/nn.hpp"
#include "diga/rng.hpp"

namespace diga {

/// Encoder: four 3x3 convs of width D, the first log2(stride) with stride 2.
/// Classifier: 3x3 conv D->D, 1x1 conv D->C, bilinear upsample to input size.
struct Architecture {
  int num_classes = 0;
  int feature_dim = 0;
  int feature_stride = 1;
  std::vector<nn::ConvSpec> layers;  // encoder layers first
  static constexpr int kEncoderLayers = 4;

  static Architecture make(int num_classes, int feature_dim, int feature_stride) {
    Architecture a{num_classes, feature_dim, feature_stride, {}};
    int downsample = 0;
    while ((1 << downsample) < feature_stride) ++downsample;
    for (int i = 0; i < kEncoderLayers; ++i)
      a.layers.push_back({i == 0 ? 3 : feature_dim, feature_dim, 3, i < downsample ? 2 : 1, true});
    a.layers.push_back({feature_dim, feature_dim, 3, 1, true});
    a.layers.push_back({feature_dim, num_classes, 1, 1, false});
    return a;
  }

  static Architecture make(const TrainConfig& cfg) {
    return make(cfg.num_classes, cfg.feature_dim, cfg.feature_stride);
  }

  [[nodiscard]] std::size_t offset(std::size_t layer) const {
    std::size_t off = 0;
    for (std::size_t i = 0; i < layer; ++i) off += layers[i].param_count();
    return off;
  }
  [[nodiscard]] std::size_t param_count() const { return offset(layers.size()); }

  bool operator==(const Architecture& o) const {
    return num_classes == o.num_classes && feature_dim == o.feature_dim &&
           feature_stride == o.feature_stride;
  }
};

template <typename T>
struct ForwardOut {
  Tensor<T> features;  // D x H/s x W/s
  Tensor<T> logits;    // C x H x W
  ProbMap<T> probs;    // softmax(logits)
};

/// Activations kept for the backward pass.
template <typename T>
struct ForwardTrace {
  std::vector<Tensor<T>> acts;  // acts[0] is the input, acts[i+1] the output of layer i
};

template <typename T>
Tensor<T> to_tensor(const Image& image) {
  if constexpr (std::is_same_v<T, float>) {
    return image;
  } else {
    Tensor<T> t(image.channels, image.height, image.width);
    std::copy(image.data.begin(), image.data.end(), t.data.begin());
    return t;
  }
}

template <typename T>
Tensor<T> encode(const Architecture& arch, std::span<const T> params, const Tensor<T>& x,
                 ForwardTrace<T>* trace = nullptr) {
  if (x.channels != 3) throw ShapeError("encode: expected a 3-channel image");
  if (x.height % arch.feature_stride || x.width % arch.feature_stride)
    throw ShapeError("encode: image size must be a multiple of the feature stride");
  Tensor<T> a = x;
  if (trace) trace->acts = {x};
  for (int i = 0; i < Architecture::kEncoderLayers; ++i) {
    const auto& spec = arch.layers[static_cast<std::size_t>(i)];
    a = nn::conv_forward<T>(spec, params.subspan(arch.offset(static_cast<std::size_t>(i)), spec.param_count()), a);
    if (trace) trace->acts.push_back(a);
  }
  return a;
}

/// Full forward pass at any stride-compatible input size.
template <typename T>
ForwardOut<T> forward_any(const Architecture& arch, std::span<const T> params,
                          const Tensor<T>& x, ForwardTrace<T>* trace = nullptr) {
  ForwardOut<T> out;
  out.features = encode(arch, params, x, trace);
  Tensor<T> a = out.features;
  for (std::size_t i = Architecture::kEncoderLayers; i < arch.layers.size(); ++i) {
    a = nn::conv_forward<T>(arch.layers[i], params.subspan(arch.offset(i), arch.layers[i].param_count()), a);
    if (trace) trace->acts.push_back(a);
  }
  out.logits = resize_bilinear(a, x.height, x.width);
  out.probs = nn::softmax(out.logits);
  return out;
}

/// Forward pass at the configured training size; other sizes are rejected.
template <typename T>
ForwardOut<T> forward(const Architecture& arch, std::span<const T> params, const Tensor<T>& x,
                      const TrainConfig& cfg, ForwardTrace<T>* trace = nullptr) {
  if (x.height != cfg.image_height || x.width != cfg.image_width)
    throw ShapeError("forward: input is " + std::to_string(x.height) + "x" +
                     std::to_string(x.width) + ", expected " +
                     std::to_string(cfg.image_height) + "x" + std::to_string(cfg.image_width));
  return forward_any(arch, params, x, trace);
}

/// Accumulates d(loss)/d(params) given d(loss)/d(logits).
template <typename T>
void backward(const Architecture& arch, std::span<const T> params, const ForwardTrace<T>& trace,
              const Tensor<T>& grad_logits, std::span<T> grad) {
  const auto& low = trace.acts.back();
  Tensor<T> g = nn::resize_bilinear_backward(grad_logits, low.height, low.width);
  for (std::size_t li = arch.layers.size(); li-- > 0;) {
    const auto& spec = arch.layers[li];
    const auto off = arch.offset(li);
    g = nn::conv_backward<T>(spec, params.subspan(off, spec.param_count()), trace.acts[li],
                             trace.acts[li + 1], std::move(g), grad.subspan(off, spec.param_count()),
                             li > 0);
  }
}

/// Student and teacher parameters of identical layout. The teacher only ever
/// changes through ema_update; gradients are computed for the student alone.
template <typename T>
struct ModelPair {
  Architecture arch;
  std::vector<T> student;
  std::vector<T> teacher;

  static constexpr bool teacher_requires_grad = false;

  bool operator==(const ModelPair& o) const {
    return arch == o.arch && student == o.student && teacher == o.teacher;
  }
};

/// He-normal weights, zero biases; teacher is an exact copy of the student.
template <typename T>
ModelPair<T> init_pair(const Architecture& arch, std::uint64_t seed) {
  ModelPair<T> pair{arch, std::vector<T>(arch.param_count(), T{0}), {}};
  Rng rng(derive_seed(seed, Stream::init));
  for (std::size_t li = 0; li < arch.layers.size(); ++li) {
    const auto& spec = arch.layers[li];
    const double fan_in = static_cast<double>(spec.in) * spec.kernel * spec.kernel;
    const double sd = std::sqrt((spec.relu ? 2.0 : 1.0) / fan_in);
    const auto off = arch.offset(li);
    for (std::size_t j = 0; j < spec.weight_count(); ++j)
      pair.student[off + j] = static_cast<T>(sd * normal(rng));
  }
  pair.teacher = pair.student;
  return pair;
}

template <typename T>
ModelPair<T> init_pair(const TrainConfig& cfg, std::uint64_t seed) {
  return init_pair<T>(Architecture::make(cfg), seed);
}

/// teacher <- momentum * teacher + (1 - momentum) * student.
template <typename T>
void ema_update(ModelPair<T>& pair, double momentum) {
  const T m = static_cast<T>(momentum), r = static_cast<T>(1.0 - momentum);
  for (std::size_t i = 0; i < pair.teacher.size(); ++i)
    pair.teacher[i] = m * pair.teacher[i] + r * pair.student[i];
}

/// Learning rate of step `step` out of `total` in one training stage.
inline double scheduled_lr(const TrainConfig& cfg, std::size_t step, std::size_t total) {
  if (cfg.lr_poly_power <= 0.0 || total == 0) return cfg.learning_rate;
  const double frac = 1.0 - static_cast<double>(step) / static_cast<double>(total);
  return cfg.learning_rate * std::pow(frac, cfg.lr_poly_power);
}

/// SGD with optional momentum and L2 weight decay, or AdamW (decoupled decay,
/// beta1 = 0.9, beta2 = 0.999).
template <typename T>
struct Optimizer {
  double learning_rate = 0.0;
  double momentum = 0.0;
  double weight_decay = 0.0;
  std::vector<T> velocity;
  bool adamw = false;
  std::vector<T> second_moment;
  std::int64_t steps = 0;

  static Optimizer from_config(const TrainConfig& cfg) {
    return {cfg.learning_rate, cfg.sgd_momentum, cfg.weight_decay, {}, cfg.adamw, {}, 0};
  }

  void step(std::vector<T>& params, std::span<const T> grad) {
    if (learning_rate == 0.0) return;
    const T lr = static_cast<T>(learning_rate), wd = static_cast<T>(weight_decay);
    if (adamw) {
      adam_step(params, grad, lr, wd);
      return;
    }
    if (momentum == 0.0) {
      for (std::size_t i = 0; i < params.size(); ++i)
        params[i] -= lr * (grad[i] + wd * params[i]);
      return;
    }
    if (velocity.size() != params.size()) velocity.assign(params.size(), T{0});
    const T mu = static_cast<T>(momentum);
    for (std::size_t i = 0; i < params.size(); ++i) {
      velocity[i] = mu * velocity[i] + grad[i] + wd * params[i];
      params[i] -= lr * velocity[i];
    }
  }

 private:
  void adam_step(std::vector<T>& params, std::span<const T> grad, T lr, T wd) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    if (velocity.size() != params.size()) velocity.assign(params.size(), T{0});
    if (second_moment.size() != params.size()) second_moment.assign(params.size(), T{0});
    ++steps;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps));
    for (std::size_t i = 0; i < params.size(); ++i) {
      velocity[i] = static_cast<T>(b1 * velocity[i] + (1.0 - b1) * grad[i]);
      second_moment[i] = static_cast<T>(b2 * second_moment[i] + (1.0 - b2) * grad[i] * grad[i]);
      const double update = (velocity[i] / c1) / (std::sqrt(second_moment[i] / c2) + eps);
      params[i] -= lr * (static_cast<T>(update) + wd * params[i]);
    }
  }
};

}  // namespace diga
