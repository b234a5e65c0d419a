#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "diga/augment.hpp"
#include "diga/config.hpp"
#include "diga/core.hpp"
#include "diga/domains.hpp"
#include "diga/losses.hpp"
#include "diga/metrics.hpp"
#include "diga/model.hpp"
#include "diga/rng.hpp"

namespace diga {

struct LabelledImage {
  Image image;
  LabelMap label;
};

/// The student-side augmented view of a source image: photometric jitter,
/// optionally mixed with the target-styled translation by a class mask.
inline Image make_source_view(const Image& x, const LabelMap& y, std::uint64_t seed,
                              const TrainConfig& cfg, const TargetStats& stats) {
  Image view = cfg.augment ? photometric_augment(x, derive_seed(seed, Stream::augment),
                                                 AugmentParams::from_config(cfg))
                           : x;
  if (cfg.crdomix) {
    const auto cm = build_class_mask(y, derive_seed(seed, Stream::mask), cfg.ignore_id);
    view = crdomix(view, translate_s2t(x, stats), cm);
  }
  return view;
}

struct StepLosses {
  double seg = 0.0;         // supervised CE on the source view
  double distil = 0.0;      // symmetric distillation (before lambda)
  double target_seg = 0.0;  // pseudo-label CE (self-training only)
  double total = 0.0;
};

/// Per-sample gradient contribution of the source losses, also exposing the
/// student features on the augmented view (centroid updates need them).
template <typename T>
struct SourceTerms {
  double seg = 0.0;
  double distil = 0.0;
  Tensor<T> features_view;
};

/// Computes the source losses for one sample and accumulates
/// scale * d(lambda_seg * seg + lambda_distil * distil)/d(student) into grad.
template <typename T>
SourceTerms<T> source_terms(const ModelPair<T>& pair, const Image& x, const LabelMap& y,
                            const Image& view, const TrainConfig& cfg, double lambda_distil,
                            double scale, std::span<T> grad) {
  const auto& arch = pair.arch;
  const std::span<const T> student(pair.student), teacher(pair.teacher);
  const auto x_clean = to_tensor<T>(x);
  const auto x_view = to_tensor<T>(view);

  SourceTerms<T> out;
  ForwardTrace<T> trace_view;
  auto s_view = forward(arch, student, x_view, cfg, &trace_view);
  out.features_view = s_view.features;
  Tensor<T> g_view(arch.num_classes, x.height, x.width);

  out.seg = ce_loss(s_view.probs, y, cfg.ignore_id).value;
  ce_grad(s_view.probs, y, cfg.ignore_id, scale * cfg.lambda_seg, g_view);

  if (cfg.distil_clean_to_aug) {
    const auto t_clean = forward(arch, teacher, x_clean, cfg).probs;
    out.distil += soft_cross_entropy(t_clean, s_view.probs);
    soft_cross_entropy_grad(t_clean, s_view.probs, scale * lambda_distil, g_view);
  }
  backward(arch, student, trace_view, g_view, grad);

  if (cfg.distil_aug_to_clean) {
    const auto t_view = forward(arch, teacher, x_view, cfg).probs;
    ForwardTrace<T> trace_clean;
    const auto s_clean = forward(arch, student, x_clean, cfg, &trace_clean);
    out.distil += cfg.alpha * soft_cross_entropy(t_view, s_clean.probs);
    Tensor<T> g_clean(arch.num_classes, x.height, x.width);
    soft_cross_entropy_grad(t_view, s_clean.probs, scale * lambda_distil * cfg.alpha, g_clean);
    backward(arch, student, trace_clean, g_clean, grad);
  }
  return out;
}

/// Batch-mean source losses and their student gradient, without updating anything.
template <typename T>
StepLosses warmup_loss_and_grad(const ModelPair<T>& pair, std::span<const LabelledImage> batch,
                                const TrainConfig& cfg, const TargetStats& stats,
                                std::uint64_t seed, std::vector<T>& grad) {
  grad.assign(pair.student.size(), T{0});
  StepLosses losses;
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& s = batch[i];
    const auto view = make_source_view(s.image, s.label, derive_seed(seed, {i}), cfg, stats);
    const auto terms = source_terms(pair, s.image, s.label, view, cfg, cfg.lambda_distil_warmup,
                                    scale, std::span<T>(grad));
    losses.seg += terms.seg * scale;
    losses.distil += terms.distil * scale;
  }
  losses.total = cfg.lambda_seg * losses.seg + cfg.lambda_distil_warmup * losses.distil;
  return losses;
}

/// One warm-up iteration: losses, SGD on the student, EMA on the teacher.
template <typename T>
StepLosses warmup_step(ModelPair<T>& pair, Optimizer<T>& opt, std::span<const LabelledImage> batch,
                       const TrainConfig& cfg, const TargetStats& stats, std::uint64_t seed) {
  std::vector<T> grad;
  const auto losses = warmup_loss_and_grad(pair, batch, cfg, stats, seed, grad);
  opt.step(pair.student, grad);
  ema_update(pair, cfg.ema_momentum);
  return losses;
}

/// Evaluation-only view of the target validation split.
struct EvalSet {
  std::vector<Image> images;
  std::vector<LabelMap> labels;
};

inline EvalSet load_eval_set(const DatasetIndex& index, const std::string& split,
                             const TrainConfig& cfg) {
  return {index.load_images(split), index.load_labels(split, LabelAccess::evaluation, cfg)};
}

/// Parameters used for reporting: the student unless eval_teacher is set.
template <typename T>
const std::vector<T>& eval_params(const ModelPair<T>& pair, const TrainConfig& cfg) {
  return cfg.eval_teacher ? pair.teacher : pair.student;
}

struct WarmupEpochLog {
  int epoch = 0;
  double loss_seg = 0.0;
  double loss_distil = 0.0;
  double miou_target_val = 0.0;
};

struct WarmupResult {
  ModelPair<float> pair;
  std::vector<WarmupEpochLog> log;
};

inline std::vector<LabelledImage> load_source(const DatasetIndex& index, const TrainConfig& cfg) {
  std::vector<LabelledImage> out;
  for (const auto& id : index.ids("source"))
    out.push_back({index.load_image("source", id),
                   index.load_label("source", id, LabelAccess::training, cfg)});
  return out;
}

/// Shuffled epoch order over n items.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch,
                                            std::uint64_t stream = 0) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, Stream::shuffle, static_cast<std::uint64_t>(epoch), stream));
  shuffle(order, rng);
  return order;
}

/// Runs warmup_epochs over the in-memory source set. `on_epoch` sees every log row.
inline WarmupResult train_warmup(std::span<const LabelledImage> source, const TargetStats& stats,
                                 const EvalSet& val, const TrainConfig& cfg,
                                 const std::function<void(const WarmupEpochLog&)>& on_epoch = {}) {
  WarmupResult result{init_pair<float>(cfg, static_cast<std::uint64_t>(cfg.seed)), {}};
  auto& pair = result.pair;
  auto opt = Optimizer<float>::from_config(cfg);
  const auto seed = static_cast<std::uint64_t>(cfg.seed);
  const auto bs = static_cast<std::size_t>(cfg.batch_source);
  const std::size_t total_steps = static_cast<std::size_t>(cfg.warmup_epochs) * ((source.size() + bs - 1) / bs);
  std::size_t global_step = 0;
  for (int epoch = 1; epoch <= cfg.warmup_epochs; ++epoch) {
    const auto order = epoch_order(source.size(), seed, epoch);
    WarmupEpochLog row{epoch, 0.0, 0.0, 0.0};
    std::size_t steps = 0;
    std::vector<LabelledImage> batch;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      batch.clear();
      for (std::size_t j = start; j < std::min(order.size(), start + bs); ++j)
        batch.push_back(source[order[j]]);
      opt.learning_rate = scheduled_lr(cfg, global_step++, total_steps);
      const auto losses = warmup_step(pair, opt, std::span<const LabelledImage>(batch), cfg,
                                      stats, derive_seed(seed, {100, static_cast<std::uint64_t>(epoch), start}));
      row.loss_seg += losses.seg;
      row.loss_distil += losses.distil;
      ++steps;
    }
    if (steps) {
      row.loss_seg /= static_cast<double>(steps);
      row.loss_distil /= static_cast<double>(steps);
    }
    if (!val.images.empty())
      row.miou_target_val = evaluate_miou<float>(pair.arch, eval_params(pair, cfg), val.images,
                                                 val.labels, cfg, false)
                                .mean;
    result.log.push_back(row);
    if (on_epoch) on_epoch(row);
  }
  return result;
}

}  // namespace diga
