#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "diga/augment.hpp"
#include "diga/centroids.hpp"
#include "diga/config.hpp"
#include "diga/core.hpp"
#include "diga/losses.hpp"
#include "diga/metrics.hpp"
#include "diga/model.hpp"
#include "diga/warmup.hpp"

namespace diga {

/// Warm-up label map of every target-train image.
struct PseudoLabelStore {
  std::vector<LabelMap> warm;
  std::vector<ProbMap<float>> probs;  // kept only when requested
  int generation_epoch = 0;

  bool operator==(const PseudoLabelStore& o) const {
    return warm == o.warm && generation_epoch == o.generation_epoch;
  }
};

/// Argmax labels of `params` on every image, no thresholding.
template <typename T>
PseudoLabelStore generate_warm_labels(const Architecture& arch, std::span<const T> params,
                                      std::span<const Image> images, bool keep_probs = false,
                                      int epoch = 0) {
  PseudoLabelStore store;
  store.generation_epoch = epoch;
  for (const auto& im : images) {
    auto probs = forward_any(arch, params, to_tensor<T>(im)).probs;
    store.warm.push_back(argmax_labels(probs));
    if (keep_probs) {
      ProbMap<float> pf(probs.channels, probs.height, probs.width);
      std::copy(probs.data.begin(), probs.data.end(), pf.data.begin());
      store.probs.push_back(std::move(pf));
    }
  }
  return store;
}

/// Keeps the shared label where both maps agree, ignore elsewhere.
inline LabelMap consensus(const LabelMap& feat, const LabelMap& warm, int ignore_id) {
  require_same_shape(feat, warm, "consensus");
  LabelMap out(feat.height, feat.width, ignore_id);
  for (std::size_t i = 0; i < feat.size(); ++i)
    if (feat.data[i] == warm.data[i] && feat.data[i] != ignore_id) out.data[i] = feat.data[i];
  return out;
}

/// Inputs available when forming the pseudo-label of one target image.
struct PseudoInputs {
  std::size_t index = 0;           // position in the target-train split
  const LabelMap& feat;            // centroid vote, upsampled to image size
  const LabelMap& warm;            // stored warm-up label
  const PseudoLabelStore& store;
};

using PseudoLabeler = std::function<LabelMap(const PseudoInputs&)>;

inline PseudoLabeler consensus_labeler(int ignore_id) {
  return [ignore_id](const PseudoInputs& in) { return consensus(in.feat, in.warm, ignore_id); };
}

/// Running evaluation-only statistics of one self-training epoch.
struct StEpochStats {
  PseudoCounts used, feat, warm;
  double unc_accept_sum = 0.0, unc_reject_sum = 0.0;
  std::int64_t unc_accept_n = 0, unc_reject_n = 0;
};

struct TargetItem {
  std::size_t index = 0;  // into the store / target-train split
  const Image* image = nullptr;
  const LabelMap* gt = nullptr;  // evaluation only; may be null
};

template <typename T>
struct TargetTerms {
  double seg = 0.0;  // pseudo-label CE, 0 when every pixel is ignored
  Tensor<T> features;
  ProbMap<T> probs;
};

/// Student CE against the pseudo-labels of one clean target image; adds
/// scale * lambda_seg * d(seg)/d(student) into grad.
template <typename T>
TargetTerms<T> target_terms(const ModelPair<T>& pair, const Tensor<T>& x, const LabelMap& pseudo,
                            const TrainConfig& cfg, double scale, std::span<T> grad) {
  const std::span<const T> student(pair.student);
  ForwardTrace<T> trace;
  auto out = forward(pair.arch, student, x, cfg, &trace);
  const auto ce = ce_loss(out.probs, pseudo, cfg.ignore_id);
  if (!ce.empty) {
    Tensor<T> g(pair.arch.num_classes, x.height, x.width);
    ce_grad(out.probs, pseudo, cfg.ignore_id, scale * cfg.lambda_seg, g);
    backward(pair.arch, student, trace, g, grad);
  }
  return {ce.value, std::move(out.features), std::move(out.probs)};
}

/// One self-training iteration over a source batch and a target batch.
template <typename T>
StepLosses st_step(ModelPair<T>& pair, Optimizer<T>& opt, CentroidBank& bank,
                   const PseudoLabelStore& store, std::span<const LabelledImage> source,
                   std::span<const TargetItem> target, const TrainConfig& cfg,
                   const TargetStats& stats, std::uint64_t seed, const PseudoLabeler& labeler,
                   StEpochStats* epoch_stats = nullptr) {
  const auto& arch = pair.arch;
  std::vector<T> grad(pair.student.size(), T{0});
  StepLosses losses;
  ClassMeans means_s(cfg.num_classes, cfg.feature_dim), means_t(cfg.num_classes, cfg.feature_dim);

  const double ss = 1.0 / static_cast<double>(source.size());
  for (std::size_t i = 0; i < source.size(); ++i) {
    const auto& s = source[i];
    const auto view = make_source_view(s.image, s.label, derive_seed(seed, {i}), cfg, stats);
    const auto terms = source_terms(pair, s.image, s.label, view, cfg, cfg.lambda_distil_st, ss,
                                    std::span<T>(grad));
    losses.seg += terms.seg * ss;
    losses.distil += terms.distil * ss;
    means_s.add(terms.features_view, downsample_nearest(s.label, cfg.feature_stride));
  }

  const double st = 1.0 / static_cast<double>(target.size());
  for (const auto& t : target) {
    const auto x = to_tensor<T>(*t.image);
    const auto teacher_feats = encode<T>(arch, pair.teacher, x);
    const auto feat = upsample_nearest(vote_labels(teacher_feats, bank), cfg.feature_stride);
    const auto& warm = store.warm[t.index];
    const LabelMap pseudo = labeler(PseudoInputs{t.index, feat, warm, store});

    const auto out = target_terms(pair, x, pseudo, cfg, st, std::span<T>(grad));
    losses.target_seg += out.seg * st;
    means_t.add(out.features, downsample_nearest(pseudo, cfg.feature_stride));

    if (epoch_stats) {
      if (t.gt) {
        epoch_stats->used.add(pseudo, *t.gt, cfg.ignore_id);
        epoch_stats->feat.add(feat, *t.gt, cfg.ignore_id);
        epoch_stats->warm.add(warm, *t.gt, cfg.ignore_id);
      }
      const auto unc = uncertainty_map(out.probs);
      for (std::size_t p = 0; p < pseudo.size(); ++p) {
        if (pseudo.data[p] != cfg.ignore_id) {
          epoch_stats->unc_accept_sum += unc.data[p];
          ++epoch_stats->unc_accept_n;
        } else {
          epoch_stats->unc_reject_sum += unc.data[p];
          ++epoch_stats->unc_reject_n;
        }
      }
    }
  }

  losses.total = cfg.lambda_distil_st * losses.distil +
                 cfg.lambda_seg * (losses.seg + losses.target_seg);
  opt.step(pair.student, grad);
  ema_update(pair, cfg.ema_momentum);
  ema_update_centroids(bank, means_s, means_t, cfg.centroid_momentum);
  return losses;
}

/// Regenerates the store from the current student every label_refresh_epochs.
template <typename T>
PseudoLabelStore refresh_labels(const ModelPair<T>& pair, std::span<const Image> target_images,
                                const PseudoLabelStore& store, int epoch, const TrainConfig& cfg) {
  if (epoch <= 0 || epoch % cfg.label_refresh_epochs != 0) return store;
  const auto& params = cfg.refresh_with_teacher ? pair.teacher : pair.student;
  return generate_warm_labels<T>(pair.arch, params, target_images, !store.probs.empty(), epoch);
}

struct StEpochLog {
  int epoch = 0;
  double loss_seg = 0.0;
  double loss_seg_target = 0.0;
  double loss_distil = 0.0;
  std::optional<double> pl_precision, pl_recall, pl_coverage;
  std::optional<double> pl_precision_feat, pl_precision_warm;
  std::optional<double> unc_accept, unc_reject;
  double miou_target_val = 0.0;
  int label_generation = 0;
};

struct StResult {
  ModelPair<float> pair;
  CentroidBank bank;
  PseudoLabelStore store;
  std::vector<StEpochLog> log;
};

/// Everything self-training reads. Target gt is consulted for logging only.
struct StData {
  std::span<const LabelledImage> source;
  std::span<const Image> target;
  std::span<const LabelMap> target_gt;  // may be empty
  const TargetStats* stats = nullptr;
  const EvalSet* val = nullptr;
};

/// Hooks that let an experiment swap the pseudo-labelling rule.
struct StOptions {
  PseudoLabeler labeler;  // defaults to consensus
  bool keep_probs = false;
  std::function<void(const StEpochLog&)> on_epoch;
};

inline StResult train_st(const ModelPair<float>& warm_pair, const CentroidBank& bank,
                         const StData& data, const TrainConfig& cfg, StOptions opts = {}) {
  StResult r{warm_pair, bank, {}, {}};
  if (!opts.labeler) opts.labeler = consensus_labeler(cfg.ignore_id);
  r.store = generate_warm_labels<float>(r.pair.arch, r.pair.student, data.target, opts.keep_probs);
  auto opt = Optimizer<float>::from_config(cfg);
  const auto seed = static_cast<std::uint64_t>(cfg.seed);
  const std::size_t n_t = data.target.size(), n_s = data.source.size();
  const auto bt = static_cast<std::size_t>(cfg.batch_target);
  const auto bs = static_cast<std::size_t>(cfg.batch_source);
  std::size_t source_cursor = 0;
  std::vector<std::size_t> source_order;
  int source_pass = 0;
  const std::size_t total_steps = static_cast<std::size_t>(cfg.st_epochs) * ((n_t + bt - 1) / bt);
  std::size_t global_step = 0;

  for (int epoch = 1; epoch <= cfg.st_epochs; ++epoch) {
    const auto order_t = epoch_order(n_t, seed, epoch, 1);
    StEpochStats stats;
    StEpochLog row;
    row.epoch = epoch;
    std::size_t steps = 0;
    std::vector<LabelledImage> sbatch;
    std::vector<TargetItem> tbatch;
    for (std::size_t start = 0; start < n_t; start += bt) {
      tbatch.clear();
      for (std::size_t j = start; j < std::min(n_t, start + bt); ++j) {
        const auto idx = order_t[j];
        tbatch.push_back({idx, &data.target[idx],
                          data.target_gt.empty() ? nullptr : &data.target_gt[idx]});
      }
      sbatch.clear();
      for (std::size_t j = 0; j < bs; ++j) {
        if (source_cursor == source_order.size()) {
          source_order = epoch_order(n_s, seed, ++source_pass, 2);
          source_cursor = 0;
        }
        sbatch.push_back(data.source[source_order[source_cursor++]]);
      }
      opt.learning_rate = scheduled_lr(cfg, global_step++, total_steps);
      const auto losses =
          st_step(r.pair, opt, r.bank, r.store, std::span<const LabelledImage>(sbatch),
                  std::span<const TargetItem>(tbatch), cfg, *data.stats,
                  derive_seed(seed, {300, static_cast<std::uint64_t>(epoch), start}), opts.labeler,
                  &stats);
      row.loss_seg += losses.seg;
      row.loss_seg_target += losses.target_seg;
      row.loss_distil += losses.distil;
      ++steps;
    }
    if (steps) {
      row.loss_seg /= static_cast<double>(steps);
      row.loss_seg_target /= static_cast<double>(steps);
      row.loss_distil /= static_cast<double>(steps);
    }
    const auto q = quality_of(stats.used);
    row.pl_precision = q.precision;
    row.pl_recall = q.recall;
    row.pl_coverage = q.coverage;
    row.pl_precision_feat = quality_of(stats.feat).precision;
    row.pl_precision_warm = quality_of(stats.warm).precision;
    if (stats.unc_accept_n) row.unc_accept = stats.unc_accept_sum / static_cast<double>(stats.unc_accept_n);
    if (stats.unc_reject_n) row.unc_reject = stats.unc_reject_sum / static_cast<double>(stats.unc_reject_n);
    row.label_generation = r.store.generation_epoch;
    if (data.val && !data.val->images.empty())
      row.miou_target_val = evaluate_miou<float>(r.pair.arch, eval_params(r.pair, cfg),
                                                 data.val->images, data.val->labels, cfg, false)
                                .mean;
    r.store = refresh_labels(r.pair, data.target, r.store, epoch, cfg);
    r.log.push_back(row);
    if (opts.on_epoch) opts.on_epoch(row);
  }
  return r;
}

}  // namespace diga
