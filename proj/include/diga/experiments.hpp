#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "diga/augment.hpp"
#include "diga/centroids.hpp"
#include "diga/checkpoint.hpp"
#include "diga/config.hpp"
#include "diga/domains.hpp"
#include "diga/metrics.hpp"
#include "diga/selftrain.hpp"
#include "diga/warmup.hpp"

namespace diga {

using Json = nlohmann::ordered_json;

/// Everything a training run reads, loaded once. Target labels are read with
/// evaluation access and only ever reach logging and scoring code.
struct Benchmark {
  std::vector<LabelledImage> source;
  std::vector<Image> target;
  std::vector<LabelMap> target_gt;
  EvalSet val;
  EvalSet val2;
  TargetStats stats;

  [[nodiscard]] StData st_data() const { return {source, target, target_gt, &stats, &val}; }
};

inline Benchmark load_benchmark(const DatasetIndex& index, const TrainConfig& cfg) {
  Benchmark b;
  b.source = load_source(index, cfg);
  b.target = index.load_images("target_train");
  b.target_gt = index.load_labels("target_train", LabelAccess::evaluation, cfg);
  if (index.splits.count("target_val")) b.val = load_eval_set(index, "target_val", cfg);
  if (index.splits.count("target2_val")) b.val2 = load_eval_set(index, "target2_val", cfg);
  b.stats = estimate_target_stats(b.target);
  return b;
}

/// Same content as generate_benchmark + write_dataset + load_benchmark, in memory.
inline Benchmark make_benchmark(std::uint64_t master_seed, const TrainConfig& cfg) {
  Benchmark b;
  for (auto& s : generate_benchmark(master_seed, cfg)) {
    // Match the 8-bit round trip of the on-disk path.
    for (auto& v : s.sample.image.data) v = static_cast<float>(png::quantize(v)) / 255.0f;
    if (s.split == "source") {
      b.source.push_back({std::move(s.sample.image), std::move(*s.sample.label)});
    } else if (s.split == "target_train") {
      b.target.push_back(std::move(s.sample.image));
      b.target_gt.push_back(std::move(*s.sample.label));
    } else if (s.split == "target_val") {
      b.val.images.push_back(std::move(s.sample.image));
      b.val.labels.push_back(std::move(*s.sample.label));
    } else {
      b.val2.images.push_back(std::move(s.sample.image));
      b.val2.labels.push_back(std::move(*s.sample.label));
    }
  }
  b.stats = estimate_target_stats(b.target);
  return b;
}

// ---------------------------------------------------------------------------
// Log rows
// ---------------------------------------------------------------------------

inline Json opt_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

inline Json to_json(const WarmupEpochLog& r) {
  return Json{{"stage", "warmup"},
              {"epoch", r.epoch},
              {"loss_seg", r.loss_seg},
              {"loss_distil", r.loss_distil},
              {"miou_target_val", r.miou_target_val}};
}

inline Json to_json(const StEpochLog& r) {
  return Json{{"stage", "st"},
              {"epoch", r.epoch},
              {"loss_seg", r.loss_seg},
              {"loss_seg_target", r.loss_seg_target},
              {"loss_distil", r.loss_distil},
              {"pl_precision", opt_json(r.pl_precision)},
              {"pl_recall", opt_json(r.pl_recall)},
              {"pl_coverage", opt_json(r.pl_coverage)},
              {"pl_precision_feat", opt_json(r.pl_precision_feat)},
              {"pl_precision_warm", opt_json(r.pl_precision_warm)},
              {"unc_accept", opt_json(r.unc_accept)},
              {"unc_reject", opt_json(r.unc_reject)},
              {"label_generation", r.label_generation},
              {"miou_target_val", r.miou_target_val}};
}

/// Appends one JSON object per line.
class MetricsLog {
 public:
  MetricsLog() = default;
  explicit MetricsLog(const std::filesystem::path& path) : out_(std::make_shared<std::ofstream>(path)) {
    if (!*out_) throw IoError("cannot open metrics log '" + path.string() + "'");
  }
  void write(Json row, const std::string& run = {}) {
    if (!out_) return;
    if (!run.empty()) {
      Json tagged{{"run", run}};
      for (auto& [k, v] : row.items()) tagged[k] = v;
      row = std::move(tagged);
    }
    *out_ << row.dump() << "\n";
    out_->flush();
  }

 private:
  std::shared_ptr<std::ofstream> out_;
};

// ---------------------------------------------------------------------------
// Run directories
// ---------------------------------------------------------------------------

/// runs/<name>/{config.resolved, checkpoints/, metrics.jsonl, report.json}
struct RunDir {
  std::filesystem::path root;

  static RunDir create(const std::filesystem::path& root, const TrainConfig& cfg) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(root / "checkpoints", ec);
    if (ec) throw IoError("cannot create run directory '" + root.string() + "': " + ec.message());
    std::ofstream out(root / "config.resolved");
    if (!out) throw IoError("cannot write '" + (root / "config.resolved").string() + "'");
    out << serialize_config(cfg);
    return {root};
  }

  [[nodiscard]] std::filesystem::path checkpoint(const std::string& name) const {
    return root / "checkpoints" / (name + ".ckpt");
  }
  [[nodiscard]] std::filesystem::path metrics() const { return root / "metrics.jsonl"; }

  void write_report(const Json& report) const {
    std::ofstream out(root / "report.json");
    if (!out) throw IoError("cannot write report in '" + root.string() + "'");
    out << report.dump(2) << "\n";
  }
};

// ---------------------------------------------------------------------------
// Pseudo-labelling strategies
// ---------------------------------------------------------------------------

enum class Strategy { feat_only, warm_only, threshold, consensus };

inline const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::feat_only: return "feat_only";
    case Strategy::warm_only: return "warm_only";
    case Strategy::threshold: return "threshold";
    case Strategy::consensus: return "consensus";
  }
  return "?";
}

/// Per-class median of the max probability over pixels predicted as that
/// class. Classes never predicted get threshold 1.
inline std::vector<double> median_class_thresholds(std::span<const ProbMap<float>> probs,
                                                   int num_classes) {
  std::vector<std::vector<float>> conf(static_cast<std::size_t>(num_classes));
  for (const auto& p : probs) {
    const auto labels = argmax_labels(p);
    const std::size_t n = p.plane();
    for (std::size_t i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(labels.data[i]);
      conf[k].push_back(p.data[k * n + i]);
    }
  }
  std::vector<double> thr(static_cast<std::size_t>(num_classes), 1.0);
  for (std::size_t k = 0; k < conf.size(); ++k) {
    auto& v = conf[k];
    if (v.empty()) continue;
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    thr[k] = *mid;
  }
  return thr;
}

/// Class-wise threshold baseline; thresholds are recomputed whenever the
/// store is regenerated, or fixed when given explicitly.
inline PseudoLabeler threshold_labeler(int num_classes, int ignore_id,
                                       std::optional<std::vector<double>> fixed = std::nullopt) {
  struct State {
    int generation = -1;
    std::vector<double> thr;
  };
  auto state = std::make_shared<State>();
  return [=](const PseudoInputs& in) {
    if (in.store.probs.empty())
      throw ValidationError("threshold strategy needs stored probabilities");
    if (fixed) {
      state->thr = *fixed;
    } else if (state->generation != in.store.generation_epoch || state->thr.empty()) {
      state->thr = median_class_thresholds(in.store.probs, num_classes);
      state->generation = in.store.generation_epoch;
    }
    return threshold_labels(in.store.probs[in.index], state->thr, ignore_id);
  };
}

inline PseudoLabeler make_labeler(Strategy s, const TrainConfig& cfg,
                                  std::optional<std::vector<double>> thresholds = std::nullopt) {
  switch (s) {
    case Strategy::feat_only: return [](const PseudoInputs& in) { return in.feat; };
    case Strategy::warm_only: return [](const PseudoInputs& in) { return in.warm; };
    case Strategy::threshold: return threshold_labeler(cfg.num_classes, cfg.ignore_id, thresholds);
    case Strategy::consensus: return consensus_labeler(cfg.ignore_id);
  }
  return consensus_labeler(cfg.ignore_id);
}

// ---------------------------------------------------------------------------
// Experiment recipes
// ---------------------------------------------------------------------------

struct Scores {
  double miou = 0.0;      // single scale
  double miou_mst = 0.0;  // multi-scale
};

inline Scores score(const ModelPair<float>& pair, const EvalSet& set, const TrainConfig& cfg) {
  if (set.images.empty()) return {};
  const auto& p = eval_params(pair, cfg);
  return {evaluate_miou<float>(pair.arch, p, set.images, set.labels, cfg, false).mean,
          evaluate_miou<float>(pair.arch, p, set.images, set.labels, cfg, true).mean};
}

inline Json to_json(const Scores& s) { return Json{{"miou", s.miou}, {"miou_mst", s.miou_mst}}; }

/// Warm-up component switches of one ablation row.
struct WarmupVariant {
  std::string name;
  bool augment = true;
  bool clean_to_aug = true;
  bool aug_to_clean = true;
  bool crdomix = true;

  [[nodiscard]] TrainConfig apply(TrainConfig cfg) const {
    cfg.augment = augment;
    cfg.distil_clean_to_aug = clean_to_aug;
    cfg.distil_aug_to_clean = aug_to_clean;
    cfg.crdomix = crdomix;
    return cfg;
  }
};

inline WarmupVariant source_only_variant() { return {"source_only", false, false, false, false}; }

inline std::vector<WarmupVariant> ladder_variants() {
  return {source_only_variant(),
          {"+distil_clean_to_aug", true, true, false, false},
          {"+distil_aug_to_clean", true, true, true, false},
          {"+crdomix", true, true, true, true}};
}

struct LadderRow {
  std::string name;
  Scores target;
  Scores target2;
};

struct LadderResult {
  std::vector<LadderRow> rows;  // four warm-up rows then self-training
  std::vector<ModelPair<float>> warmups;
  StResult st;
};

inline LadderResult run_ladder(const Benchmark& bench, const TrainConfig& cfg, MetricsLog log = {},
                               const RunDir* run = nullptr) {
  LadderResult out;
  for (const auto& v : ladder_variants()) {
    const auto vcfg = v.apply(cfg);
    auto w = train_warmup(bench.source, bench.stats, bench.val, vcfg,
                          [&](const WarmupEpochLog& r) { log.write(to_json(r), v.name); });
    out.rows.push_back({v.name, score(w.pair, bench.val, vcfg), score(w.pair, bench.val2, vcfg)});
    if (run) save_checkpoint(run->checkpoint(v.name), {w.pair, std::nullopt});
    out.warmups.push_back(std::move(w.pair));
  }
  const auto full = ladder_variants().back().apply(cfg);
  const auto& warm = out.warmups.back();
  const auto bank = init_centroids(warm, std::span<const LabelledImage>(bench.source), full, bench.stats);
  StOptions opts;
  opts.on_epoch = [&](const StEpochLog& r) { log.write(to_json(r), "+self_training"); };
  out.st = train_st(warm, bank, bench.st_data(), full, opts);
  out.rows.push_back({"+self_training", score(out.st.pair, bench.val, full),
                      score(out.st.pair, bench.val2, full)});
  if (run) save_checkpoint(run->checkpoint("+self_training"), {out.st.pair, out.st.bank});
  return out;
}

struct StrategyRun {
  Strategy strategy;
  Scores target;
  std::vector<StEpochLog> log;
};

/// Self-training with only the pseudo-labelling rule swapped; seeds and
/// budgets are identical across strategies.
inline std::vector<StrategyRun> compare_strategies(const ModelPair<float>& warm, const CentroidBank& bank,
                                                   const Benchmark& bench, const TrainConfig& cfg,
                                                   MetricsLog log = {},
                                                   std::optional<std::vector<double>> thresholds = std::nullopt) {
  std::vector<StrategyRun> out;
  for (auto s : {Strategy::feat_only, Strategy::warm_only, Strategy::threshold, Strategy::consensus}) {
    StOptions opts;
    opts.labeler = make_labeler(s, cfg, thresholds);
    opts.keep_probs = s == Strategy::threshold;
    opts.on_epoch = [&](const StEpochLog& r) { log.write(to_json(r), strategy_name(s)); };
    auto r = train_st(warm, bank, bench.st_data(), cfg, opts);
    out.push_back({s, score(r.pair, bench.val, cfg), r.log});
  }
  return out;
}

struct GeneralizeResult {
  Scores supervised_target, supervised_target2;
  Scores distil_target, distil_target2;
};

/// Plain supervised training vs distillation warm-up with the translator
/// disabled, both scored on the two unseen domains.
inline GeneralizeResult run_generalize(const Benchmark& bench, const TrainConfig& cfg, MetricsLog log = {}) {
  GeneralizeResult g;
  const auto so = source_only_variant().apply(cfg);
  auto a = train_warmup(bench.source, bench.stats, bench.val, so,
                        [&](const WarmupEpochLog& r) { log.write(to_json(r), "supervised"); });
  g.supervised_target = score(a.pair, bench.val, so);
  g.supervised_target2 = score(a.pair, bench.val2, so);
  const WarmupVariant dv{"distil", true, true, true, false};
  const auto dc = dv.apply(cfg);
  auto b = train_warmup(bench.source, bench.stats, bench.val, dc,
                        [&](const WarmupEpochLog& r) { log.write(to_json(r), "distil"); });
  g.distil_target = score(b.pair, bench.val, dc);
  g.distil_target2 = score(b.pair, bench.val2, dc);
  return g;
}

}  // namespace diga
