#pragma once

#include <chrono>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "diga/experiments.hpp"

namespace diga::cli {

enum ExitCode : int { ok = 0, usage = 2, validation = 3, io = 4 };

/// Flags shared by every subcommand that trains or evaluates.
struct CommonArgs {
  std::string config_path;
  std::map<std::string, std::string> overrides;
  std::string data;
  std::string run;
};

inline void add_config_flags(CLI::App& sub, CommonArgs& args) {
  sub.add_option("--config", args.config_path, "config file (key = value lines)");
  for (const auto& key : config_keys()) {
    sub.add_option_function<std::string>(
           "--" + key, [&args, key](const std::string& v) { args.overrides[key] = v; },
           "override config field '" + key + "'")
        ->type_name("VALUE");
  }
}

inline void add_data_flag(CLI::App& sub, CommonArgs& args) {
  sub.add_option("--data", args.data, "dataset root written by gen-data")->required();
}

inline void add_run_flag(CLI::App& sub, CommonArgs& args, const std::string& name) {
  args.run = "runs/" + name;
  sub.add_option("--run", args.run, "run directory")->capture_default_str();
}

inline TrainConfig resolve(const CommonArgs& args) {
  Overrides ov;
  for (const auto& [k, v] : args.overrides) ov.emplace_back(k, v);
  return load_config(args.config_path, ov);
}

inline std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << v;
  return s.str();
}

inline std::string pct(const std::optional<double>& v) { return v ? fmt(100.0 * *v, 2) : "n/a"; }

/// Aligned text table: first row is the header.
inline void print_table(std::ostream& out, const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& r : rows)
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (width.size() <= i) width.push_back(0);
      width[i] = std::max(width[i], r[i].size());
    }
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i)
      out << (i ? "  " : "") << std::left << std::setw(static_cast<int>(width[i])) << r[i];
    out << "\n";
  }
}

inline Json miou_json(const MiouResult& m) {
  Json iou = Json::array();
  for (std::size_t k = 0; k < m.iou.size(); ++k)
    iou.push_back(m.present[k] ? Json(m.iou[k]) : Json(nullptr));
  return Json{{"miou", m.mean}, {"per_class_iou", iou}};
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

/// The config seed doubles as the benchmark's master seed.
inline int cmd_gen_data(const CommonArgs& args, const std::string& out_dir, int previews,
                        std::ostream& out) {
  const auto cfg = resolve(args);
  const auto seed = static_cast<std::uint64_t>(cfg.seed);
  const auto samples = generate_benchmark(seed, cfg);
  const auto index = write_dataset(samples, out_dir);
  if (previews > 0) {
    // CrDoMix views of the first source images, for visual inspection.
    std::vector<Image> target;
    for (const auto& s : samples)
      if (s.split == "target_train") target.push_back(s.sample.image);
    const auto stats = estimate_target_stats(target);
    const auto dir = std::filesystem::path(out_dir) / "previews";
    std::filesystem::create_directories(dir);
    int written = 0;
    for (const auto& s : samples) {
      if (s.split != "source" || written >= previews) continue;
      const auto view = make_source_view(s.sample.image, *s.sample.label,
                                         derive_seed(seed, {200, static_cast<std::uint64_t>(written)}),
                                         cfg, stats);
      png::write_image(dir / (s.id + ".png"), view);
      ++written;
    }
  }
  std::size_t total = 0;
  for (const auto& [split, ids] : index.splits) total += ids.size();
  out << "wrote " << total << " samples to " << out_dir << "\n";
  return ok;
}

inline int cmd_train_warmup(const CommonArgs& args, std::ostream& out) {
  const auto cfg = resolve(args);
  const auto index = load_dataset(args.data);
  const auto source = load_source(index, cfg);
  const auto stats = estimate_target_stats(index);
  const auto val = load_eval_set(index, "target_val", cfg);
  const auto run = RunDir::create(args.run, cfg);
  MetricsLog log(run.metrics());
  auto r = train_warmup(source, stats, val, cfg, [&](const WarmupEpochLog& row) {
    log.write(to_json(row));
    out << "warmup epoch " << row.epoch << "  seg " << fmt(row.loss_seg) << "  distil "
        << fmt(row.loss_distil) << "  target_val mIoU " << fmt(100 * row.miou_target_val, 2) << "\n";
  });
  const auto ckpt = run.checkpoint("warmup");
  save_checkpoint(ckpt, {r.pair, std::nullopt});
  const auto s = score(r.pair, val, cfg);
  run.write_report(Json{{"command", "train-warmup"},
                        {"checkpoint", ckpt.string()},
                        {"target_val", to_json(s)}});
  out << "checkpoint " << ckpt.string() << "\n";
  return ok;
}

inline int cmd_init_centroids(const CommonArgs& args, const std::string& warmup, std::ostream& out) {
  const auto cfg = resolve(args);
  const auto index = load_dataset(args.data);
  auto ck = load_checkpoint(warmup);
  const auto source = load_source(index, cfg);
  const auto stats = estimate_target_stats(index);
  const auto run = RunDir::create(args.run, cfg);
  ck.bank = init_centroids(ck.pair, std::span<const LabelledImage>(source), cfg, stats);
  const auto path = run.checkpoint("centroids");
  save_checkpoint(path, ck);
  Json present = Json::array();
  for (int k = 0; k < ck.bank->num_classes; ++k) present.push_back(static_cast<bool>(ck.bank->present[static_cast<std::size_t>(k)]));
  run.write_report(Json{{"command", "init-centroids"}, {"checkpoint", path.string()}, {"present", present}});
  out << "checkpoint " << path.string() << "\n";
  return ok;
}

inline Checkpoint load_with_bank(const std::string& path) {
  auto ck = load_checkpoint(path);
  if (!ck.bank)
    throw ValidationError("checkpoint '" + path + "' has no centroid bank; run init-centroids first");
  return ck;
}

inline void print_st_row(std::ostream& out, const StEpochLog& r) {
  out << "st epoch " << r.epoch << "  seg " << fmt(r.loss_seg) << "  target_seg "
      << fmt(r.loss_seg_target) << "  precision " << pct(r.pl_precision) << "  coverage "
      << pct(r.pl_coverage) << "  target_val mIoU " << fmt(100 * r.miou_target_val, 2) << "\n";
}

inline int cmd_train_st(const CommonArgs& args, const std::string& checkpoint, std::ostream& out) {
  const auto cfg = resolve(args);
  const auto index = load_dataset(args.data);
  const auto ck = load_with_bank(checkpoint);
  const auto bench = load_benchmark(index, cfg);
  const auto run = RunDir::create(args.run, cfg);
  MetricsLog log(run.metrics());
  StOptions opts;
  opts.on_epoch = [&](const StEpochLog& r) {
    log.write(to_json(r));
    print_st_row(out, r);
  };
  const auto r = train_st(ck.pair, *ck.bank, bench.st_data(), cfg, opts);
  const auto path = run.checkpoint("st");
  save_checkpoint(path, {r.pair, r.bank});
  run.write_report(Json{{"command", "train-st"},
                        {"checkpoint", path.string()},
                        {"target_val", to_json(score(r.pair, bench.val, cfg))}});
  out << "checkpoint " << path.string() << "\n";
  return ok;
}

inline int cmd_eval(const CommonArgs& args, const std::string& checkpoint, const std::string& split,
                    bool mst, std::ostream& out) {
  const auto cfg = resolve(args);
  const auto index = load_dataset(args.data);
  const auto ck = load_checkpoint(checkpoint);
  const auto images = index.load_images(split);
  const auto labels = index.load_labels(split, LabelAccess::evaluation, cfg);
  const auto m = evaluate_miou<float>(ck.pair.arch, eval_params(ck.pair, cfg), images, labels, cfg, mst);
  const auto run = RunDir::create(args.run, cfg);
  Json report = miou_json(m);
  report["command"] = "eval";
  report["split"] = split;
  report["mst"] = mst;
  MetricsLog(run.metrics()).write(Json{{"split", split}, {"mst", mst}, {"miou", m.mean}});
  run.write_report(report);
  std::vector<std::vector<std::string>> rows = {{"class", "IoU"}};
  for (std::size_t k = 0; k < m.iou.size(); ++k)
    rows.push_back({std::to_string(k), m.present[k] ? fmt(100 * m.iou[k], 2) : "-"});
  rows.push_back({"mIoU", fmt(100 * m.mean, 2)});
  print_table(out, rows);
  return ok;
}

inline int cmd_compare(const CommonArgs& args, const std::string& checkpoint,
                       const std::vector<double>& thresholds, std::ostream& out) {
  const auto cfg = resolve(args);
  const auto index = load_dataset(args.data);
  const auto ck = load_with_bank(checkpoint);
  const auto bench = load_benchmark(index, cfg);
  const auto run = RunDir::create(args.run, cfg);
  std::optional<std::vector<double>> fixed;
  if (!thresholds.empty()) {
    if (static_cast<int>(thresholds.size()) != cfg.num_classes)
      throw UsageError("--thresholds needs one value per class (" + std::to_string(cfg.num_classes) + ")");
    fixed = thresholds;
  }
  const auto runs = compare_strategies(ck.pair, *ck.bank, bench, cfg, MetricsLog(run.metrics()), fixed);
  Json report{{"command", "compare-pseudo"}, {"strategies", Json::array()}};
  std::vector<std::vector<std::string>> rows = {{"strategy", "mIoU", "mIoU (MST)", "final precision"}};
  for (const auto& r : runs) {
    Json traj = Json::array();
    for (const auto& e : r.log) traj.push_back(to_json(e));
    report["strategies"].push_back(
        Json{{"strategy", strategy_name(r.strategy)}, {"target_val", to_json(r.target)}, {"log", traj}});
    rows.push_back({strategy_name(r.strategy), fmt(100 * r.target.miou, 2), fmt(100 * r.target.miou_mst, 2),
                    r.log.empty() ? "n/a" : pct(r.log.back().pl_precision)});
  }
  run.write_report(report);
  print_table(out, rows);
  return ok;
}

inline std::vector<int> training_seeds(const TrainConfig& cfg, int count) {
  std::vector<int> seeds;
  for (int i = 0; i < count; ++i) seeds.push_back(cfg.seed + i);
  return seeds;
}

inline int cmd_ablate(const CommonArgs& args, int num_seeds, std::ostream& out) {
  const auto cfg = resolve(args);
  const auto index = load_dataset(args.data);
  const auto bench = load_benchmark(index, cfg);
  const auto run = RunDir::create(args.run, cfg);
  MetricsLog log(run.metrics());
  std::vector<LadderRow> mean;
  Json per_seed = Json::array();
  const auto seeds = training_seeds(cfg, num_seeds);
  for (int seed : seeds) {
    auto c = cfg;
    c.seed = seed;
    const auto r = run_ladder(bench, c, log, seeds.size() == 1 ? &run : nullptr);
    Json rows = Json::array();
    for (std::size_t i = 0; i < r.rows.size(); ++i) {
      const auto& row = r.rows[i];
      rows.push_back(Json{{"name", row.name}, {"target_val", to_json(row.target)}, {"target2_val", to_json(row.target2)}});
      if (mean.size() <= i) mean.push_back({row.name, {}, {}});
      mean[i].target.miou += row.target.miou / static_cast<double>(seeds.size());
      mean[i].target.miou_mst += row.target.miou_mst / static_cast<double>(seeds.size());
      mean[i].target2.miou += row.target2.miou / static_cast<double>(seeds.size());
      mean[i].target2.miou_mst += row.target2.miou_mst / static_cast<double>(seeds.size());
    }
    per_seed.push_back(Json{{"seed", seed}, {"rows", rows}});
  }
  Json ladder = Json::array();
  std::vector<std::vector<std::string>> table = {{"component", "target mIoU", "target mIoU (MST)"}};
  for (const auto& row : mean) {
    ladder.push_back(Json{{"name", row.name}, {"target_val", to_json(row.target)}, {"target2_val", to_json(row.target2)}});
    table.push_back({row.name, fmt(100 * row.target.miou, 2), fmt(100 * row.target.miou_mst, 2)});
  }
  run.write_report(Json{{"command", "ablate"}, {"seeds", seeds}, {"ladder", ladder}, {"per_seed", per_seed}});
  print_table(out, table);
  return ok;
}

inline int cmd_generalize(const CommonArgs& args, int num_seeds, std::ostream& out) {
  const auto cfg = resolve(args);
  const auto index = load_dataset(args.data);
  const auto bench = load_benchmark(index, cfg);
  const auto run = RunDir::create(args.run, cfg);
  MetricsLog log(run.metrics());
  GeneralizeResult mean;
  const auto seeds = training_seeds(cfg, num_seeds);
  const double w = 1.0 / static_cast<double>(seeds.size());
  Json per_seed = Json::array();
  for (int seed : seeds) {
    auto c = cfg;
    c.seed = seed;
    const auto g = run_generalize(bench, c, log);
    per_seed.push_back(Json{{"seed", seed},
                            {"supervised", {{"target", to_json(g.supervised_target)}, {"target2", to_json(g.supervised_target2)}}},
                            {"distil", {{"target", to_json(g.distil_target)}, {"target2", to_json(g.distil_target2)}}}});
    mean.supervised_target.miou += w * g.supervised_target.miou;
    mean.supervised_target2.miou += w * g.supervised_target2.miou;
    mean.distil_target.miou += w * g.distil_target.miou;
    mean.distil_target2.miou += w * g.distil_target2.miou;
  }
  run.write_report(Json{{"command", "generalize"},
                        {"seeds", seeds},
                        {"supervised", {{"target", mean.supervised_target.miou}, {"target2", mean.supervised_target2.miou}}},
                        {"distil", {{"target", mean.distil_target.miou}, {"target2", mean.distil_target2.miou}}},
                        {"per_seed", per_seed}});
  print_table(out, {{"training", "target mIoU", "target2 mIoU"},
                    {"supervised", fmt(100 * mean.supervised_target.miou, 2), fmt(100 * mean.supervised_target2.miou, 2)},
                    {"distillation", fmt(100 * mean.distil_target.miou, 2), fmt(100 * mean.distil_target2.miou, 2)}});
  return ok;
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

/// Parses argv and runs one subcommand. Never throws; returns an exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Two-stage domain-adaptive segmentation on a synthetic benchmark", "diga"};
  app.require_subcommand(1);

  CommonArgs a;
  std::string out_dir, checkpoint, split = "target_val";
  int previews = 0, seeds = 3;
  bool mst = false;
  std::vector<double> thresholds;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic source/target benchmark");
  add_config_flags(*gen, a);
  gen->add_option("--out", out_dir, "output dataset directory")->required();
  gen->add_option("--previews", previews, "also write this many CrDoMix source views");

  auto* warm = app.add_subcommand("train-warmup", "warm-up training on labelled source");
  add_config_flags(*warm, a);
  add_data_flag(*warm, a);
  add_run_flag(*warm, a, "warmup");

  auto* cent = app.add_subcommand("init-centroids", "initialize the class centroid bank");
  add_config_flags(*cent, a);
  add_data_flag(*cent, a);
  add_run_flag(*cent, a, "centroids");
  cent->add_option("--checkpoint", checkpoint, "warm-up checkpoint")->required();

  auto* st = app.add_subcommand("train-st", "self-training with consensus pseudo-labels");
  add_config_flags(*st, a);
  add_data_flag(*st, a);
  add_run_flag(*st, a, "st");
  st->add_option("--checkpoint", checkpoint, "checkpoint with a centroid bank")->required();

  auto* ev = app.add_subcommand("eval", "mIoU of a checkpoint on one split");
  add_config_flags(*ev, a);
  add_data_flag(*ev, a);
  add_run_flag(*ev, a, "eval");
  ev->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  ev->add_option("--split", split, "split to score")
      ->check(CLI::IsMember(split_names()))
      ->capture_default_str();
  ev->add_flag("--mst", mst, "average predictions over mst_scales");

  auto* cmp = app.add_subcommand("compare-pseudo", "self-training under four pseudo-label rules");
  add_config_flags(*cmp, a);
  add_data_flag(*cmp, a);
  add_run_flag(*cmp, a, "compare-pseudo");
  cmp->add_option("--checkpoint", checkpoint, "checkpoint with a centroid bank")->required();
  cmp->add_option("--thresholds", thresholds,
                  "fixed per-class confidence thresholds for the threshold rule "
                  "(default: per-class median confidence)");

  auto* abl = app.add_subcommand("ablate", "component ladder from source-only to self-training");
  add_config_flags(*abl, a);
  add_data_flag(*abl, a);
  add_run_flag(*abl, a, "ablate");
  abl->add_option("--seeds", seeds, "number of training seeds, starting at config seed")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  auto* gen2 = app.add_subcommand("generalize", "supervised vs distillation warm-up on unseen domains");
  add_config_flags(*gen2, a);
  add_data_flag(*gen2, a);
  add_run_flag(*gen2, a, "generalize");
  gen2->add_option("--seeds", seeds, "number of training seeds, starting at config seed")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return usage;
  }

  try {
    if (*gen) return cmd_gen_data(a, out_dir, previews, out);
    if (*warm) return cmd_train_warmup(a, out);
    if (*cent) return cmd_init_centroids(a, checkpoint, out);
    if (*st) return cmd_train_st(a, checkpoint, out);
    if (*ev) return cmd_eval(a, checkpoint, split, mst, out);
    if (*cmp) return cmd_compare(a, checkpoint, thresholds, out);
    if (*abl) return cmd_ablate(a, seeds, out);
    if (*gen2) return cmd_generalize(a, seeds, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return usage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return usage;
  } catch (const ValidationError& e) {
    err << "validation error: " << e.what() << "\n";
    return validation;
  } catch (const ShapeError& e) {
    err << "validation error: " << e.what() << "\n";
    return validation;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return io;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "I/O error: " << e.what() << "\n";
    return io;
  }
  return usage;
}

}  // namespace diga::cli
