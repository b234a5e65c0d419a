#include <gtest/gtest.h>

#include "diga/experiments.hpp"
#include "diga/selftrain.hpp"
#include "test_util.hpp"

using namespace diga;

namespace {

constexpr int kIgnore = 255;

LabelMap row_labels(std::vector<std::int32_t> v) {
  LabelMap l(1, static_cast<int>(v.size()));
  l.data = std::move(v);
  return l;
}

struct StFixture {
  TrainConfig cfg = test::tiny_config();
  Benchmark bench = make_benchmark(3, cfg);
  ModelPair<float> pair = init_pair<float>(cfg, 5);
  CentroidBank bank;

  StFixture() {
    bank = init_centroids(pair, std::span<const LabelledImage>(bench.source), cfg, bench.stats);
  }
};

}  // namespace

TEST(Consensus, HandCase) {
  EXPECT_EQ(consensus(row_labels({0, 1}), row_labels({0, 2}), kIgnore), row_labels({0, kIgnore}));
  EXPECT_EQ(consensus(row_labels({kIgnore, 3}), row_labels({kIgnore, 3}), kIgnore),
            row_labels({kIgnore, 3}));
  EXPECT_THROW(consensus(row_labels({0}), row_labels({0, 1}), kIgnore), ShapeError);
}

TEST(Consensus, FullAgreementAndFullDisagreement) {
  const auto a = test::random_labels(5, 5, 4, 1);
  EXPECT_EQ(consensus(a, a, kIgnore), a);
  auto b = a;
  for (auto& v : b.data) v = (v + 1) % 4;
  EXPECT_EQ(consensus(a, b, kIgnore), LabelMap(5, 5, kIgnore));
}

TEST(Consensus, RandomPairLaws) {
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto a = test::random_labels(4, 5, 4, 2 * seed, kIgnore, 0.1);
    const auto b = test::random_labels(4, 5, 4, 2 * seed + 1, kIgnore, 0.1);
    const auto c = consensus(a, b, kIgnore);
    for (std::size_t i = 0; i < c.size(); ++i) {
      if (c.data[i] != kIgnore) {
        ASSERT_EQ(c.data[i], a.data[i]);
        ASSERT_EQ(c.data[i], b.data[i]);
      } else {
        ASSERT_TRUE(a.data[i] != b.data[i] || a.data[i] == kIgnore);
      }
    }
    ASSERT_EQ(consensus(b, a, kIgnore), c);
    ASSERT_EQ(consensus(a, a, kIgnore), a);
  }
}

TEST(WarmLabels, UniformLogitsGiveClassZero) {
  auto cfg = test::tiny_config();
  auto pair = init_pair<float>(cfg, 1);
  const auto& arch = pair.arch;
  // Zero the classifier head so every pixel sees equal logits.
  const auto last = arch.layers.size() - 1;
  std::fill(pair.student.begin() + static_cast<std::ptrdiff_t>(arch.offset(last)), pair.student.end(), 0.0f);
  const std::vector<Image> images{test::random_image(16, 16, 3)};
  const auto store = generate_warm_labels<float>(arch, pair.student, images);
  EXPECT_EQ(store.warm.front(), LabelMap(16, 16, 0));
  EXPECT_TRUE(store.probs.empty());
}

TEST(WarmLabels, PerfectPredictionsReproduceGroundTruth) {
  const auto gt = test::random_labels(6, 7, 4, 12);
  ProbMap<float> one_hot(4, 6, 7);
  for (std::size_t i = 0; i < gt.size(); ++i) one_hot.data[static_cast<std::size_t>(gt.data[i]) * gt.size() + i] = 1.0f;
  EXPECT_EQ(argmax_labels(one_hot), gt);
}

TEST(WarmLabels, MatchArgmaxAndAreDeterministic) {
  auto cfg = test::tiny_config();
  const auto pair = init_pair<float>(cfg, 2);
  std::vector<Image> images;
  for (int i = 0; i < 3; ++i) images.push_back(test::random_image(16, 16, 10 + i));
  const auto a = generate_warm_labels<float>(pair.arch, pair.student, images, true);
  const auto b = generate_warm_labels<float>(pair.arch, pair.student, images, true);
  EXPECT_EQ(a, b);
  ASSERT_EQ(a.probs.size(), 3u);
  for (std::size_t i = 0; i < images.size(); ++i) {
    EXPECT_EQ(a.warm[i], argmax_labels(a.probs[i]));
    for (auto v : a.warm[i].data) EXPECT_NE(v, cfg.ignore_id);
  }
}

TEST(StStep, AllIgnoredPseudoLabelsLeaveOnlySourceLosses) {
  StFixture f;
  const PseudoLabeler none = [&](const PseudoInputs& in) { return LabelMap(in.feat.height, in.feat.width, f.cfg.ignore_id); };
  const auto store = generate_warm_labels<float>(f.pair.arch, f.pair.student, f.bench.target);
  std::vector<TargetItem> items{{0, &f.bench.target[0], nullptr}, {1, &f.bench.target[1], nullptr}};
  Optimizer<float> opt;
  opt.learning_rate = f.cfg.learning_rate;
  StEpochStats stats;
  const auto losses = st_step(f.pair, opt, f.bank, store,
                              std::span<const LabelledImage>(f.bench.source.data(), 2),
                              std::span<const TargetItem>(items), f.cfg, f.bench.stats, 9, none, &stats);
  EXPECT_EQ(losses.target_seg, 0.0);
  EXPECT_TRUE(std::isfinite(losses.total));
  EXPECT_EQ(stats.unc_accept_n, 0);
  EXPECT_EQ(stats.unc_reject_n, 2 * 16 * 16);
}

TEST(StStep, AllIgnoredReducesToWarmupStep) {
  StFixture f;
  f.cfg.lambda_distil_warmup = f.cfg.lambda_distil_st;
  f.cfg.centroid_momentum = 1.0;
  const PseudoLabeler none = [&](const PseudoInputs& in) { return LabelMap(in.feat.height, in.feat.width, f.cfg.ignore_id); };
  const auto store = generate_warm_labels<float>(f.pair.arch, f.pair.student, f.bench.target);
  std::vector<TargetItem> items{{0, &f.bench.target[0], nullptr}};
  const auto batch = std::span<const LabelledImage>(f.bench.source.data(), 2);
  auto st_pair = f.pair, warm_pair = f.pair;
  Optimizer<float> opt_a;
  opt_a.learning_rate = f.cfg.learning_rate;
  auto opt_b = opt_a;
  const auto a = st_step(st_pair, opt_a, f.bank, store, batch, std::span<const TargetItem>(items), f.cfg,
                         f.bench.stats, 21, none);
  const auto b = warmup_step(warm_pair, opt_b, batch, f.cfg, f.bench.stats, 21);
  EXPECT_EQ(st_pair, warm_pair);
  EXPECT_EQ(a.seg, b.seg);
  EXPECT_EQ(a.distil, b.distil);
}

TEST(StStep, SourceLossesDoNotDependOnTheLabeler) {
  StFixture f;
  const auto store = generate_warm_labels<float>(f.pair.arch, f.pair.student, f.bench.target);
  std::vector<TargetItem> items{{0, &f.bench.target[0], nullptr}};
  const auto batch = std::span<const LabelledImage>(f.bench.source.data(), 2);
  const PseudoLabeler feat = [](const PseudoInputs& in) { return in.feat; };
  const PseudoLabeler warm = [](const PseudoInputs& in) { return in.warm; };
  auto pa = f.pair, pb = f.pair;
  auto ba = f.bank, bb = f.bank;
  Optimizer<float> oa;
  oa.learning_rate = f.cfg.learning_rate;
  auto ob = oa;
  const auto a = st_step(pa, oa, ba, store, batch, std::span<const TargetItem>(items), f.cfg, f.bench.stats, 5, feat);
  const auto b = st_step(pb, ob, bb, store, batch, std::span<const TargetItem>(items), f.cfg, f.bench.stats, 5, warm);
  EXPECT_EQ(a.seg, b.seg);
  EXPECT_EQ(a.distil, b.distil);
}

TEST(StStep, TotalIsWeightedSum) {
  StFixture f;
  f.cfg.lambda_seg = 0.7;
  f.cfg.lambda_distil_st = 0.3;
  const auto store = generate_warm_labels<float>(f.pair.arch, f.pair.student, f.bench.target);
  std::vector<TargetItem> items{{2, &f.bench.target[2], nullptr}};
  Optimizer<float> opt;
  opt.learning_rate = f.cfg.learning_rate;
  const auto l = st_step(f.pair, opt, f.bank, store, std::span<const LabelledImage>(f.bench.source.data(), 2),
                         std::span<const TargetItem>(items), f.cfg, f.bench.stats, 4,
                         consensus_labeler(f.cfg.ignore_id));
  EXPECT_NEAR(l.total, 0.3 * l.distil + 0.7 * (l.seg + l.target_seg), 1e-9);
}

TEST(StStep, UsesThePseudoLabelsFromTheLabeler) {
  // Pseudo-labels from an independent labeler must give the CE computed directly.
  StFixture f;
  const LabelMap fixed = test::random_labels(16, 16, f.cfg.num_classes, 77);
  const PseudoLabeler labeler = [&](const PseudoInputs&) { return fixed; };
  const auto store = generate_warm_labels<float>(f.pair.arch, f.pair.student, f.bench.target);
  std::vector<TargetItem> items{{0, &f.bench.target[0], nullptr}};
  const auto probs = forward_any(f.pair.arch, std::span<const float>(f.pair.student), to_tensor<float>(f.bench.target[0])).probs;
  const double expected = ce_loss(probs, fixed, f.cfg.ignore_id).value;
  Optimizer<float> opt;
  const auto l = st_step(f.pair, opt, f.bank, store, std::span<const LabelledImage>(f.bench.source.data(), 1),
                         std::span<const TargetItem>(items), f.cfg, f.bench.stats, 4, labeler);
  EXPECT_NEAR(l.target_seg, expected, 1e-6);
}

TEST(StDefaults, DistillationIsDownWeighted) {
  const TrainConfig cfg;
  EXPECT_EQ(cfg.lambda_seg, 1.0);
  EXPECT_EQ(cfg.lambda_distil_st, 0.25);
}

TEST(Refresh, OnlyOnMultiplesOfTheInterval) {
  StFixture f;
  f.cfg.label_refresh_epochs = 2;
  auto changed = f.pair;
  for (auto& v : changed.student) v *= 1.5f;
  changed.teacher = changed.student;
  const auto store = generate_warm_labels<float>(f.pair.arch, f.pair.student, f.bench.target);
  EXPECT_EQ(refresh_labels(changed, f.bench.target, store, 1, f.cfg), store);
  EXPECT_EQ(refresh_labels(changed, f.bench.target, store, 3, f.cfg), store);
  const auto refreshed = refresh_labels(changed, f.bench.target, store, 2, f.cfg);
  EXPECT_EQ(refreshed.generation_epoch, 2);
  EXPECT_EQ(refreshed.warm, generate_warm_labels<float>(changed.arch, changed.student, f.bench.target).warm);
  // Unchanged parameters reproduce the same labels.
  EXPECT_EQ(refresh_labels(f.pair, f.bench.target, store, 2, f.cfg).warm, store.warm);
}

TEST(TrainSt, ZeroEpochsReturnsInputs) {
  StFixture f;
  f.cfg.st_epochs = 0;
  const auto r = train_st(f.pair, f.bank, f.bench.st_data(), f.cfg);
  EXPECT_EQ(r.pair, f.pair);
  EXPECT_EQ(r.bank, f.bank);
  EXPECT_TRUE(r.log.empty());
}

TEST(TrainSt, DeterministicAndLogsEveryEpoch) {
  StFixture f;
  f.cfg.st_epochs = 2;
  const auto a = train_st(f.pair, f.bank, f.bench.st_data(), f.cfg);
  const auto b = train_st(f.pair, f.bank, f.bench.st_data(), f.cfg);
  EXPECT_EQ(a.pair, b.pair);
  EXPECT_EQ(a.bank, b.bank);
  ASSERT_EQ(a.log.size(), 2u);
  EXPECT_NE(a.pair.student, f.pair.student);
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    EXPECT_EQ(to_json(a.log[i]).dump(), to_json(b.log[i]).dump());
    EXPECT_EQ(a.log[i].epoch, static_cast<int>(i) + 1);
    ASSERT_TRUE(a.log[i].pl_coverage.has_value());
    EXPECT_GE(*a.log[i].pl_coverage, 0.0);
    EXPECT_LE(*a.log[i].pl_coverage, 1.0);
  }
}

TEST(TrainSt, RecallNeverExceedsCoverage) {
  StFixture f;
  const auto r = train_st(f.pair, f.bank, f.bench.st_data(), f.cfg);
  ASSERT_EQ(r.log.size(), 1u);
  const auto& row = r.log.front();
  ASSERT_TRUE(row.pl_recall && row.pl_coverage);
  EXPECT_LE(*row.pl_recall, *row.pl_coverage);
}

TEST(ThresholdLabeler, MatchesFixedThresholds) {
  const auto probs = test::random_probs<float>(3, 4, 4, 8);
  PseudoLabelStore store;
  store.warm.push_back(argmax_labels(probs));
  store.probs.push_back(probs);
  const std::vector<double> th{0.5, 0.4, 0.6};
  const auto labeler = threshold_labeler(3, kIgnore, th);
  const LabelMap dummy(4, 4, 0);
  EXPECT_EQ(labeler(PseudoInputs{0, dummy, store.warm[0], store}), threshold_labels(probs, th, kIgnore));
}
