#include <gtest/gtest.h>

#include "diga/centroids.hpp"
#include "diga/experiments.hpp"
#include "test_util.hpp"

using namespace diga;

namespace {

/// Features given as one D-vector per pixel, row-major over (h, w).
Tensor<double> features_from(int h, int w, const std::vector<std::vector<double>>& px) {
  const int d = static_cast<int>(px.front().size());
  Tensor<double> f(d, h, w);
  for (std::size_t i = 0; i < px.size(); ++i)
    for (int k = 0; k < d; ++k) f.data[static_cast<std::size_t>(k) * f.plane() + i] = px[i][static_cast<std::size_t>(k)];
  return f;
}

CentroidBank bank_from(const std::vector<std::vector<double>>& rows) {
  CentroidBank b(static_cast<int>(rows.size()), static_cast<int>(rows.front().size()));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    std::copy(rows[k].begin(), rows[k].end(), b.row(static_cast<int>(k)).begin());
    b.present[k] = true;
  }
  return b;
}

ClassMeans means_of(int c, const std::vector<std::optional<double>>& scalar) {
  ClassMeans m(c, 1);
  for (std::size_t k = 0; k < scalar.size(); ++k)
    if (scalar[k]) {
      m.sums[k] = *scalar[k];
      m.counts[k] = 1;
    }
  return m;
}

/// Brute-force nearest present centroid with the smallest-id tie rule.
LabelMap vote_oracle(const Tensor<double>& f, const CentroidBank& b) {
  LabelMap out(f.height, f.width);
  for (int y = 0; y < f.height; ++y)
    for (int x = 0; x < f.width; ++x) {
      int best = -1;
      double best_d = 0.0;
      for (int k = 0; k < b.num_classes; ++k) {
        if (!b.present[static_cast<std::size_t>(k)]) continue;
        double d = 0.0;
        for (int c = 0; c < f.channels; ++c) {
          const double e = f.at(c, y, x) - b.row(k)[static_cast<std::size_t>(c)];
          d += e * e;
        }
        if (best < 0 || d < best_d) best = k, best_d = d;
      }
      out.at(y, x) = best;
    }
  return out;
}

}  // namespace

TEST(ClassMeansTest, ConstantFeaturesGiveThatVector) {
  Tensor<double> f(3, 2, 2);
  for (int c = 0; c < 3; ++c)
    for (auto& v : f.channel(c)) v = 0.5 * c - 1.0;
  LabelMap y(2, 2, 1);
  y.data[3] = 255;
  const auto m = batch_class_means(f, y, 3);
  EXPECT_EQ(*m.mean(1), (std::vector<double>{-1.0, -0.5, 0.0}));
  EXPECT_EQ(m.counts[1], 3);
}

TEST(ClassMeansTest, TwoPixelHandMean) {
  const auto f = features_from(1, 2, {{1.0, 0.0}, {0.0, 1.0}});
  LabelMap y(1, 2, 0);
  const auto m = batch_class_means(f, y, 2);
  EXPECT_EQ(*m.mean(0), (std::vector<double>{0.5, 0.5}));
}

TEST(ClassMeansTest, AbsentClassHasNoMean) {
  const auto m = batch_class_means(features_from(1, 2, {{1.0}, {2.0}}), LabelMap(1, 2, 0), 3);
  EXPECT_EQ(m.counts[2], 0);
  EXPECT_FALSE(m.mean(2).has_value());
  EXPECT_THROW(batch_class_means(features_from(1, 2, {{1.0}, {2.0}}), LabelMap(2, 1, 0), 3), ShapeError);
}

TEST(Initializer, SingleImageSingleClass) {
  CentroidInitializer init(2, 2);
  Tensor<double> f(2, 3, 3);
  for (auto& v : f.channel(0)) v = 0.25;
  for (auto& v : f.channel(1)) v = -2.0;
  init.add_image(f, LabelMap(3, 3, 1));
  const auto b = init.finish();
  EXPECT_FALSE(b.present[0]);
  EXPECT_TRUE(b.present[1]);
  EXPECT_EQ(b.row(1)[0], 0.25);
  EXPECT_EQ(b.row(1)[1], -2.0);
}

TEST(Initializer, AveragesPerImageMeans) {
  // Image 1: three class-0 pixels with mean 2; image 2: one class-0 pixel at 6.
  CentroidInitializer init(2, 1);
  LabelMap y1(1, 4, 0);
  y1.data[3] = 1;
  init.add_image(features_from(1, 4, {{1.0}, {2.0}, {3.0}, {100.0}}), y1);
  LabelMap y2(1, 2, 1);
  y2.data[0] = 0;
  init.add_image(features_from(1, 2, {{6.0}, {-4.0}}), y2);
  const auto b = init.finish();
  EXPECT_NEAR(b.row(0)[0], (2.0 + 6.0) / 2.0, 1e-12);
  EXPECT_NEAR(b.row(1)[0], (100.0 - 4.0) / 2.0, 1e-12);
}

TEST(Initializer, ClassDependsOnlyOnImagesContainingIt) {
  CentroidInitializer a(3, 1), b(3, 1);
  const LabelMap only0(1, 2, 0);
  LabelMap with1(1, 2, 1);
  a.add_image(features_from(1, 2, {{1.0}, {3.0}}), with1);
  b.add_image(features_from(1, 2, {{1.0}, {3.0}}), with1);
  a.add_image(features_from(1, 2, {{5.0}, {5.0}}), only0);
  b.add_image(features_from(1, 2, {{-9.0}, {7.0}}), only0);
  EXPECT_EQ(a.finish().row(1)[0], b.finish().row(1)[0]);
}

TEST(Initializer, InitCentroidsIsDeterministic) {
  auto cfg = test::tiny_config();
  const auto bench = make_benchmark(2, cfg);
  const auto pair = init_pair<float>(cfg, 1);
  const auto a = init_centroids(pair, std::span<const LabelledImage>(bench.source), cfg, bench.stats);
  const auto b = init_centroids(pair, std::span<const LabelledImage>(bench.source), cfg, bench.stats);
  EXPECT_EQ(a, b);
  EXPECT_TRUE(a.present[0]);
}

TEST(Vote, HandDistances) {
  const auto bank = bank_from({{1.0, 0.0}, {0.0, 1.0}});
  EXPECT_EQ(vote_labels(features_from(1, 1, {{0.9, 0.1}}), bank).data[0], 0);
  EXPECT_EQ(vote_labels(features_from(1, 1, {{0.0, 1.0}}), bank).data[0], 1);
  EXPECT_EQ(vote_labels(features_from(1, 1, {{0.5, 0.5}}), bank).data[0], 0);
}

TEST(Vote, AbsentClassesNeverWin) {
  auto bank = bank_from({{0.0}, {1.0}, {2.0}});
  bank.present[1] = false;
  EXPECT_EQ(vote_labels(features_from(1, 1, {{1.0}}), bank).data[0], 0);
  bank.present.assign(3, false);
  EXPECT_THROW(vote_labels(features_from(1, 1, {{1.0}}), bank), ValidationError);
}

TEST(Vote, MatchesBruteForceOracle) {
  Rng rng(42);
  for (int inst = 0; inst < 100; ++inst) {
    const int c = uniform_int(rng, 2, 6), d = uniform_int(rng, 1, 5);
    const int h = uniform_int(rng, 1, 6), w = uniform_int(rng, 1, 6);
    // Small integer grids make exact distance ties common.
    Tensor<double> f(d, h, w);
    for (auto& v : f.data) v = uniform_int(rng, -2, 2);
    CentroidBank b(c, d);
    for (auto& v : b.rho) v = uniform_int(rng, -2, 2);
    for (int k = 0; k < c; ++k) b.present[static_cast<std::size_t>(k)] = bernoulli(rng, 0.8);
    b.present[static_cast<std::size_t>(uniform_int(rng, 0, c - 1))] = true;
    EXPECT_EQ(vote_labels(f, b), vote_oracle(f, b)) << "instance " << inst;
  }
}

TEST(Vote, TranslationEquivariance) {
  Rng rng(7);
  for (int inst = 0; inst < 50; ++inst) {
    const int c = 4, d = 3;
    Tensor<double> f(d, 4, 4);
    for (auto& v : f.data) v = uniform(rng, -1, 1);
    CentroidBank b(c, d);
    for (auto& v : b.rho) v = uniform(rng, -1, 1);
    b.present.assign(4, true);
    std::vector<double> t(3);
    for (auto& v : t) v = static_cast<double>(uniform_int(rng, -8, 8)) / 4.0;  // exact in binary
    auto f2 = f;
    auto b2 = b;
    for (int k = 0; k < d; ++k) {
      for (auto& v : f2.channel(k)) v += t[static_cast<std::size_t>(k)];
      for (int j = 0; j < c; ++j) b2.row(j)[static_cast<std::size_t>(k)] += t[static_cast<std::size_t>(k)];
    }
    EXPECT_EQ(vote_labels(f, b), vote_labels(f2, b2));
  }
}

TEST(CentroidEma, ScalarHandCase) {
  auto bank = bank_from({{1.0}});
  ema_update_centroids(bank, means_of(1, {0.0}), means_of(1, {2.0}), 0.5);
  EXPECT_NEAR(bank.row(0)[0], 1.25, 1e-4);
}

TEST(CentroidEma, DegenerateMomenta) {
  auto bank = bank_from({{1.0}, {-3.0}});
  const auto before = bank;
  ema_update_centroids(bank, means_of(2, {0.0, 5.0}), means_of(2, {2.0, 7.0}), 1.0);
  EXPECT_EQ(bank, before);
  ema_update_centroids(bank, means_of(2, {0.0, 5.0}), means_of(2, {2.0, 7.0}), 0.0);
  EXPECT_EQ(bank.row(0)[0], 2.0);
  EXPECT_EQ(bank.row(1)[0], 7.0);
}

TEST(CentroidEma, MissingClasses) {
  auto bank = bank_from({{1.0}, {1.0}, {1.0}});
  ema_update_centroids(bank, means_of(3, {3.0, std::nullopt, std::nullopt}),
                       means_of(3, {std::nullopt, 5.0, std::nullopt}), 0.5);
  EXPECT_DOUBLE_EQ(bank.row(0)[0], 2.0);  // source only
  EXPECT_DOUBLE_EQ(bank.row(1)[0], 3.0);  // target only
  EXPECT_DOUBLE_EQ(bank.row(2)[0], 1.0);  // neither
}

TEST(CentroidEma, FirstSightingInitializesRow) {
  auto bank = bank_from({{1.0}, {0.0}});
  bank.present[1] = false;
  ema_update_centroids(bank, means_of(2, {std::nullopt, 4.0}), means_of(2, {std::nullopt, std::nullopt}), 0.9);
  EXPECT_TRUE(bank.present[1]);
  EXPECT_DOUBLE_EQ(bank.row(1)[0], 4.0);
}

TEST(CentroidEma, StaysInConvexHull) {
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    auto bank = bank_from({{uniform(rng, -1, 1)}});
    const double s = uniform(rng, -1, 1), t = uniform(rng, -1, 1);
    ema_update_centroids(bank, means_of(1, {s}), means_of(1, {t}), uniform(rng, 0, 1));
    EXPECT_TRUE(std::isfinite(bank.row(0)[0]));
    EXPECT_GE(bank.row(0)[0], -1.0);
    EXPECT_LE(bank.row(0)[0], 1.0);
  }
}
