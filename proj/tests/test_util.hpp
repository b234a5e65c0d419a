#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "diga/config.hpp"
#include "diga/core.hpp"
#include "diga/rng.hpp"

namespace diga::test {

/// A fresh, empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("diga_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Small geometry for fast end-to-end tests.
inline TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.image_height = 16;
  cfg.image_width = 16;
  cfg.feature_dim = 4;
  cfg.num_source = 6;
  cfg.num_target_train = 6;
  cfg.num_target_val = 3;
  cfg.num_target2_val = 3;
  cfg.warmup_epochs = 1;
  cfg.st_epochs = 1;
  cfg.label_refresh_epochs = 1;
  cfg.batch_source = 2;
  cfg.batch_target = 2;
  cfg.learning_rate = 0.01;
  return cfg;
}

template <typename T>
Tensor<T> random_tensor(int c, int h, int w, std::uint64_t seed, double lo = -1.0,
                        double hi = 1.0) {
  Rng rng(seed);
  Tensor<T> t(c, h, w);
  for (auto& v : t.data) v = static_cast<T>(uniform(rng, lo, hi));
  return t;
}

/// Strictly positive per-pixel distributions.
template <typename T>
ProbMap<T> random_probs(int c, int h, int w, std::uint64_t seed) {
  auto p = random_tensor<T>(c, h, w, seed, 0.05, 1.0);
  const std::size_t n = p.plane();
  for (std::size_t i = 0; i < n; ++i) {
    T z{0};
    for (int k = 0; k < c; ++k) z += p.data[k * n + i];
    for (int k = 0; k < c; ++k) p.data[k * n + i] /= z;
  }
  return p;
}

inline LabelMap random_labels(int h, int w, int num_classes, std::uint64_t seed,
                              int ignore_id = -1, double ignore_prob = 0.0) {
  Rng rng(seed);
  LabelMap l(h, w);
  for (auto& v : l.data) {
    v = uniform_int(rng, 0, num_classes - 1);
    if (ignore_prob > 0.0 && bernoulli(rng, ignore_prob)) v = ignore_id;
  }
  return l;
}

inline Image random_image(int h, int w, std::uint64_t seed) {
  return random_tensor<float>(3, h, w, seed, 0.0, 1.0);
}

}  // namespace diga::test
