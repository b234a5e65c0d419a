#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "diga/core.hpp"

namespace diga {

/// Every tunable of the pipeline. Immutable after load_config.
struct TrainConfig {
  // Label space and geometry.
  int num_classes = 6;
  int ignore_id = 255;
  int image_height = 64;
  int image_width = 64;
  int feature_dim = 16;
  int feature_stride = 4;

  // Loss weights and momenta.
  double alpha = 0.5;
  double lambda_seg = 1.0;
  double lambda_distil_warmup = 0.5;
  double lambda_distil_st = 0.25;
  double ema_momentum = 0.999;
  double centroid_momentum = 0.999;

  // Optimization.
  double learning_rate = 2.5e-4;
  double sgd_momentum = 0.0;
  double weight_decay = 0.0;
  bool adamw = false;         // AdamW instead of SGD
  double lr_poly_power = 0.0;  // lr * (1 - step/total)^power per stage; 0 keeps lr constant
  int batch_source = 4;
  int batch_target = 4;
  int warmup_epochs = 20;
  int st_epochs = 30;
  int label_refresh_epochs = 10;
  std::vector<double> mst_scales = {0.75, 1.0, 1.25};
  int seed = 0;

  // Warm-up components; switching them off yields the ablation ladder.
  bool augment = true;
  bool distil_clean_to_aug = true;
  bool distil_aug_to_clean = true;
  bool crdomix = true;

  // Photometric augmentation menu.
  double jitter_brightness = 0.25;
  double jitter_contrast = 0.35;
  double jitter_saturation = 0.6;
  double jitter_hue = 180.0;  // degrees, max absolute rotation
  double grayscale_prob = 0.2;
  double blur_prob = 0.3;

  // Synthetic benchmark.
  int num_source = 400;
  int num_target_train = 400;
  int num_target_val = 100;
  int num_target2_val = 100;
  double source_noise = 0.03;
  double source_color_jitter = 0.08;
  double target_hue = 100.0;
  std::vector<double> target_gain = {0.7, 0.95, 1.2};  // per RGB channel, or one for all
  std::vector<double> target_bias = {0.12, 0.02, -0.06};
  double target_texture = 0.06;
  double target2_hue = -120.0;
  std::vector<double> target2_gain = {1.15, 0.8, 0.85};
  std::vector<double> target2_bias = {-0.05, 0.1, 0.08};
  double target2_texture = 0.04;
  double longtail_rate = 0.5;
  int longtail_class = 5;
  double longtail_max_fraction = 0.01;

  // Self-training and evaluation switches.
  bool refresh_with_teacher = false;
  bool eval_teacher = false;

  bool operator==(const TrainConfig&) const = default;

  [[nodiscard]] int feature_height() const { return image_height / feature_stride; }
  [[nodiscard]] int feature_width() const { return image_width / feature_stride; }
};

namespace detail {

using FieldPtr =
    std::variant<int TrainConfig::*, double TrainConfig::*, bool TrainConfig::*,
                 std::vector<double> TrainConfig::*>;

struct FieldDesc {
  std::string_view name;
  FieldPtr ptr;
};

inline const std::vector<FieldDesc>& fields() {
  static const std::vector<FieldDesc> table = {
      {"num_classes", &TrainConfig::num_classes},
      {"ignore_id", &TrainConfig::ignore_id},
      {"image_height", &TrainConfig::image_height},
      {"image_width", &TrainConfig::image_width},
      {"feature_dim", &TrainConfig::feature_dim},
      {"feature_stride", &TrainConfig::feature_stride},
      {"alpha", &TrainConfig::alpha},
      {"lambda_seg", &TrainConfig::lambda_seg},
      {"lambda_distil_warmup", &TrainConfig::lambda_distil_warmup},
      {"lambda_distil_st", &TrainConfig::lambda_distil_st},
      {"ema_momentum", &TrainConfig::ema_momentum},
      {"centroid_momentum", &TrainConfig::centroid_momentum},
      {"learning_rate", &TrainConfig::learning_rate},
      {"sgd_momentum", &TrainConfig::sgd_momentum},
      {"weight_decay", &TrainConfig::weight_decay},
      {"adamw", &TrainConfig::adamw},
      {"lr_poly_power", &TrainConfig::lr_poly_power},
      {"batch_source", &TrainConfig::batch_source},
      {"batch_target", &TrainConfig::batch_target},
      {"warmup_epochs", &TrainConfig::warmup_epochs},
      {"st_epochs", &TrainConfig::st_epochs},
      {"label_refresh_epochs", &TrainConfig::label_refresh_epochs},
      {"mst_scales", &TrainConfig::mst_scales},
      {"seed", &TrainConfig::seed},
      {"augment", &TrainConfig::augment},
      {"distil_clean_to_aug", &TrainConfig::distil_clean_to_aug},
      {"distil_aug_to_clean", &TrainConfig::distil_aug_to_clean},
      {"crdomix", &TrainConfig::crdomix},
      {"jitter_brightness", &TrainConfig::jitter_brightness},
      {"jitter_contrast", &TrainConfig::jitter_contrast},
      {"jitter_saturation", &TrainConfig::jitter_saturation},
      {"jitter_hue", &TrainConfig::jitter_hue},
      {"grayscale_prob", &TrainConfig::grayscale_prob},
      {"blur_prob", &TrainConfig::blur_prob},
      {"num_source", &TrainConfig::num_source},
      {"num_target_train", &TrainConfig::num_target_train},
      {"num_target_val", &TrainConfig::num_target_val},
      {"num_target2_val", &TrainConfig::num_target2_val},
      {"source_noise", &TrainConfig::source_noise},
      {"source_color_jitter", &TrainConfig::source_color_jitter},
      {"target_hue", &TrainConfig::target_hue},
      {"target_gain", &TrainConfig::target_gain},
      {"target_bias", &TrainConfig::target_bias},
      {"target_texture", &TrainConfig::target_texture},
      {"target2_hue", &TrainConfig::target2_hue},
      {"target2_gain", &TrainConfig::target2_gain},
      {"target2_bias", &TrainConfig::target2_bias},
      {"target2_texture", &TrainConfig::target2_texture},
      {"longtail_rate", &TrainConfig::longtail_rate},
      {"longtail_class", &TrainConfig::longtail_class},
      {"longtail_max_fraction", &TrainConfig::longtail_max_fraction},
      {"refresh_with_teacher", &TrainConfig::refresh_with_teacher},
      {"eval_teacher", &TrainConfig::eval_teacher},
  };
  return table;
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline int parse_int(std::string_view key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long r = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return static_cast<int>(r);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + std::string(key) +
                      "': expected integer, got '" + v + "'");
  }
}

inline double parse_real(std::string_view key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + std::string(key) +
                      "': expected real, got '" + v + "'");
  }
}

inline bool parse_bool(std::string_view key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + std::string(key) +
                    "': expected boolean, got '" + v + "'");
}

inline std::vector<double> parse_list(std::string_view key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(parse_real(key, item));
  }
  return out;
}

}  // namespace detail

/// Names of every config key, in serialization order.
inline std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : detail::fields()) keys.emplace_back(f.name);
  return keys;
}

inline bool is_config_key(std::string_view key) {
  const auto& fs = detail::fields();
  return std::any_of(fs.begin(), fs.end(),
                     [&](const auto& f) { return f.name == key; });
}

/// Assign one key from its textual value. Unknown keys are a ConfigError.
inline void set_config_value(TrainConfig& cfg, std::string_view key,
                             const std::string& value) {
  for (const auto& f : detail::fields()) {
    if (f.name != key) continue;
    std::visit(
        [&](auto member) {
          using M = std::remove_reference_t<decltype(cfg.*member)>;
          if constexpr (std::is_same_v<M, int>)
            cfg.*member = detail::parse_int(key, value);
          else if constexpr (std::is_same_v<M, double>)
            cfg.*member = detail::parse_real(key, value);
          else if constexpr (std::is_same_v<M, bool>)
            cfg.*member = detail::parse_bool(key, value);
          else
            cfg.*member = detail::parse_list(key, value);
        },
        f.ptr);
    return;
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

inline std::string config_value_string(const TrainConfig& cfg, std::string_view key) {
  for (const auto& f : detail::fields()) {
    if (f.name != key) continue;
    return std::visit(
        [&](auto member) -> std::string {
          const auto& v = cfg.*member;
          using M = std::remove_cvref_t<decltype(v)>;
          if constexpr (std::is_same_v<M, int>)
            return std::to_string(v);
          else if constexpr (std::is_same_v<M, double>)
            return detail::format_real(v);
          else if constexpr (std::is_same_v<M, bool>)
            return v ? "true" : "false";
          else {
            std::string s;
            for (std::size_t i = 0; i < v.size(); ++i) {
              if (i) s += ",";
              s += detail::format_real(v[i]);
            }
            return s;
          }
        },
        f.ptr);
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

namespace detail {
inline void check(bool ok, std::string_view field, std::string_view bound) {
  if (!ok)
    throw ValidationError("config field '" + std::string(field) +
                          "' violates bound: " + std::string(bound));
}
}  // namespace detail

/// Throws ValidationError naming the first field that breaks its bound.
inline void validate(const TrainConfig& c) {
  using detail::check;
  check(c.num_classes >= 2 && c.num_classes <= 255, "num_classes", "2 <= C <= 255");
  check(c.ignore_id < 0 || c.ignore_id >= c.num_classes, "ignore_id",
        "ignore_id not in [0, num_classes)");
  check(c.feature_stride >= 1 && c.feature_stride <= 16 &&
            (c.feature_stride & (c.feature_stride - 1)) == 0,
        "feature_stride", "power of two in [1, 16]");
  check(c.image_height > 0 && c.image_height % c.feature_stride == 0,
        "image_height", "positive multiple of feature_stride");
  check(c.image_width > 0 && c.image_width % c.feature_stride == 0,
        "image_width", "positive multiple of feature_stride");
  check(c.feature_dim >= 1, "feature_dim", ">= 1");
  check(c.alpha > 0.0 && c.alpha < 1.0, "alpha", "0 < alpha < 1");
  check(c.lambda_seg >= 0.0, "lambda_seg", ">= 0");
  check(c.lambda_distil_warmup >= 0.0, "lambda_distil_warmup", ">= 0");
  check(c.lambda_distil_st >= 0.0, "lambda_distil_st", ">= 0");
  check(c.ema_momentum >= 0.0 && c.ema_momentum <= 1.0, "ema_momentum", "[0, 1]");
  check(c.centroid_momentum >= 0.0 && c.centroid_momentum <= 1.0,
        "centroid_momentum", "[0, 1]");
  check(c.learning_rate >= 0.0, "learning_rate", ">= 0");
  check(c.sgd_momentum >= 0.0 && c.sgd_momentum < 1.0, "sgd_momentum", "[0, 1)");
  check(c.weight_decay >= 0.0, "weight_decay", ">= 0");
  check(c.lr_poly_power >= 0.0, "lr_poly_power", ">= 0");
  check(c.batch_source >= 1, "batch_source", ">= 1");
  check(c.batch_target >= 1, "batch_target", ">= 1");
  check(c.warmup_epochs >= 0, "warmup_epochs", ">= 0");
  check(c.st_epochs >= 0, "st_epochs", ">= 0");
  check(c.label_refresh_epochs >= 1, "label_refresh_epochs", ">= 1");
  check(!c.mst_scales.empty(), "mst_scales", "non-empty");
  for (double s : c.mst_scales) check(s > 0.0, "mst_scales", "every scale > 0");
  check(c.seed >= 0, "seed", ">= 0");
  check(c.jitter_brightness >= 0.0, "jitter_brightness", ">= 0");
  check(c.jitter_contrast >= 0.0 && c.jitter_contrast < 1.0, "jitter_contrast", "[0, 1)");
  check(c.jitter_saturation >= 0.0 && c.jitter_saturation <= 1.0, "jitter_saturation",
        "[0, 1]");
  check(c.jitter_hue >= 0.0 && c.jitter_hue <= 180.0, "jitter_hue", "[0, 180]");
  check(c.grayscale_prob >= 0.0 && c.grayscale_prob <= 1.0, "grayscale_prob", "[0, 1]");
  check(c.blur_prob >= 0.0 && c.blur_prob <= 1.0, "blur_prob", "[0, 1]");
  check(c.num_source >= 1, "num_source", ">= 1");
  check(c.num_target_train >= 1, "num_target_train", ">= 1");
  check(c.num_target_val >= 0, "num_target_val", ">= 0");
  check(c.num_target2_val >= 0, "num_target2_val", ">= 0");
  check(c.source_noise >= 0.0, "source_noise", ">= 0");
  check(c.source_color_jitter >= 0.0, "source_color_jitter", ">= 0");
  for (const auto* list : {&c.target_gain, &c.target_bias, &c.target2_gain, &c.target2_bias}) {
    const char* name = list == &c.target_gain   ? "target_gain"
                       : list == &c.target_bias ? "target_bias"
                       : list == &c.target2_gain ? "target2_gain"
                                                 : "target2_bias";
    check(list->size() == 1 || list->size() == 3, name, "1 or 3 values");
  }
  for (double g : c.target_gain) check(g > 0.0, "target_gain", "every gain > 0");
  for (double g : c.target2_gain) check(g > 0.0, "target2_gain", "every gain > 0");
  check(c.target_texture >= 0.0, "target_texture", ">= 0");
  check(c.target2_texture >= 0.0, "target2_texture", ">= 0");
  check(c.longtail_rate >= 0.0 && c.longtail_rate <= 1.0, "longtail_rate", "[0, 1]");
  check(c.longtail_class >= 0 && c.longtail_class < c.num_classes, "longtail_class",
        "[0, num_classes)");
  check(c.longtail_max_fraction >= 0.0 && c.longtail_max_fraction <= 1.0,
        "longtail_max_fraction", "[0, 1]");
}

using Overrides = std::vector<std::pair<std::string, std::string>>;

/// Parse `key = value` lines ('#' starts a comment) on top of `base`.
inline TrainConfig parse_config_text(std::string_view text, TrainConfig base = {}) {
  std::stringstream ss{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected 'key = value'");
    set_config_value(base, detail::trim(std::string_view(line).substr(0, eq)),
                     detail::trim(std::string_view(line).substr(eq + 1)));
  }
  return base;
}

/// Load from file (empty path means defaults only), apply overrides, validate.
inline TrainConfig load_config(const std::string& path, const Overrides& overrides = {}) {
  TrainConfig cfg;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    cfg = parse_config_text(buf.str());
  }
  for (const auto& [k, v] : overrides) set_config_value(cfg, k, v);
  validate(cfg);
  return cfg;
}

/// Serialize every field; reloading the text yields an equal TrainConfig.
inline std::string serialize_config(const TrainConfig& cfg) {
  std::string out;
  for (const auto& f : detail::fields()) {
    out += std::string(f.name) + " = " + config_value_string(cfg, f.name) + "\n";
  }
  return out;
}

}  // namespace diga
