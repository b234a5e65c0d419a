#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "diga/config.hpp"
#include "diga/core.hpp"
#include "diga/image_ops.hpp"
#include "diga/png_io.hpp"
#include "diga/rng.hpp"

namespace diga {

// ---------------------------------------------------------------------------
// Scenes
// ---------------------------------------------------------------------------

/// One shape kind per foreground class; class 0 is the background.
enum class ShapeKind : int { rectangle = 1, circle = 2, triangle = 3, bar = 4, pole = 5 };

inline constexpr int kNumShapeKinds = 5;

/// Placed primitive in normalized image coordinates ([0,1] on both axes).
struct Primitive {
  int class_id = 1;
  ShapeKind kind = ShapeKind::rectangle;
  double cx = 0.5, cy = 0.5;  // centre
  double sx = 0.1, sy = 0.1;  // half extents (radius for circles)
  std::array<double, 3> tint{};  // per-instance colour offset in [-1, 1]

  bool operator==(const Primitive&) const = default;
};

struct Scene {
  std::vector<Primitive> primitives;
  std::uint64_t seed = 0;

  bool operator==(const Scene&) const = default;
};

/// Relative frequency of each shape kind. Poles and bars are the minority classes.
inline constexpr std::array<double, kNumShapeKinds> kShapeWeights = {0.28, 0.24, 0.20, 0.16,
                                                                     0.12};

/// Class id of a shape kind under a C-class label space; kinds beyond C-1 fold
/// back onto the available foreground classes.
inline int class_of(ShapeKind kind, int num_classes) {
  const int k = static_cast<int>(kind);
  return 1 + (k - 1) % std::max(1, num_classes - 1);
}

namespace detail {

inline ShapeKind sample_kind(Rng& rng) {
  const double u = uniform(rng, 0.0, 1.0);
  double acc = 0.0;
  for (int k = 0; k < kNumShapeKinds; ++k) {
    acc += kShapeWeights[static_cast<std::size_t>(k)];
    if (u < acc) return static_cast<ShapeKind>(k + 1);
  }
  return ShapeKind::pole;
}

inline Primitive sample_primitive(ShapeKind kind, int num_classes, Rng& rng) {
  Primitive p;
  p.kind = kind;
  p.class_id = class_of(kind, num_classes);
  switch (kind) {
    case ShapeKind::rectangle:
      p.sx = uniform(rng, 0.08, 0.2);
      p.sy = uniform(rng, 0.08, 0.2);
      break;
    case ShapeKind::circle:
      p.sx = p.sy = uniform(rng, 0.08, 0.18);
      break;
    case ShapeKind::triangle:
      p.sx = p.sy = uniform(rng, 0.1, 0.2);
      break;
    case ShapeKind::bar:
      p.sx = uniform(rng, 0.15, 0.3);
      p.sy = uniform(rng, 0.025, 0.045);
      break;
    case ShapeKind::pole:
      p.sx = uniform(rng, 0.018, 0.03);
      p.sy = uniform(rng, 0.15, 0.3);
      break;
  }
  p.cx = uniform(rng, 0.1, 0.9);
  p.cy = uniform(rng, 0.1, 0.9);
  for (auto& t : p.tint) t = uniform(rng, -1.0, 1.0);
  return p;
}

inline bool covers(const Primitive& p, double u, double v, double aspect) {
  const double du = u - p.cx, dv = v - p.cy;
  switch (p.kind) {
    case ShapeKind::rectangle:
    case ShapeKind::bar:
    case ShapeKind::pole:
      return std::abs(du) <= p.sx && std::abs(dv) <= p.sy;
    case ShapeKind::circle: {
      const double ddu = du * aspect;
      return ddu * ddu + dv * dv <= p.sy * p.sy;
    }
    case ShapeKind::triangle: {
      // Apex at top, base at bottom.
      const double t = (dv + p.sy) / (2.0 * p.sy);
      return t >= 0.0 && t <= 1.0 && std::abs(du) <= p.sx * t;
    }
  }
  return false;
}

}  // namespace detail

/// Deterministic scene: 3..6 primitives covering at least two shape kinds.
inline Scene generate_scene(std::uint64_t seed, const TrainConfig& cfg) {
  Rng rng(derive_seed(seed, Stream::scene));
  Scene scene;
  scene.seed = seed;
  const int n = uniform_int(rng, 3, 6);
  for (int i = 0; i < n; ++i)
    scene.primitives.push_back(
        detail::sample_primitive(detail::sample_kind(rng), cfg.num_classes, rng));
  // Force a second kind when every draw agreed.
  const auto first = scene.primitives.front().kind;
  const bool uniform_kind = std::all_of(scene.primitives.begin(), scene.primitives.end(),
                                        [&](const Primitive& p) { return p.kind == first; });
  if (uniform_kind) {
    const int k = (static_cast<int>(first) % kNumShapeKinds) + 1;
    scene.primitives.back() =
        detail::sample_primitive(static_cast<ShapeKind>(k), cfg.num_classes, rng);
  }
  return scene;
}

/// Painter's-order rasterization: later primitives overwrite earlier ones.
inline LabelMap rasterize(const Scene& scene, int height, int width) {
  LabelMap labels(height, width, 0);
  const double aspect = static_cast<double>(width) / height;
  for (int y = 0; y < height; ++y) {
    const double v = (y + 0.5) / height;
    for (int x = 0; x < width; ++x) {
      const double u = (x + 0.5) / width;
      for (const auto& p : scene.primitives)
        if (detail::covers(p, u, v, aspect)) labels.at(y, x) = p.class_id;
    }
  }
  return labels;
}

/// Index of the primitive visible at each pixel (-1 for background).
inline std::vector<int> rasterize_instances(const Scene& scene, int height, int width) {
  std::vector<int> inst(static_cast<std::size_t>(height) * width, -1);
  const double aspect = static_cast<double>(width) / height;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double u = (x + 0.5) / width, v = (y + 0.5) / height;
      for (std::size_t i = 0; i < scene.primitives.size(); ++i)
        if (detail::covers(scene.primitives[i], u, v, aspect))
          inst[static_cast<std::size_t>(y) * width + x] = static_cast<int>(i);
    }
  return inst;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

enum class Domain { source, target, target2 };

inline const char* domain_name(Domain d) {
  switch (d) {
    case Domain::source: return "source";
    case Domain::target: return "target";
    case Domain::target2: return "target2";
  }
  return "?";
}

/// Base class colours shared by all domains before the domain shift.
inline std::array<double, 3> palette_color(int class_id) {
  static constexpr std::array<std::array<double, 3>, 6> kPalette = {{
      {0.38, 0.42, 0.36},
      {0.85, 0.28, 0.22},
      {0.22, 0.68, 0.28},
      {0.24, 0.32, 0.84},
      {0.86, 0.80, 0.24},
      {0.74, 0.32, 0.80},
  }};
  if (class_id >= 0 && class_id < static_cast<int>(kPalette.size()))
    return kPalette[static_cast<std::size_t>(class_id)];
  // Extra classes get a deterministic colour on the hue circle.
  return mat_vec(hue_rotation(37.0 * class_id), {0.8, 0.3, 0.3});
}

/// Global colour shift and texture parameters of a domain: a hue rotation
/// followed by a per-channel colour cast.
struct DomainShift {
  double hue_degrees = 0.0;
  std::array<double, 3> gain{1.0, 1.0, 1.0};
  std::array<double, 3> bias{0.0, 0.0, 0.0};
  double texture = 0.0;

  [[nodiscard]] std::array<double, 3> apply_color(const std::array<double, 3>& rgb) const {
    auto r = mat_vec(hue_rotation(hue_degrees), rgb);
    for (std::size_t c = 0; c < 3; ++c) r[c] = gain[c] * r[c] + bias[c];
    return r;
  }
};

/// One value broadcasts to all channels; three are taken as RGB.
inline std::array<double, 3> per_channel(const std::vector<double>& v) {
  if (v.size() == 1) return {v[0], v[0], v[0]};
  if (v.size() == 3) return {v[0], v[1], v[2]};
  throw ValidationError("per-channel value needs 1 or 3 entries, got " + std::to_string(v.size()));
}

inline DomainShift domain_shift(Domain d, const TrainConfig& cfg) {
  switch (d) {
    case Domain::source: return {};
    case Domain::target:
      return {cfg.target_hue, per_channel(cfg.target_gain), per_channel(cfg.target_bias),
              cfg.target_texture};
    case Domain::target2:
      return {cfg.target2_hue, per_channel(cfg.target2_gain), per_channel(cfg.target2_bias),
              cfg.target2_texture};
  }
  return {};
}

struct Sample {
  Image image;
  std::optional<LabelMap> label;
  Domain domain = Domain::source;
  /// 1 where a long-tail structure was injected; only set by inject_longtail_labels.
  std::optional<LabelMap> longtail_mask;
};

/// Noise-free colour of every pixel before the domain's global shift.
inline Image render_clean(const Scene& scene, const TrainConfig& cfg) {
  const int h = cfg.image_height, w = cfg.image_width;
  const auto inst = rasterize_instances(scene, h, w);
  Image image(3, h, w);
  for (std::size_t i = 0; i < inst.size(); ++i) {
    std::array<double, 3> rgb = palette_color(0);
    if (inst[i] >= 0) {
      const auto& p = scene.primitives[static_cast<std::size_t>(inst[i])];
      rgb = palette_color(p.class_id);
      for (int c = 0; c < 3; ++c) rgb[static_cast<std::size_t>(c)] += cfg.source_color_jitter * p.tint[static_cast<std::size_t>(c)];
    }
    set_pixel(image, i, rgb);
  }
  return image;
}

/// Render a scene into one domain. The label map depends only on the scene.
inline Sample render_domain(const Scene& scene, Domain domain, const TrainConfig& cfg) {
  Rng rng(derive_seed(scene.seed, Stream::render, static_cast<std::uint64_t>(domain)));
  const DomainShift shift = domain_shift(domain, cfg);
  Image image = render_clean(scene, cfg);
  const int h = cfg.image_height, w = cfg.image_width;
  if (domain != Domain::source) {
    for (std::size_t i = 0; i < image.plane(); ++i)
      set_pixel(image, i, shift.apply_color(pixel(image, i)));
    // Low-frequency texture: product of two random sinusoids per channel.
    std::array<double, 3> fx{}, fy{}, px{}, py{};
    for (int c = 0; c < 3; ++c) {
      fx[c] = uniform(rng, 1.0, 4.0);
      fy[c] = uniform(rng, 1.0, 4.0);
      px[c] = uniform(rng, 0.0, 1.0);
      py[c] = uniform(rng, 0.0, 1.0);
    }
    constexpr double two_pi = 6.283185307179586;
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double u = (x + 0.5) / w, v = (y + 0.5) / h;
          image.at(c, y, x) += static_cast<float>(
              shift.texture * std::sin(two_pi * (fx[c] * u + px[c])) *
              std::sin(two_pi * (fy[c] * v + py[c])));
        }
  }
  for (auto& v : image.data)
    v += static_cast<float>(uniform(rng, -cfg.source_noise, cfg.source_noise));
  clamp01(image);
  return {std::move(image), rasterize(scene, h, w), domain, std::nullopt};
}

/// Thin 1-pixel structures of `cfg.longtail_class` painted over background
/// pixels: present in the label map, nearly invisible in the image.
inline Sample inject_longtail_labels(Sample sample, std::uint64_t seed, const TrainConfig& cfg) {
  if (!sample.label) throw ValidationError("inject_longtail_labels: sample has no label map");
  Rng rng(derive_seed(seed, Stream::longtail));
  if (cfg.longtail_rate <= 0.0 || !bernoulli(rng, cfg.longtail_rate)) return sample;

  auto& labels = *sample.label;
  const int h = labels.height, w = labels.width;
  const auto cap = static_cast<int>(std::floor(cfg.longtail_max_fraction * h * w));
  if (cap <= 0) return sample;
  LabelMap mask(h, w, 0);
  int injected = 0;
  constexpr float kContrast = 0.025f;
  const int segments = uniform_int(rng, 1, 3);
  for (int s = 0; s < segments && injected < cap; ++s) {
    const int len = uniform_int(rng, 6, std::max(6, std::min(h, w) / 3));
    const int dir = uniform_int(rng, 0, 2);  // horizontal, vertical, diagonal
    int y = uniform_int(rng, 0, h - 1), x = uniform_int(rng, 0, w - 1);
    const int dy = dir == 0 ? 0 : 1, dx = dir == 1 ? 0 : 1;
    for (int i = 0; i < len && injected < cap; ++i, y += dy, x += dx) {
      if (y >= h || x >= w) break;
      if (labels.at(y, x) != 0 || mask.at(y, x)) continue;
      labels.at(y, x) = cfg.longtail_class;
      mask.at(y, x) = 1;
      for (int c = 0; c < 3; ++c)
        sample.image.at(c, y, x) = std::clamp(sample.image.at(c, y, x) + kContrast, 0.0f, 1.0f);
      ++injected;
    }
  }
  sample.longtail_mask = std::move(mask);
  return sample;
}

// ---------------------------------------------------------------------------
// On-disk datasets
// ---------------------------------------------------------------------------

/// Why labels are being read; training code may never read target labels.
enum class LabelAccess { training, evaluation };

inline const std::vector<std::string>& split_names() {
  static const std::vector<std::string> names = {"source", "target_train", "target_val",
                                                 "target2_val"};
  return names;
}

inline std::string split_directory(const std::string& split) {
  if (split == "source") return "source";
  if (split == "target_train" || split == "target_val") return "target";
  if (split == "target2_val") return "target2";
  throw IoError("unknown split '" + split + "'");
}

inline bool is_target_split(const std::string& split) { return split != "source"; }

struct DatasetIndex {
  std::filesystem::path root;
  std::map<std::string, std::vector<std::string>> splits;

  [[nodiscard]] const std::vector<std::string>& ids(const std::string& split) const {
    const auto it = splits.find(split);
    if (it == splits.end()) throw IoError("dataset has no split '" + split + "'");
    return it->second;
  }

  [[nodiscard]] std::filesystem::path image_path(const std::string& split,
                                                 const std::string& id) const {
    return root / split_directory(split) / "images" / (id + ".png");
  }
  [[nodiscard]] std::filesystem::path label_path(const std::string& split,
                                                 const std::string& id) const {
    return root / split_directory(split) / "labels" / (id + ".png");
  }
  [[nodiscard]] std::filesystem::path longtail_path(const std::string& id) const {
    return root / "source" / "longtail" / (id + ".png");
  }

  [[nodiscard]] Image load_image(const std::string& split, const std::string& id) const {
    return png::read_image(image_path(split, id));
  }

  /// Reads a label map and checks every id against the label space.
  [[nodiscard]] LabelMap load_label(const std::string& split, const std::string& id,
                                    LabelAccess access, const TrainConfig& cfg) const {
    if (access == LabelAccess::training && is_target_split(split))
      throw ValidationError("target labels of split '" + split +
                            "' are withheld from training code paths");
    const auto path = label_path(split, id);
    LabelMap labels = png::read_labels(path);
    for (auto v : labels.data)
      if ((v < 0 || v >= cfg.num_classes) && v != cfg.ignore_id)
        throw IoError("label id " + std::to_string(v) + " out of range in '" + path.string() +
                      "'");
    return labels;
  }

  [[nodiscard]] std::vector<Image> load_images(const std::string& split) const {
    std::vector<Image> out;
    for (const auto& id : ids(split)) out.push_back(load_image(split, id));
    return out;
  }

  [[nodiscard]] std::vector<LabelMap> load_labels(const std::string& split, LabelAccess access,
                                                  const TrainConfig& cfg) const {
    std::vector<LabelMap> out;
    for (const auto& id : ids(split)) out.push_back(load_label(split, id, access, cfg));
    return out;
  }
};

struct NamedSample {
  std::string split;
  std::string id;
  Sample sample;
};

/// Writes images, labels, long-tail masks, and `index.txt` under `root`.
inline DatasetIndex write_dataset(const std::vector<NamedSample>& samples,
                                  const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  DatasetIndex index;
  index.root = root;
  std::error_code ec;
  for (const char* d : {"source", "target", "target2"})
    for (const char* sub : {"images", "labels"}) {
      fs::create_directories(root / d / sub, ec);
      if (ec) throw IoError("cannot create '" + (root / d / sub).string() + "': " + ec.message());
    }
  std::string listing;
  for (const auto& s : samples) {
    png::write_image(index.image_path(s.split, s.id), s.sample.image);
    if (s.sample.label) png::write_labels(index.label_path(s.split, s.id), *s.sample.label);
    if (s.sample.longtail_mask) {
      fs::create_directories(root / "source" / "longtail", ec);
      png::write_labels(index.longtail_path(s.id), *s.sample.longtail_mask);
    }
    index.splits[s.split].push_back(s.id);
    listing += s.split + " " + s.id + "\n";
  }
  const auto tmp = root / "index.txt.tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    out << listing;
  }
  fs::rename(tmp, root / "index.txt", ec);
  if (ec) throw IoError("cannot finalize index: " + ec.message());
  return index;
}

/// Parses `index.txt` and checks every listed file exists.
inline DatasetIndex load_dataset(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  DatasetIndex index;
  index.root = root;
  const auto index_file = root / "index.txt";
  std::ifstream in(index_file);
  if (!in) throw IoError("missing dataset index '" + index_file.string() + "'");
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string split, id, extra;
    if (!(ls >> split >> id) || (ls >> extra))
      throw IoError("malformed line " + std::to_string(lineno) + " in '" +
                    index_file.string() + "'");
    const auto& names = split_names();
    if (std::find(names.begin(), names.end(), split) == names.end())
      throw IoError("unknown split '" + split + "' in '" + index_file.string() + "'");
    if (!fs::exists(index.image_path(split, id)))
      throw IoError("missing image file '" + index.image_path(split, id).string() + "'");
    if (!fs::exists(index.label_path(split, id)))
      throw IoError("missing label file '" + index.label_path(split, id).string() + "'");
    index.splits[split].push_back(id);
  }
  return index;
}

inline std::string sample_id(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%05d", prefix, i);
  return buf;
}

/// Generates every split from one master seed. Source samples receive
/// long-tail injections; target splits never do.
inline std::vector<NamedSample> generate_benchmark(std::uint64_t master_seed,
                                                   const TrainConfig& cfg) {
  std::vector<NamedSample> out;
  auto add = [&](const std::string& split, const char* prefix, int count, Domain dom,
                 std::uint64_t split_tag) {
    for (int i = 0; i < count; ++i) {
      const auto seed = derive_seed(master_seed, {split_tag, static_cast<std::uint64_t>(i)});
      Sample s = render_domain(generate_scene(seed, cfg), dom, cfg);
      if (dom == Domain::source) s = inject_longtail_labels(std::move(s), seed, cfg);
      out.push_back({split, sample_id(prefix, i), std::move(s)});
    }
  };
  add("source", "s", cfg.num_source, Domain::source, 11);
  add("target_train", "t", cfg.num_target_train, Domain::target, 12);
  add("target_val", "v", cfg.num_target_val, Domain::target, 13);
  add("target2_val", "w", cfg.num_target2_val, Domain::target2, 14);
  return out;
}

}  // namespace diga
