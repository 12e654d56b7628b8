#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "pfseg/classes.hpp"
#include "pfseg/image_io.hpp"
#include "pfseg/models.hpp"
#include "pfseg/ops.hpp"
#include "pfseg/tensor.hpp"

namespace pfseg {

struct FrameMeta {
  std::string source;
  std::string id;
  std::int64_t frame_index = 0;
  std::size_t prior_offset = 0;
  // Crop window origin in the source frame.
  std::size_t crop_row = 0, crop_col = 0;
  // Extent of real content before void/zero padding; equals the frame size
  // when nothing was padded.
  std::size_t valid_height = 0, valid_width = 0;
};

/// Prior frame, current frame and the current frame's label map.
struct LabeledFramePair {
  Tensor<float> prior;    // 3 x H x W in [0, 1]
  Tensor<float> current;  // 3 x H x W in [0, 1]
  IntTensor labels;       // H x W, class ids or kVoidLabel
  FrameMeta meta;

  std::size_t height() const { return labels.dim(0); }
  std::size_t width() const { return labels.dim(1); }

  void validate(std::size_t num_classes) const {
    if (labels.rank() != 2) throw ShapeError("frame pair: labels must be H x W");
    const Shape img{3, height(), width()};
    if (prior.shape() != img || current.shape() != img)
      throw ShapeError("frame pair: prior " + shape_string(prior.shape()) + ", current " +
                       shape_string(current.shape()) + ", labels " + shape_string(labels.shape()));
    for (std::int32_t l : labels.data())
      if (l != kVoidLabel && (l < 0 || static_cast<std::size_t>(l) >= num_classes))
        throw DataError("frame pair " + meta.id + ": label " + std::to_string(l) + " outside class table");
  }
};

/// Random-access collection of frame pairs.
class FrameSource {
 public:
  virtual ~FrameSource() = default;
  virtual std::size_t size() const = 0;
  virtual LabeledFramePair get(std::size_t i) const = 0;
};

class MemoryFrames final : public FrameSource {
 public:
  MemoryFrames() = default;
  explicit MemoryFrames(std::vector<LabeledFramePair> items) : items_(std::move(items)) {}
  std::size_t size() const override { return items_.size(); }
  LabeledFramePair get(std::size_t i) const override { return items_.at(i); }
  const std::vector<LabeledFramePair>& items() const { return items_; }

 private:
  std::vector<LabeledFramePair> items_;
};

// ---------------------------------------------------------------------------
// Synthetic sequential scenes

/// Object rendered on top of the background. Position is the top-left corner
/// at time 0; it advances by (velocity_x, velocity_y) pixels per frame.
struct Sprite {
  std::int32_t cls = 0;
  std::int64_t height = 1, width = 1;
  std::int64_t row = 0, col = 0;
  std::int64_t velocity_x = 0, velocity_y = 0;
  std::array<float, 3> color{0.5f, 0.5f, 0.5f};
  std::uint64_t texture_seed = 0;

  std::int64_t row_at(std::int64_t t) const { return row + velocity_y * t; }
  std::int64_t col_at(std::int64_t t) const { return col + velocity_x * t; }
};

/// Horizontal band layout plus sprites. The middle band alternates building
/// and tree segments.
struct SceneScript {
  std::size_t height = 64, width = 64;
  std::size_t sky_end = 12, facade_end = 30, sidewalk_end = 40;  // road below
  std::vector<std::pair<std::size_t, std::int32_t>> facade_segments;  // (end column, class)
  std::map<std::int32_t, std::array<float, 3>> band_colors;
  std::uint64_t texture_seed = 0;
  std::vector<Sprite> sprites;  // painted in order; later sprites occlude earlier ones
};

struct SyntheticConfig {
  std::uint64_t seed = 0;
  std::size_t scenes = 8;
  std::size_t height = 64, width = 64;
  std::size_t prior_offset = 3;
  double brightness_jitter = 0.03;
  // Moving objects per scene, and static objects drawn from the same
  // appearance families (pole/pedestrian, fence/car, sign/bicyclist).
  std::size_t min_movers = 1, max_movers = 3;
  std::size_t min_fixtures = 3, max_fixtures = 5;
  std::size_t first_scene = 0;
  // Labelled frames per scene. Frame k has its prior at time k * frame_stride
  // and its current frame prior_offset later.
  std::size_t frames_per_scene = 1;
  std::size_t frame_stride = 5;
};

namespace detail {

class SplitMix {
 public:
  explicit SplitMix(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next() { return splitmix64(state_); }
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  std::int64_t range(std::int64_t lo, std::int64_t hi) {  // inclusive
    return lo + static_cast<std::int64_t>(next() % static_cast<std::uint64_t>(hi - lo + 1));
  }

 private:
  std::uint64_t state_;
};

/// Stateless texture noise in [-1, 1].
inline float texture_noise(std::uint64_t seed, std::int64_t y, std::int64_t x) {
  std::uint64_t s = seed ^ (static_cast<std::uint64_t>(y) * 0x9e3779b97f4a7c15ull) ^
                    (static_cast<std::uint64_t>(x) * 0xc2b2ae3d27d4eb4full);
  return static_cast<float>(static_cast<double>(splitmix64(s) >> 11) * 0x1.0p-52 - 1.0);
}

inline std::array<float, 3> jitter_color(SplitMix& rng, std::array<float, 3> base, double amount) {
  for (auto& c : base) c = static_cast<float>(std::clamp(c + (rng.uniform() * 2 - 1) * amount, 0.0, 1.0));
  return base;
}

}  // namespace detail

/// Deterministic scene script for one synthetic scene.
inline SceneScript make_scene_script(const SyntheticConfig& cfg, std::size_t scene_index, const ClassTable& table) {
  if (cfg.height % kSpatialMultiple || cfg.width % kSpatialMultiple)
    throw std::invalid_argument("synthetic: frame extents must be multiples of 16");
  if (cfg.prior_offset < 1) throw std::invalid_argument("synthetic: prior offset must be >= 1");
  if (cfg.frames_per_scene < 1) throw std::invalid_argument("synthetic: frames_per_scene must be >= 1");
  if (cfg.min_movers > cfg.max_movers || cfg.min_fixtures > cfg.max_fixtures)
    throw std::invalid_argument("synthetic: min object count exceeds max");
  detail::SplitMix rng(cfg.seed * 0x100000001b3ull ^ detail::fnv1a("scene:" + std::to_string(scene_index)));
  SceneScript s;
  s.height = cfg.height;
  s.width = cfg.width;
  s.texture_seed = rng.next();
  const auto H = static_cast<std::int64_t>(cfg.height), W = static_cast<std::int64_t>(cfg.width);
  const double scale = static_cast<double>(std::min(cfg.height, cfg.width)) / 64.0;
  auto sz = [scale](double v) { return std::max<std::int64_t>(1, std::llround(v * scale)); };

  s.sky_end = static_cast<std::size_t>(H * (15 + rng.range(0, 8)) / 100);
  s.facade_end = s.sky_end + static_cast<std::size_t>(H * (22 + rng.range(0, 10)) / 100);
  s.sidewalk_end = s.facade_end + static_cast<std::size_t>(H * (12 + rng.range(0, 6)) / 100);

  const auto building = static_cast<std::int32_t>(table.index_of("building"));
  const auto tree = static_cast<std::int32_t>(table.index_of("tree"));
  for (std::size_t c = 0; c < cfg.width;) {
    const std::size_t seg = static_cast<std::size_t>(sz(static_cast<double>(rng.range(10, 26))));
    c = std::min(cfg.width, c + seg);
    s.facade_segments.emplace_back(c, rng.uniform() < 0.6 ? building : tree);
  }
  s.band_colors[static_cast<std::int32_t>(table.index_of("sky"))] = detail::jitter_color(rng, {0.55f, 0.70f, 0.90f}, 0.06);
  s.band_colors[building] = detail::jitter_color(rng, {0.55f, 0.35f, 0.30f}, 0.10);
  s.band_colors[tree] = detail::jitter_color(rng, {0.20f, 0.50f, 0.20f}, 0.06);
  s.band_colors[static_cast<std::int32_t>(table.index_of("sidewalk"))] =
      detail::jitter_color(rng, {0.70f, 0.68f, 0.62f}, 0.05);
  s.band_colors[static_cast<std::int32_t>(table.index_of("road"))] =
      detail::jitter_color(rng, {0.30f, 0.30f, 0.32f}, 0.05);

  // Appearance family: class pair, size ranges and speeds (at 64 px), ground
  // line. Over the default 3-frame offset every mover travels more than 16 px,
  // one cell of the bottleneck grid.
  struct Family {
    const char* fixture;
    const char* mover;
    int h_lo, h_hi, w_lo, w_hi;
    int speed_lo, speed_hi;
    bool on_road;
  };
  static constexpr std::array<Family, 3> families{{
      {"pole", "pedestrian", 12, 20, 3, 5, 6, 7, false},
      {"fence", "car", 7, 10, 10, 16, 7, 9, true},
      {"sign", "bicyclist", 9, 13, 6, 9, 6, 8, true},
  }};

  const auto offset = static_cast<std::int64_t>(cfg.prior_offset);
  auto place = [&](bool moving) {
    const Family& fam = families[static_cast<std::size_t>(rng.range(0, 2))];
    Sprite sp;
    sp.cls = static_cast<std::int32_t>(table.index_of(moving ? fam.mover : fam.fixture));
    sp.height = sz(static_cast<double>(rng.range(fam.h_lo, fam.h_hi)));
    sp.width = sz(static_cast<double>(rng.range(fam.w_lo, fam.w_hi)));
    if (sp.height > H || sp.width > W) throw DataError("synthetic: sprite larger than frame");
    // Ground contact line: sidewalk for slender objects, the near half of the road otherwise.
    const auto ground_lo = static_cast<std::int64_t>(fam.on_road ? s.sidewalk_end + 2 : s.facade_end + 2);
    const auto ground_hi = static_cast<std::int64_t>(fam.on_road ? (s.sidewalk_end + H) / 2 + 4 : s.sidewalk_end);
    const std::int64_t bottom = std::clamp(rng.range(ground_lo, std::max(ground_lo, ground_hi)), sp.height, H);
    const std::int64_t cur_row = bottom - sp.height;
    const std::int64_t cur_col = rng.range(0, W - sp.width);
    if (moving) {
      const std::int64_t speed = sz(static_cast<double>(rng.range(fam.speed_lo, fam.speed_hi)));
      sp.velocity_x = rng.uniform() < 0.5 ? -speed : speed;
    }
    // Stored at time 0 (the prior frame); the current frame is time `offset`.
    sp.row = cur_row - sp.velocity_y * offset;
    sp.col = cur_col - sp.velocity_x * offset;
    static constexpr std::array<std::array<float, 3>, 6> hues{{{0.85f, 0.15f, 0.15f},
                                                               {0.15f, 0.25f, 0.85f},
                                                               {0.90f, 0.80f, 0.10f},
                                                               {0.95f, 0.95f, 0.95f},
                                                               {0.10f, 0.10f, 0.10f},
                                                               {0.20f, 0.75f, 0.75f}}};
    sp.color = detail::jitter_color(rng, hues[static_cast<std::size_t>(rng.range(0, 5))], 0.08);
    sp.texture_seed = rng.next();
    return sp;
  };
  const auto fixtures = static_cast<std::size_t>(
      rng.range(static_cast<std::int64_t>(cfg.min_fixtures), static_cast<std::int64_t>(cfg.max_fixtures)));
  const auto movers = static_cast<std::size_t>(
      rng.range(static_cast<std::int64_t>(cfg.min_movers), static_cast<std::int64_t>(cfg.max_movers)));
  for (std::size_t i = 0; i < fixtures; ++i) s.sprites.push_back(place(false));
  for (std::size_t i = 0; i < movers; ++i) s.sprites.push_back(place(true));
  // Paint far objects (higher ground line) first.
  std::stable_sort(s.sprites.begin(), s.sprites.end(), [](const Sprite& a, const Sprite& b) {
    return a.row + a.height < b.row + b.height;
  });
  return s;
}

namespace detail {

inline std::int32_t band_class(const SceneScript& s, const ClassTable& table, std::size_t y, std::size_t x) {
  if (y < s.sky_end) return static_cast<std::int32_t>(table.index_of("sky"));
  if (y < s.facade_end) {
    for (const auto& [end, cls] : s.facade_segments)
      if (x < end) return cls;
    return s.facade_segments.back().second;
  }
  if (y < s.sidewalk_end) return static_cast<std::int32_t>(table.index_of("sidewalk"));
  return static_cast<std::int32_t>(table.index_of("road"));
}

inline std::array<float, 3> band_pixel(const SceneScript& s, const ClassTable& table, std::int32_t cls, std::size_t y,
                                       std::size_t x) {
  std::array<float, 3> c = s.band_colors.at(cls);
  const float n = texture_noise(s.texture_seed, static_cast<std::int64_t>(y), static_cast<std::int64_t>(x));
  const std::string& name = table.names[static_cast<std::size_t>(cls)];
  float shade = 1.0f + 0.04f * n;
  if (name == "sky") {
    shade = 1.0f + 0.15f * static_cast<float>(y) / static_cast<float>(std::max<std::size_t>(1, s.sky_end));
  } else if (name == "building") {
    if ((y - s.sky_end) % 6 >= 2 && x % 5 < 2) shade = 0.55f;  // windows
  } else if (name == "tree") {
    shade = 1.0f + 0.25f * n;
  } else if (name == "sidewalk") {
    if ((y - s.facade_end) % 5 == 0 || x % 8 == 0) shade = 0.85f;
  } else if (name == "road") {
    const std::size_t lane = (s.sidewalk_end + s.height) / 2 + 2;
    if ((y == lane || y == lane + 1) && x % 10 < 5) return {0.95f, 0.95f, 0.85f};
    shade = 1.0f + 0.08f * n;
  }
  for (auto& v : c) v = std::clamp(v * shade, 0.0f, 1.0f);
  return c;
}

}  // namespace detail

/// Horizontal position of a sprite at time t. Moving sprites wrap around:
/// after leaving one edge they re-enter from the other, so a scene stays
/// populated over long sequences. The position at time 0 is never wrapped
/// when the sprite starts inside the frame.
inline std::int64_t wrapped_col(const Sprite& sp, std::int64_t frame_width, std::int64_t t) {
  const std::int64_t c = sp.col_at(t);
  if (sp.velocity_x == 0) return c;
  const std::int64_t period = frame_width + sp.width;
  return ((c + sp.width) % period + period) % period - sp.width;
}

/// Renders one frame of a script at time t with a global brightness factor.
/// Returns the image and its exact label map.
inline std::pair<Tensor<float>, IntTensor> render_frame(const SceneScript& s, const ClassTable& table, std::int64_t t,
                                                        float brightness) {
  const std::size_t H = s.height, W = s.width, plane = H * W;
  Tensor<float> img({3, H, W});
  IntTensor labels({H, W});
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const std::int32_t cls = detail::band_class(s, table, y, x);
      const auto c = detail::band_pixel(s, table, cls, y, x);
      for (std::size_t ch = 0; ch < 3; ++ch) img[ch * plane + y * W + x] = c[ch];
      labels[y * W + x] = cls;
    }
  for (const Sprite& sp : s.sprites) {
    if (sp.height > static_cast<std::int64_t>(H) || sp.width > static_cast<std::int64_t>(W))
      throw DataError("synthetic: sprite larger than frame");
    const std::int64_t r0 = sp.row_at(t), c0 = wrapped_col(sp, static_cast<std::int64_t>(W), t);
    for (std::int64_t dy = 0; dy < sp.height; ++dy)
      for (std::int64_t dx = 0; dx < sp.width; ++dx) {
        const std::int64_t y = r0 + dy, x = c0 + dx;
        if (y < 0 || x < 0 || y >= static_cast<std::int64_t>(H) || x >= static_cast<std::int64_t>(W)) continue;
        // Texture is anchored to the sprite, so it travels with it.
        const float n = detail::texture_noise(sp.texture_seed, dy, dx);
        const bool edge = dy == 0 || dx == 0 || dy == sp.height - 1 || dx == sp.width - 1;
        const float shade = (edge ? 0.7f : 1.0f) + 0.06f * n;
        const auto idx = static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x);
        for (std::size_t ch = 0; ch < 3; ++ch) img[ch * plane + idx] = std::clamp(sp.color[ch] * shade, 0.0f, 1.0f);
        labels[idx] = sp.cls;
      }
  }
  if (brightness != 1.0f)
    for (auto& v : img.data()) v = std::clamp(v * brightness, 0.0f, 1.0f);
  return {std::move(img), std::move(labels)};
}

/// Prior at time `start`, current at `start + offset`; labels belong to the
/// current frame.
inline LabeledFramePair render_scene(const SceneScript& s, const ClassTable& table, std::size_t offset,
                                     float prior_brightness = 1.0f, float current_brightness = 1.0f,
                                     std::int64_t start = 0) {
  auto [prior, unused] = render_frame(s, table, start, prior_brightness);
  auto [current, labels] = render_frame(s, table, start + static_cast<std::int64_t>(offset), current_brightness);
  LabeledFramePair p{std::move(prior), std::move(current), std::move(labels), {}};
  p.meta.frame_index = start + static_cast<std::int64_t>(offset);
  p.meta.prior_offset = offset;
  p.meta.valid_height = s.height;
  p.meta.valid_width = s.width;
  return p;
}

inline std::vector<LabeledFramePair> generate_synthetic(const SyntheticConfig& cfg,
                                                        const ClassTable& table = default_class_table()) {
  std::vector<LabeledFramePair> out;
  out.reserve(cfg.scenes * cfg.frames_per_scene);
  for (std::size_t i = 0; i < cfg.scenes; ++i) {
    const std::size_t scene = cfg.first_scene + i;
    const SceneScript script = make_scene_script(cfg, scene, table);
    detail::SplitMix rng(cfg.seed ^ detail::fnv1a("jitter:" + std::to_string(scene)));
    auto factor = [&] { return static_cast<float>(1.0 + (rng.uniform() * 2 - 1) * cfg.brightness_jitter); };
    for (std::size_t k = 0; k < cfg.frames_per_scene; ++k) {
      const float fp = factor(), fc = factor();
      LabeledFramePair p = render_scene(script, table, cfg.prior_offset, fp, fc,
                                        static_cast<std::int64_t>(k * cfg.frame_stride));
      char id[32];
      if (cfg.frames_per_scene == 1)
        std::snprintf(id, sizeof id, "%06zu", scene);
      else
        std::snprintf(id, sizeof id, "%06zu_%02zu", scene, k);
      p.meta.id = id;
      p.meta.source = "synthetic:seed=" + std::to_string(cfg.seed);
      out.push_back(std::move(p));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Crops and padding

/// Same window applied to prior, current and labels.
inline LabeledFramePair crop_pair(const LabeledFramePair& p, std::size_t row, std::size_t col, std::size_t h,
                                  std::size_t w) {
  if (row + h > p.height() || col + w > p.width() || h == 0 || w == 0)
    throw std::invalid_argument("crop " + std::to_string(h) + "x" + std::to_string(w) + " at (" +
                                std::to_string(row) + "," + std::to_string(col) + ") exceeds frame " +
                                std::to_string(p.height()) + "x" + std::to_string(p.width()));
  const std::size_t W = p.width(), plane = p.height() * W;
  LabeledFramePair out{Tensor<float>({3, h, w}), Tensor<float>({3, h, w}), IntTensor({h, w}), p.meta};
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t src = (row + y) * W + col + x, dst = y * w + x;
      out.labels[dst] = p.labels[src];
      for (std::size_t c = 0; c < 3; ++c) {
        out.prior[c * h * w + dst] = p.prior[c * plane + src];
        out.current[c * h * w + dst] = p.current[c * plane + src];
      }
    }
  out.meta.crop_row = p.meta.crop_row + row;
  out.meta.crop_col = p.meta.crop_col + col;
  out.meta.valid_height = h;
  out.meta.valid_width = w;
  return out;
}

/// Pads at the bottom/right: zeros for images, void for labels.
inline LabeledFramePair pad_pair(const LabeledFramePair& p, std::size_t h, std::size_t w) {
  if (h < p.height() || w < p.width()) throw std::invalid_argument("pad target smaller than frame");
  if (h == p.height() && w == p.width()) return p;
  const std::size_t H = p.height(), W = p.width();
  LabeledFramePair out{Tensor<float>({3, h, w}, 0.0f), Tensor<float>({3, h, w}, 0.0f), IntTensor({h, w}, kVoidLabel),
                       p.meta};
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      out.labels[y * w + x] = p.labels[y * W + x];
      for (std::size_t c = 0; c < 3; ++c) {
        out.prior[(c * h + y) * w + x] = p.prior[(c * H + y) * W + x];
        out.current[(c * h + y) * w + x] = p.current[(c * H + y) * W + x];
      }
    }
  out.meta.valid_height = std::min(p.meta.valid_height ? p.meta.valid_height : H, H);
  out.meta.valid_width = std::min(p.meta.valid_width ? p.meta.valid_width : W, W);
  return out;
}

inline std::size_t round_up(std::size_t v, std::size_t m) { return (v + m - 1) / m * m; }

inline LabeledFramePair pad_to_multiple(const LabeledFramePair& p, std::size_t m = kSpatialMultiple) {
  return pad_pair(p, round_up(p.height(), m), round_up(p.width(), m));
}

/// Uniformly drawn crop window, then padded up to a multiple of 16
/// (227 x 227 becomes 240 x 240).
inline LabeledFramePair random_crop_pair(const LabeledFramePair& p, std::size_t crop_h, std::size_t crop_w,
                                         std::uint64_t seed) {
  if (crop_h > p.height() || crop_w > p.width())
    throw std::invalid_argument("crop " + std::to_string(crop_h) + "x" + std::to_string(crop_w) +
                                " larger than frame " + std::to_string(p.height()) + "x" + std::to_string(p.width()));
  detail::SplitMix rng(seed);
  const auto row = static_cast<std::size_t>(rng.range(0, static_cast<std::int64_t>(p.height() - crop_h)));
  const auto col = static_cast<std::size_t>(rng.range(0, static_cast<std::int64_t>(p.width() - crop_w)));
  return pad_to_multiple(crop_pair(p, row, col, crop_h, crop_w));
}

// ---------------------------------------------------------------------------
// Directory export: <id>_prior.ppm, <id>_current.ppm, <id>_labels.ppm and
// manifest.txt with one "id prior current labels offset" line per item.

inline void export_dataset(const std::filesystem::path& dir, const std::vector<LabeledFramePair>& items,
                           const ClassTable& table) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  std::ofstream manifest(dir / "manifest.txt");
  if (!manifest) throw DataError("cannot write " + (dir / "manifest.txt").string());
  for (const auto& it : items) {
    const std::string prior = it.meta.id + "_prior.ppm", current = it.meta.id + "_current.ppm",
                      labels = it.meta.id + "_labels.ppm";
    write_ppm(dir / prior, tensor_to_image(it.prior));
    write_ppm(dir / current, tensor_to_image(it.current));
    write_ppm(dir / labels, labels_to_image(it.labels, table));
    manifest << it.meta.id << ' ' << prior << ' ' << current << ' ' << labels << ' ' << it.meta.prior_offset << '\n';
  }
  if (!manifest) throw DataError("write failed for manifest in " + dir.string());
}

inline std::vector<LabeledFramePair> load_manifest(const std::filesystem::path& dir, const ClassTable& table) {
  std::ifstream in(dir / "manifest.txt");
  if (!in) throw DataError("missing manifest: " + (dir / "manifest.txt").string());
  std::vector<LabeledFramePair> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string id, prior, current, labels;
    std::size_t offset = 0;
    if (!(ls >> id >> prior >> current >> labels >> offset))
      throw DataError("malformed manifest line in " + dir.string() + ": " + line);
    LabeledFramePair p;
    p.prior = image_to_tensor(read_image(dir / prior));
    p.current = image_to_tensor(read_image(dir / current));
    std::size_t unknown = 0;
    Rgb bad{};
    p.labels = image_to_labels(read_image(dir / labels), table, &unknown, &bad);
    if (unknown)
      throw DataError("label image " + (dir / labels).string() + " has colour (" + std::to_string(bad[0]) + "," +
                      std::to_string(bad[1]) + "," + std::to_string(bad[2]) + ") outside the palette");
    p.meta.id = id;
    p.meta.source = dir.string();
    p.meta.prior_offset = offset;
    p.meta.valid_height = p.height();
    p.meta.valid_width = p.width();
    p.validate(table.size());
    out.push_back(std::move(p));
  }
  return out;
}

// ---------------------------------------------------------------------------
// CamVid layout:
//   <root>/<split>/<seq>_<frame>.png          labelled frames
//   <root>/<split>annot/<seq>_<frame>[_L].png label maps (palette colours, or
//                                             grey class indices)
//   <root>/frames/<seq>_<frame>.png           raw video frames for priors
//                                             (falls back to <root>/<split>)

struct CamVidEntry {
  std::filesystem::path current, prior, labels;
  std::string sequence;
  std::int64_t frame = 0;
};

class CamVidFrames final : public FrameSource {
 public:
  CamVidFrames(std::vector<CamVidEntry> entries, ClassTable table, std::size_t offset, std::size_t candidates,
               std::size_t dropped)
      : entries_(std::move(entries)), table_(std::move(table)), offset_(offset), candidates_(candidates),
        dropped_(dropped) {}

  std::size_t size() const override { return entries_.size(); }

  LabeledFramePair get(std::size_t i) const override {
    const CamVidEntry& e = entries_.at(i);
    LabeledFramePair p;
    p.current = image_to_tensor(read_image(e.current));
    p.prior = image_to_tensor(read_image(e.prior));
    std::vector<std::uint8_t> grey;
    RgbImage lab = read_image(e.labels, &grey);
    if (!grey.empty()) {
      p.labels = IntTensor({lab.height, lab.width});
      for (std::size_t k = 0; k < grey.size(); ++k)
        p.labels[k] = grey[k] < table_.size() ? static_cast<std::int32_t>(grey[k]) : kVoidLabel;
    } else {
      p.labels = image_to_labels(lab, table_);
    }
    p.meta.id = e.sequence + "_" + std::to_string(e.frame);
    p.meta.source = e.current.string();
    p.meta.frame_index = e.frame;
    p.meta.prior_offset = offset_;
    p.meta.valid_height = p.height();
    p.meta.valid_width = p.width();
    p.validate(table_.size());
    return p;
  }

  const std::vector<CamVidEntry>& entries() const { return entries_; }
  /// Labelled frames found before prior-availability filtering.
  std::size_t candidates() const { return candidates_; }
  /// Labelled frames dropped because their prior frame is missing.
  std::size_t dropped() const { return dropped_; }

 private:
  std::vector<CamVidEntry> entries_;
  ClassTable table_;
  std::size_t offset_, candidates_, dropped_;
};

struct FrameName {
  std::string sequence;
  std::string prefix;  // optional 'f' before the digits
  std::int64_t frame;
  std::size_t digits;
};

inline std::optional<FrameName> parse_frame_name(const std::string& filename) {
  static const std::regex re(R"(^(.+)_(f?)(\d+)(_L)?\.(png|ppm)$)");
  std::smatch m;
  if (!std::regex_match(filename, m, re)) return std::nullopt;
  return FrameName{m[1].str(), m[2].str(), std::stoll(m[3].str()), m[3].str().size()};
}

inline std::string frame_file_name(const FrameName& n, std::int64_t frame, const std::string& ext) {
  std::string digits = std::to_string(frame);
  if (digits.size() < n.digits) digits.insert(0, n.digits - digits.size(), '0');
  return n.sequence + "_" + n.prefix + digits + ext;
}

inline CamVidFrames load_camvid(const std::filesystem::path& root, const std::string& split, std::size_t prior_offset,
                                const ClassTable& table) {
  namespace fs = std::filesystem;
  const fs::path images = root / split, annot = root / (split + "annot"), frames = root / "frames";
  if (!fs::is_directory(images)) throw DataError("missing image directory " + images.string());
  if (!fs::is_directory(annot)) throw DataError("missing label directory " + annot.string());
  std::vector<fs::path> files;
  for (const auto& de : fs::directory_iterator(images))
    if (de.is_regular_file() && parse_frame_name(de.path().filename().string())) files.push_back(de.path());
  std::sort(files.begin(), files.end());

  std::vector<CamVidEntry> entries;
  std::size_t dropped = 0;
  for (const auto& f : files) {
    const FrameName n = *parse_frame_name(f.filename().string());
    const std::string ext = f.extension().string();
    fs::path label = annot / (f.stem().string() + "_L" + ext);
    if (!fs::exists(label)) label = annot / f.filename();
    if (!fs::exists(label)) throw DataError("missing label map for " + f.string());
    const std::int64_t pf = n.frame - static_cast<std::int64_t>(prior_offset);
    std::optional<fs::path> prior;
    if (pf >= 0) {
      for (const fs::path& dir : {frames, images}) {
        const fs::path cand = dir / frame_file_name(n, pf, ext);
        if (fs::exists(cand)) {
          prior = cand;
          break;
        }
      }
    }
    if (!prior) {
      ++dropped;
      continue;
    }
    entries.push_back({f, *prior, label, n.sequence, n.frame});
  }
  return CamVidFrames(std::move(entries), table, prior_offset, files.size(), dropped);
}

}  // namespace pfseg
