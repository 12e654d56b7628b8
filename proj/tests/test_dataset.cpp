#include <gtest/gtest.h>

#include <png.h>

#include <fstream>

#include "test_util.hpp"

using namespace pfseg;
using pfseg::testing::TempDir;

namespace {

SceneScript plain_scene(std::size_t h = 32, std::size_t w = 48) {
  SceneScript s;
  s.height = h;
  s.width = w;
  s.sky_end = 6;
  s.facade_end = 14;
  s.sidewalk_end = 20;
  s.facade_segments = {{w, 1}};
  s.band_colors = {{0, {0.5f, 0.7f, 0.9f}}, {1, {0.5f, 0.3f, 0.3f}}, {4, {0.7f, 0.7f, 0.6f}}, {3, {0.3f, 0.3f, 0.3f}}};
  return s;
}

struct Box {
  long top = 1 << 30, left = 1 << 30, bottom = -1, right = -1;
};

Box bounding_box(const IntTensor& labels, std::int32_t cls) {
  Box b;
  const std::size_t W = labels.dim(1);
  for (std::size_t i = 0; i < labels.numel(); ++i)
    if (labels[i] == cls) {
      const long y = static_cast<long>(i / W), x = static_cast<long>(i % W);
      b.top = std::min(b.top, y), b.left = std::min(b.left, x);
      b.bottom = std::max(b.bottom, y), b.right = std::max(b.right, x);
    }
  return b;
}

void write_grey_png(const std::filesystem::path& path, std::size_t w, std::size_t h, const std::vector<std::uint8_t>& v) {
  FILE* fp = std::fopen(path.c_str(), "wb");
  ASSERT_NE(fp, nullptr);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < h; ++y) png_write_row(png, const_cast<png_bytep>(v.data() + y * w));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

}  // namespace

TEST(Synthetic, SpriteDisplacementIsVelocityTimesOffset) {
  const ClassTable table = default_class_table();
  SceneScript s = plain_scene();
  Sprite sp;
  sp.cls = 8;
  sp.height = 5;
  sp.width = 7;
  sp.row = 22;
  sp.col = 4;
  sp.velocity_x = 2;
  s.sprites.push_back(sp);
  const LabeledFramePair p = render_scene(s, table, 3);
  const auto [prior_img, prior_labels] = render_frame(s, table, 0, 1.0f);
  const Box before = bounding_box(prior_labels, 8), after = bounding_box(p.labels, 8);
  EXPECT_EQ(before.left, 4);
  EXPECT_EQ(after.left - before.left, 6);
  EXPECT_EQ(after.right - before.right, 6);
  EXPECT_EQ(after.top, before.top);
  EXPECT_EQ(after.bottom - after.top + 1, 5);
  EXPECT_EQ(p.meta.frame_index, 3);
}

TEST(Synthetic, MoversWrapAroundHorizontally) {
  Sprite sp;
  sp.width = 6;
  sp.col = 40;
  sp.velocity_x = 4;
  // Period is frame width plus sprite width.
  EXPECT_EQ(wrapped_col(sp, 48, 0), 40);
  EXPECT_EQ(wrapped_col(sp, 48, 1), 44);
  // Unwrapped column 48 has just left the right edge; it re-enters at -6.
  EXPECT_EQ(wrapped_col(sp, 48, 2), -6);
  EXPECT_EQ(wrapped_col(sp, 48, 3), -2);
  EXPECT_EQ(wrapped_col(sp, 48, 27), 40);
  sp.velocity_x = -4;
  // Leftward movers leave at -6 and re-enter from the right.
  EXPECT_EQ(wrapped_col(sp, 48, 12), 46);
  Sprite still = sp;
  still.velocity_x = 0;
  EXPECT_EQ(wrapped_col(still, 48, 1000), 40);
}

TEST(Synthetic, StaticSceneWithoutJitterHasIdenticalFrames) {
  const ClassTable table = default_class_table();
  const LabeledFramePair p = render_scene(plain_scene(), table, 3);
  EXPECT_EQ(p.prior, p.current);
}

TEST(Synthetic, BackgroundIsCoherentAcrossFrames) {
  SyntheticConfig cfg;
  cfg.seed = 3;
  cfg.scenes = 4;
  cfg.brightness_jitter = 0.0;
  const ClassTable table = default_class_table();
  for (std::size_t i = 0; i < cfg.scenes; ++i) {
    const SceneScript s = make_scene_script(cfg, i, table);
    const auto [prior, prior_labels] = render_frame(s, table, 0, 1.0f);
    const auto [current, labels] = render_frame(s, table, static_cast<std::int64_t>(cfg.prior_offset), 1.0f);
    const std::size_t plane = labels.numel();
    std::size_t checked = 0;
    for (std::size_t k = 0; k < plane; ++k) {
      // Pixels covered by no sprite in either frame show the band background.
      const std::int32_t band = detail::band_class(s, table, k / s.width, k % s.width);
      if (labels[k] != band || prior_labels[k] != band) continue;
      for (std::size_t c = 0; c < 3; ++c) ASSERT_EQ(prior[c * plane + k], current[c * plane + k]);
      ++checked;
    }
    EXPECT_GT(checked, plane / 2);
  }
}

TEST(Synthetic, LabelsMatchRenderedGeometry) {
  SyntheticConfig cfg;
  cfg.seed = 9;
  const ClassTable table = default_class_table();
  for (std::size_t i = 0; i < 6; ++i) {
    const SceneScript s = make_scene_script(cfg, i, table);
    const auto t = static_cast<std::int64_t>(cfg.prior_offset);
    const auto [img, labels] = render_frame(s, table, t, 1.0f);
    // Walk sprites in paint order; the last painter of a pixel owns its label.
    IntTensor want({s.height, s.width});
    for (std::size_t y = 0; y < s.height; ++y)
      for (std::size_t x = 0; x < s.width; ++x) want[y * s.width + x] = detail::band_class(s, table, y, x);
    for (const Sprite& sp : s.sprites) {
      const std::int64_t r0 = sp.row_at(t), c0 = wrapped_col(sp, static_cast<std::int64_t>(s.width), t);
      for (std::int64_t y = std::max<std::int64_t>(0, r0); y < std::min<std::int64_t>(r0 + sp.height, s.height); ++y)
        for (std::int64_t x = std::max<std::int64_t>(0, c0); x < std::min<std::int64_t>(c0 + sp.width, s.width); ++x)
          want[static_cast<std::size_t>(y) * s.width + static_cast<std::size_t>(x)] = sp.cls;
    }
    EXPECT_EQ(labels, want) << "scene " << i;
  }
}

TEST(Synthetic, DeterministicPerSeed) {
  SyntheticConfig cfg;
  cfg.scenes = 3;
  cfg.frames_per_scene = 2;
  const auto a = generate_synthetic(cfg), b = generate_synthetic(cfg);
  ASSERT_EQ(a.size(), 6u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].prior, b[i].prior);
    EXPECT_EQ(a[i].current, b[i].current);
    EXPECT_EQ(a[i].labels, b[i].labels);
  }
  EXPECT_EQ(a[1].meta.id, "000000_01");
  cfg.seed = 1;
  EXPECT_NE(generate_synthetic(cfg)[0].current, a[0].current);
}

TEST(Synthetic, EveryDynamicPixelBelongsToAMover) {
  SyntheticConfig cfg;
  cfg.scenes = 10;
  const ClassTable table = default_class_table();
  std::size_t dynamic = 0;
  for (const auto& p : generate_synthetic(cfg, table))
    for (std::int32_t l : p.labels.data()) dynamic += table.group(static_cast<std::size_t>(l)) == ClassGroup::Dynamic;
  EXPECT_GT(dynamic, 0u);
}

TEST(Synthetic, RejectsBadConfig) {
  SyntheticConfig cfg;
  cfg.height = 40;
  EXPECT_THROW(generate_synthetic(cfg), std::invalid_argument);
  cfg = {};
  cfg.prior_offset = 0;
  EXPECT_THROW(generate_synthetic(cfg), std::invalid_argument);
  cfg = {};
  cfg.min_movers = 4;
  EXPECT_THROW(generate_synthetic(cfg), std::invalid_argument);
}

TEST(Crop, SameWindowOnAllThreeMaps) {
  const auto items = pfseg::testing::tiny_synthetic(1, 2, 64);
  const LabeledFramePair& p = items[0];
  const LabeledFramePair c = crop_pair(p, 5, 9, 20, 30);
  EXPECT_EQ(c.meta.crop_row, 5u);
  EXPECT_EQ(c.meta.crop_col, 9u);
  for (std::size_t y = 0; y < 20; ++y)
    for (std::size_t x = 0; x < 30; ++x) {
      EXPECT_EQ(c.labels[y * 30 + x], p.labels[(y + 5) * 64 + x + 9]);
      for (std::size_t ch = 0; ch < 3; ++ch) {
        EXPECT_EQ(c.prior[(ch * 20 + y) * 30 + x], p.prior[(ch * 64 + y + 5) * 64 + x + 9]);
        EXPECT_EQ(c.current[(ch * 20 + y) * 30 + x], p.current[(ch * 64 + y + 5) * 64 + x + 9]);
      }
    }
  EXPECT_THROW(crop_pair(p, 50, 0, 20, 20), std::invalid_argument);
}

TEST(Crop, RandomCropIsPaddedToMultipleOfSixteen) {
  LabeledFramePair p{Tensor<float>({3, 240, 250}, 0.5f), Tensor<float>({3, 240, 250}, 0.25f), IntTensor({240, 250}, 1),
                     {}};
  const LabeledFramePair c = random_crop_pair(p, 227, 227, 17);
  EXPECT_EQ(c.height(), 240u);
  EXPECT_EQ(c.width(), 240u);
  EXPECT_EQ(c.meta.valid_height, 227u);
  EXPECT_EQ(c.labels[226 * 240 + 226], 1);
  EXPECT_EQ(c.labels[227 * 240 + 5], kVoidLabel);
  EXPECT_EQ(c.labels[5 * 240 + 227], kVoidLabel);
  EXPECT_EQ(c.current[5 * 240 + 230], 0.0f);
  EXPECT_LE(c.meta.crop_row, 13u);
  EXPECT_LE(c.meta.crop_col, 23u);
  const LabeledFramePair again = random_crop_pair(p, 227, 227, 17);
  EXPECT_EQ(again.meta.crop_row, c.meta.crop_row);
  EXPECT_EQ(again.meta.crop_col, c.meta.crop_col);
  EXPECT_THROW(random_crop_pair(p, 241, 10, 0), std::invalid_argument);
}

TEST(Export, ManifestRoundTripKeepsLabelsExactly) {
  TempDir dir("export");
  const ClassTable table = default_class_table();
  const auto items = pfseg::testing::tiny_synthetic(3);
  export_dataset(dir.path(), items, table);
  const auto back = load_manifest(dir.path(), table);
  ASSERT_EQ(back.size(), items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    EXPECT_EQ(back[i].meta.id, items[i].meta.id);
    EXPECT_EQ(back[i].meta.prior_offset, 3u);
    EXPECT_EQ(back[i].labels, items[i].labels);
    for (std::size_t k = 0; k < items[i].current.numel(); ++k)
      ASSERT_NEAR(back[i].current[k], items[i].current[k], 0.5 / 255.0 + 1e-6);
  }
}

TEST(Export, LoaderReportsMissingAndForeignFiles) {
  TempDir dir("bad");
  const ClassTable table = default_class_table();
  EXPECT_THROW(load_manifest(dir.path(), table), DataError);
  export_dataset(dir.path(), pfseg::testing::tiny_synthetic(1), table);
  RgbImage img(32, 32);
  img.set(0, 0, Rgb{1, 2, 3});
  write_ppm(dir / "000000_labels.ppm", img);
  EXPECT_THROW(load_manifest(dir.path(), table), DataError);
  std::ofstream(dir / "manifest.txt") << "only three fields\n";
  EXPECT_THROW(load_manifest(dir.path(), table), DataError);
}

TEST(CamVid, PairsFramesWithPriorsAndReadsGreyLabels) {
  TempDir root("camvid");
  namespace fs = std::filesystem;
  fs::create_directories(root / "train");
  fs::create_directories(root / "trainannot");
  fs::create_directories(root / "frames");
  RgbImage frame(16, 16);
  for (auto& v : frame.pixels) v = 100;
  write_png(root / "train" / "0001TP_000030.png", frame);
  write_png(root / "train" / "0001TP_000001.png", frame);  // prior would be frame -2: dropped
  write_png(root / "frames" / "0001TP_000027.png", frame);
  std::vector<std::uint8_t> grey(256, 3);
  grey[0] = 11;  // void in CamVid's 11-class numbering
  write_grey_png(root / "trainannot" / "0001TP_000030.png", 16, 16, grey);
  write_grey_png(root / "trainannot" / "0001TP_000001.png", 16, 16, grey);

  const CamVidFrames set = load_camvid(root.path(), "train", 3, default_class_table());
  EXPECT_EQ(set.candidates(), 2u);
  EXPECT_EQ(set.dropped(), 1u);
  ASSERT_EQ(set.size(), 1u);
  const LabeledFramePair p = set.get(0);
  EXPECT_EQ(p.meta.frame_index, 30);
  EXPECT_EQ(set.entries()[0].prior.filename(), "0001TP_000027.png");
  EXPECT_EQ(p.labels[0], kVoidLabel);
  EXPECT_EQ(p.labels[1], 3);
  EXPECT_THROW(load_camvid(root.path(), "test", 3, default_class_table()), DataError);
}
