#include <numeric>
#include <set>

#include <gtest/gtest.h>

#include "lanesnn/preprocess.hpp"

using namespace lanesnn;

namespace {

Grid2D random_grid(std::size_t rows, std::size_t cols, Rng& rng) {
  Grid2D g(rows, cols);
  for (double& v : g.values()) v = rng.uniform();
  return g;
}

bool is_binary(const Grid2D& g) {
  for (double v : g.values())
    if (v != 0.0 && v != 1.0) return false;
  return true;
}

}  // namespace

TEST(CropVertical, KeepsMiddleRows) {
  Grid2D img(800, 1280);
  img(300, 5) = 1.0;
  img(499, 7) = 2.0;
  const Grid2D c = crop_vertical(img, 300, 200);
  EXPECT_EQ(c.rows(), 300u);
  EXPECT_EQ(c.cols(), 1280u);
  EXPECT_EQ(c(0, 5), 1.0);
  EXPECT_EQ(c(199, 7), 2.0);
}

TEST(CropVertical, ZeroCropIsIdentity) {
  Rng rng(1);
  const Grid2D img = random_grid(6, 4, rng);
  EXPECT_EQ(crop_vertical(img, 0, 0), img);
}

TEST(CropVertical, DegenerateCropThrows) {
  EXPECT_THROW(crop_vertical(Grid2D(400, 1280), 300, 200), std::invalid_argument);
  EXPECT_THROW(crop_vertical(Grid2D(500, 10), 300, 200), std::invalid_argument);
}

TEST(AreaResize, SmallCases) {
  EXPECT_EQ(area_resize(Grid2D(4, 4, 0.5), 2, 2), Grid2D(2, 2, 0.5));
  const Grid2D g(2, 2, std::vector<double>{0, 0, 0, 1});
  EXPECT_DOUBLE_EQ(area_resize(g, 1, 1)(0, 0), 0.25);
}

TEST(AreaResize, MatchesBlockMeanOracle) {
  Rng rng(5);
  const Grid2D img = random_grid(300, 1280, rng);
  const Grid2D out = area_resize(img, 20, 80);
  for (std::size_t r = 0; r < 20; ++r)
    for (std::size_t c = 0; c < 80; ++c) {
      double s = 0.0;
      for (std::size_t y = 0; y < 15; ++y)
        for (std::size_t x = 0; x < 16; ++x) s += img(r * 15 + y, c * 16 + x);
      ASSERT_EQ(out(r, c), s / 240.0);
    }
}

TEST(AreaResize, PreservesMean) {
  Rng rng(6);
  const Grid2D img = random_grid(300, 1280, rng);
  EXPECT_NEAR(area_resize(img, 10, 40).mean(), img.mean(), 1e-12);
}

TEST(AreaResize, NonIntegerRatioThrows) {
  EXPECT_THROW(area_resize(Grid2D(10, 10), 3, 5), std::invalid_argument);
  EXPECT_THROW(area_resize(Grid2D(10, 10), 0, 5), std::invalid_argument);
}

TEST(ProcessLabel, SinglePixelPerBlockSurvives) {
  PreprocessConfig cfg;
  Grid2D label(300, 1280);
  label(7, 3) = 1.0;  // first 32x30 block only
  const Grid2D out = process_label(label, cfg);
  EXPECT_EQ(out(0, 0), 1.0);
  EXPECT_EQ(out.sum(), 1.0);
  // The un-binarized block mean that motivates denormalization.
  Grid2D scaled = label;
  for (double& v : scaled.values()) v *= 400.0;
  EXPECT_NEAR(area_resize(scaled, 10, 40)(0, 0), 400.0 / 960.0, 1e-15);
}

TEST(ProcessLabel, AllZeroAndAllOne) {
  PreprocessConfig cfg;
  EXPECT_EQ(process_label(Grid2D(300, 1280, 0.0), cfg), Grid2D(10, 40, 0.0));
  EXPECT_EQ(process_label(Grid2D(300, 1280, 1.0), cfg), Grid2D(10, 40, 1.0));
}

TEST(ProcessLabel, IdempotentlyBinary) {
  PreprocessConfig cfg;
  cfg.label_rows = 10;
  cfg.label_cols = 40;
  Rng rng(2);
  Grid2D label(300, 1280);
  for (double& v : label.values()) v = rng.uniform() < 0.001 ? 1.0 : 0.0;
  const Grid2D once = process_label(label, cfg);
  EXPECT_TRUE(is_binary(once));
  PreprocessConfig same = cfg;
  same.label_rows = 10;
  same.label_cols = 40;
  EXPECT_EQ(process_label(once, same), once);
}

TEST(ProcessLabel, NonBinaryThrows) {
  EXPECT_THROW(process_label(Grid2D(300, 1280, 0.5), PreprocessConfig{}), std::invalid_argument);
}

TEST(Augment, IdentityTransform) {
  Rng rng(1);
  Sample s{random_grid(40, 60, rng), Grid2D(40, 60), "a"};
  s.label(10, 10) = 1.0;
  const Sample t = apply_transform(s, {0, 0.0});
  EXPECT_EQ(t.input, s.input);
  EXPECT_EQ(t.label, s.label);
}

TEST(Augment, ShiftDownFillsTopWithZero) {
  Rng rng(2);
  Sample s{random_grid(800, 64, rng), Grid2D(800, 64, 1.0), "a"};
  const Sample t = apply_transform(s, {100, 0.0});
  for (std::size_t r = 0; r < 100; ++r)
    for (std::size_t c = 0; c < 64; ++c) {
      ASSERT_EQ(t.input(r, c), 0.0);
      ASSERT_EQ(t.label(r, c), 0.0);
    }
  for (std::size_t c = 0; c < 64; ++c) {
    EXPECT_DOUBLE_EQ(t.input(100, c), s.input(0, c));
    EXPECT_DOUBLE_EQ(t.input(799, c), s.input(699, c));
  }
}

TEST(Augment, LabelStaysBinaryUnderRandomTransforms) {
  Rng rng(3);
  PreprocessConfig cfg;
  Sample s{random_grid(120, 200, rng), Grid2D(120, 200), "a"};
  for (double& v : s.label.values()) v = rng.uniform() < 0.2 ? 1.0 : 0.0;
  for (int i = 0; i < 10; ++i) {
    const Sample t = augment(s, rng, cfg);
    EXPECT_TRUE(is_binary(t.label));
    for (double v : t.input.values()) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0 + 1e-12);
    }
  }
}

TEST(Augment, ParamsWithinRange) {
  Rng rng(4);
  PreprocessConfig cfg;
  for (int i = 0; i < 1000; ++i) {
    const auto p = draw_augment_params(rng, cfg);
    ASSERT_LE(std::abs(p.shift_rows), 100);
    ASSERT_LE(std::abs(p.angle_deg), 30.0);
  }
}

TEST(ProcessSample, OutputDimensions) {
  Rng rng(1);
  const auto raw = generate_synthetic(rng, 1);
  const Sample p = process_sample(raw[0], PreprocessConfig{});
  EXPECT_EQ(p.input.rows(), 20u);
  EXPECT_EQ(p.input.cols(), 80u);
  EXPECT_EQ(p.label.rows(), 10u);
  EXPECT_EQ(p.label.cols(), 40u);
}

TEST(ProcessSplit, CountsAndIds) {
  PreprocessConfig cfg;
  cfg.augment_count = 7;
  Rng gen(1);
  const auto raw = generate_synthetic(gen, 3, 1280, 800);
  Rng a(9), b(9), c(9);
  const auto train = process_split(raw, a, cfg, true);
  ASSERT_EQ(train.size(), 10u);
  std::set<std::string> ids;
  for (const auto& s : train) ids.insert(s.id);
  EXPECT_EQ(ids.size(), 10u);
  EXPECT_EQ(train[3].id.substr(5), "_aug00000");
  const auto again = process_split(raw, b, cfg, true);
  for (std::size_t i = 0; i < train.size(); ++i) EXPECT_EQ(train[i].input, again[i].input);
  EXPECT_EQ(process_split(raw, c, cfg, false).size(), 3u);
  cfg.augment_count = 0;
  EXPECT_EQ(process_split(raw, c, cfg, true).size(), 3u);
}

TEST(ProcessSplit, LargeAugmentCountWithStreamingLoader) {
  PreprocessConfig cfg;  // 271 augmented copies
  cfg.max_translate = 0;
  Rng gen(1);
  const auto seeds = synthetic_seeds(gen, 100);
  std::size_t loads = 0;
  const auto loader = [&](std::size_t i) {
    ++loads;
    Rng r(seeds[i]);
    return generate_synthetic_sample(r, SyntheticConfig{}, synthetic_id(i));
  };
  Rng rng(2);
  const auto out = process_split(100, loader, rng, cfg, true);
  EXPECT_EQ(out.size(), 371u);
  EXPECT_EQ(loads, 371u);
}

// Background-to-lane ratio of processed synthetic labels.
TEST(ProcessSplit, SyntheticClassImbalance) {
  Rng gen(1);
  const auto seeds = synthetic_seeds(gen, 100);
  double lane = 0.0, total = 0.0;
  PreprocessConfig cfg;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    Rng r(seeds[i]);
    const Sample p = process_sample(generate_synthetic_sample(r, SyntheticConfig{}, synthetic_id(i)), cfg);
    lane += p.label.sum();
    total += static_cast<double>(p.label.size());
  }
  const double ratio = (total - lane) / lane;
  EXPECT_GE(ratio, 2.0);
  EXPECT_LE(ratio, 8.0);
}
