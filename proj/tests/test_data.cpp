#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <random>
#include <set>
#include <string>

#include "oracles.hpp"
#include "testutil.hpp"
#include "xrseg/data.hpp"
#include "xrseg/image.hpp"

namespace fs = std::filesystem;
using testutil::TempDir;
using testutil::write_bytes;
using xrseg::Dataset;
using xrseg::Tensor;

#ifndef XRSEG_FIXTURE_DIR
#error "XRSEG_FIXTURE_DIR must be defined by the build"
#endif

namespace {

std::string fixture(const char* name) {
  return std::string(XRSEG_FIXTURE_DIR) + "/" + name;
}

Tensor<float> const_image(std::size_t h, std::size_t w, float v) {
  return Tensor<float>::full({1, h, w}, v);
}

double luma(int r, int g, int b) {
  return (0.299 * r + 0.587 * g + 0.114 * b) / 255.0;
}

}  // namespace

// --- decoding ------------------------------------------------------------

TEST(ImageIO, Gray8Png) {
  auto t = xrseg::read_image(fixture("gray8_4x4.png"));
  ASSERT_EQ(t.shape, (xrseg::Shape{1, 4, 4}));
  for (int i = 0; i < 16; ++i)
    EXPECT_NEAR(t.vals()[(std::size_t)i], (float)(i * 17) / 255.0f, 1e-6f);
}

TEST(ImageIO, Gray16Png) {
  auto t = xrseg::read_image(fixture("gray16_3x2.png"));
  ASSERT_EQ(t.shape, (xrseg::Shape{1, 2, 3}));
  const double px[] = {0, 256, 4096, 32768, 65280, 65535};
  for (int i = 0; i < 6; ++i)
    EXPECT_NEAR(t.vals()[(std::size_t)i], px[i] / 65535.0, 1e-6);
}

TEST(ImageIO, RgbPngUsesLumaWeights) {
  auto t = xrseg::read_image(fixture("rgb8_2x2.png"));
  ASSERT_EQ(t.shape, (xrseg::Shape{1, 2, 2}));
  const double expect[] = {luma(255, 0, 0), luma(0, 255, 0), luma(0, 0, 255),
                           luma(250, 128, 10)};
  // Cross-check against an independent integer conversion of the same image
  // (PIL's L mode), which may round differently by at most one level.
  const double pil[] = {76, 150, 29, 151};
  for (int i = 0; i < 4; ++i) {
    EXPECT_NEAR(t.vals()[(std::size_t)i], expect[i], 1e-6);
    EXPECT_NEAR(t.vals()[(std::size_t)i], pil[i] / 255.0, 1.0 / 255.0);
  }
}

TEST(ImageIO, RgbaPngIgnoresAlpha) {
  auto t = xrseg::read_image(fixture("rgba8_2x1.png"));
  ASSERT_EQ(t.shape, (xrseg::Shape{1, 1, 2}));
  EXPECT_NEAR(t.vals()[0], luma(10, 20, 30), 1e-6);
  EXPECT_NEAR(t.vals()[1], luma(200, 100, 50), 1e-6);
}

TEST(ImageIO, PalettePngExpandsToRgb) {
  auto t = xrseg::read_image(fixture("palette_2x2.png"));
  ASSERT_EQ(t.shape, (xrseg::Shape{1, 2, 2}));
  const double expect[] = {0.0, 1.0, luma(255, 0, 0), 1.0};
  for (int i = 0; i < 4; ++i)
    EXPECT_NEAR(t.vals()[(std::size_t)i], expect[i], 1e-6);
}

TEST(ImageIO, BinaryMaskDecodesToZeroOne) {
  auto t = xrseg::read_image(fixture("mask8_4x4.png"));
  for (int i = 0; i < 16; ++i)
    EXPECT_EQ(t.vals()[(std::size_t)i], (i % 2) ? 1.0f : 0.0f);
}

TEST(ImageIO, Pgm8BitWithComments) {
  TempDir tmp("pgm8");
  std::string body = "P5\n# a comment\n3 2\n# another\n255\n";
  const unsigned char px[] = {0, 51, 102, 153, 204, 255};
  body.append(reinterpret_cast<const char*>(px), 6);
  write_bytes(tmp.file("a.pgm"), body);
  auto t = xrseg::read_pgm(tmp.file("a.pgm"));
  ASSERT_EQ(t.shape, (xrseg::Shape{1, 2, 3}));
  for (int i = 0; i < 6; ++i)
    EXPECT_NEAR(t.vals()[(std::size_t)i], px[i] / 255.0, 1e-6);
}

TEST(ImageIO, Pgm16BitBigEndian) {
  TempDir tmp("pgm16");
  std::string body = "P5\n2 1\n65535\n";
  const unsigned char px[] = {0x01, 0x00, 0xff, 0xfe};  // 256, 65534
  body.append(reinterpret_cast<const char*>(px), 4);
  write_bytes(tmp.file("b.pgm"), body);
  auto t = xrseg::read_pgm(tmp.file("b.pgm"));
  ASSERT_EQ(t.shape, (xrseg::Shape{1, 1, 2}));
  EXPECT_NEAR(t.vals()[0], 256.0 / 65535.0, 1e-7);
  EXPECT_NEAR(t.vals()[1], 65534.0 / 65535.0, 1e-7);
}

TEST(ImageIO, ReadImageDispatchesOnMagic) {
  TempDir tmp("magic");
  std::string body = "P5\n1 1\n255\n";
  body.push_back((char)128);
  write_bytes(tmp.file("x.pgm"), body);
  EXPECT_NEAR(xrseg::read_image(tmp.file("x.pgm")).vals()[0], 128.0 / 255.0,
              1e-6);
  EXPECT_GT(xrseg::read_image(fixture("gray8_4x4.png")).numel(), 0u);

  write_bytes(tmp.file("junk.png"), "not an image at all");
  EXPECT_THROW(xrseg::read_image(tmp.file("junk.png")), xrseg::Error);
  EXPECT_THROW(xrseg::read_image(tmp.file("missing.png")), xrseg::Error);
}

TEST(ImageIO, PngWriteReadRoundTrip) {
  TempDir tmp("roundtrip");
  auto img = Tensor<float>::zeros({1, 5, 7});
  std::mt19937 rng(9);
  oracle::fill_uniform(img, rng, 0.0, 1.0);
  xrseg::write_png_gray(tmp.file("r.png"), img);
  auto back = xrseg::read_image(tmp.file("r.png"));
  ASSERT_EQ(back.shape, img.shape);
  for (std::size_t i = 0; i < img.numel(); ++i) {
    const double quantized = std::lround(img.vals()[i] * 255.0) / 255.0;
    EXPECT_NEAR(back.vals()[i], quantized, 1e-6);
  }
}

TEST(ImageIO, WriteClampsOutOfRange) {
  TempDir tmp("clamp");
  auto img = Tensor<float>::from({-0.5f, 0.0f, 1.0f, 2.0f}, {1, 2, 2});
  xrseg::write_png_gray(tmp.file("c.png"), img);
  auto back = xrseg::read_image(tmp.file("c.png"));
  EXPECT_EQ(back.vals()[0], 0.0f);
  EXPECT_EQ(back.vals()[1], 0.0f);
  EXPECT_EQ(back.vals()[2], 1.0f);
  EXPECT_EQ(back.vals()[3], 1.0f);
}

// --- resizing ------------------------------------------------------------

TEST(Resize, BilinearIdentity) {
  auto img = xrseg::read_image(fixture("gray8_4x4.png"));
  auto same = xrseg::resize_bilinear(img, 4, 4);
  for (std::size_t i = 0; i < img.numel(); ++i)
    EXPECT_EQ(same.vals()[i], img.vals()[i]);
}

TEST(Resize, BilinearUpscaleUsesHalfPixelCenters) {
  auto img = Tensor<float>::from({0, 1, 2, 3}, {1, 2, 2});
  auto up = xrseg::resize_bilinear(img, 4, 4);
  const float expect[] = {0,   0.25, 0.75, 1,   0.5, 0.75, 1.25, 1.5,
                          1.5, 1.75, 2.25, 2.5, 2,   2.25, 2.75, 3};
  ASSERT_EQ(up.numel(), 16u);
  for (int i = 0; i < 16; ++i)
    EXPECT_NEAR(up.vals()[(std::size_t)i], expect[i], 1e-6f) << i;
}

TEST(Resize, NearestUpAndDown) {
  auto img = Tensor<float>::from({0, 1, 2, 3}, {1, 2, 2});
  auto up = xrseg::resize_nearest(img, 4, 4);
  const float expect[] = {0, 0, 1, 1, 0, 0, 1, 1, 2, 2, 3, 3, 2, 2, 3, 3};
  for (int i = 0; i < 16; ++i)
    EXPECT_EQ(up.vals()[(std::size_t)i], expect[i]) << i;

  auto big = Tensor<float>::zeros({1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) big.vals()[i] = (float)i;
  auto down = xrseg::resize_nearest(big, 2, 2);
  EXPECT_EQ(down.vals()[0], 5.0f);   // (1,1)
  EXPECT_EQ(down.vals()[1], 7.0f);   // (1,3)
  EXPECT_EQ(down.vals()[2], 13.0f);  // (3,1)
  EXPECT_EQ(down.vals()[3], 15.0f);  // (3,3)
}

TEST(Resize, NearestPreservesBinaryValues) {
  auto mask = xrseg::read_image(fixture("mask8_4x4.png"));
  auto up = xrseg::resize_nearest(mask, 9, 9);
  for (float v : up.vals()) EXPECT_TRUE(v == 0.0f || v == 1.0f);
}

// --- dataset loading -------------------------------------------------------

TEST(DataLoad, PairsImagesWithPlainAndSuffixedMasks) {
  TempDir tmp("pairs");
  auto images = tmp.sub("images");
  auto masks = tmp.sub("masks");
  xrseg::write_png_gray(images + "/b.png", const_image(4, 4, 0.5f));
  xrseg::write_png_gray(images + "/a.png", const_image(4, 4, 0.25f));
  xrseg::write_png_gray(masks + "/a.png", const_image(4, 4, 1.0f));
  xrseg::write_png_gray(masks + "/b_mask.png", const_image(4, 4, 0.0f));

  auto ds = xrseg::load_dataset(images, masks, 4, 4);
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.samples[0].id, "a");
  EXPECT_EQ(ds.samples[1].id, "b");
  EXPECT_EQ(ds.samples[0].mask.vals()[0], 1.0f);
  EXPECT_EQ(ds.samples[1].mask.vals()[0], 0.0f);
  EXPECT_EQ(ds.target_h, 4u);
  EXPECT_EQ(ds.target_w, 4u);
}

TEST(DataLoad, ResizesToTargetResolution) {
  TempDir tmp("resize");
  auto images = tmp.sub("images");
  auto masks = tmp.sub("masks");
  xrseg::write_png_gray(images + "/a.png", const_image(4, 6, 0.5f));
  xrseg::write_png_gray(masks + "/a.png", const_image(4, 6, 1.0f));
  auto ds = xrseg::load_dataset(images, masks, 8, 8);
  ASSERT_EQ(ds.samples[0].image.shape, (xrseg::Shape{1, 8, 8}));
  ASSERT_EQ(ds.samples[0].mask.shape, (xrseg::Shape{1, 8, 8}));
}

TEST(DataLoad, MasksAreBinarized) {
  TempDir tmp("binarize");
  auto images = tmp.sub("images");
  auto masks = tmp.sub("masks");
  xrseg::write_png_gray(images + "/a.png", const_image(2, 2, 0.5f));
  auto soft = Tensor<float>::from({0.1f, 0.3f, 0.6f, 0.9f}, {1, 2, 2});
  xrseg::write_png_gray(masks + "/a.png", soft);
  auto ds = xrseg::load_dataset(images, masks, 2, 2);
  const auto& m = ds.samples[0].mask.vals();
  EXPECT_EQ(m[0], 0.0f);
  EXPECT_EQ(m[1], 0.0f);
  EXPECT_EQ(m[2], 1.0f);
  EXPECT_EQ(m[3], 1.0f);
}

TEST(DataLoad, ReportsEveryUnpairedStem) {
  TempDir tmp("unpaired");
  auto images = tmp.sub("images");
  auto masks = tmp.sub("masks");
  for (const char* stem : {"c", "d", "e"})
    xrseg::write_png_gray(images + "/" + stem + ".png", const_image(2, 2, 0.5f));
  xrseg::write_png_gray(masks + "/d.png", const_image(2, 2, 1.0f));
  try {
    xrseg::load_dataset(images, masks, 2, 2);
    FAIL() << "expected unpaired-images error";
  } catch (const xrseg::Error& e) {
    EXPECT_EQ(e.code(), "unpaired-images");
    const std::string msg = e.what();
    const std::string want = "no mask found for: c, e";
    ASSERT_GE(msg.size(), want.size());
    EXPECT_EQ(msg.substr(msg.size() - want.size()), want) << msg;
  }
}

TEST(DataLoad, RejectsDuplicateStems) {
  TempDir tmp("dup");
  auto images = tmp.sub("images");
  auto masks = tmp.sub("masks");
  xrseg::write_png_gray(images + "/a.png", const_image(2, 2, 0.5f));
  std::string body = "P5\n2 2\n255\n";
  body.append(4, (char)200);
  write_bytes(images + "/a.pgm", body);
  xrseg::write_png_gray(masks + "/a.png", const_image(2, 2, 1.0f));
  try {
    xrseg::load_dataset(images, masks, 2, 2);
    FAIL() << "expected duplicate-stem error";
  } catch (const xrseg::Error& e) {
    EXPECT_EQ(e.code(), "duplicate-stem");
  }
}

TEST(DataLoad, RejectsEmptyOrMissingDirs) {
  TempDir tmp("empty");
  auto images = tmp.sub("images");
  auto masks = tmp.sub("masks");
  EXPECT_THROW(xrseg::load_dataset(images, masks, 2, 2), xrseg::Error);
  EXPECT_THROW(xrseg::load_dataset(tmp.file("nope"), masks, 2, 2),
               xrseg::Error);
}

// --- split -----------------------------------------------------------------

TEST(Split, SizesAndPartition) {
  auto ds = xrseg::gen_synthetic(10, 8, 8, 1);
  auto [train, val] = xrseg::split(ds, 0.8, 77);
  EXPECT_EQ(train.size(), 8u);
  EXPECT_EQ(val.size(), 2u);
  std::set<std::string> seen;
  for (const auto& s : train.samples) seen.insert(s.id);
  for (const auto& s : val.samples) seen.insert(s.id);
  EXPECT_EQ(seen.size(), 10u);
}

TEST(Split, DeterministicForFixedSeed) {
  auto ds = xrseg::gen_synthetic(9, 8, 8, 2);
  auto [a1, b1] = xrseg::split(ds, 0.7, 5);
  auto [a2, b2] = xrseg::split(ds, 0.7, 5);
  ASSERT_EQ(a1.size(), a2.size());
  for (std::size_t i = 0; i < a1.size(); ++i)
    EXPECT_EQ(a1.samples[i].id, a2.samples[i].id);
  for (std::size_t i = 0; i < b1.size(); ++i)
    EXPECT_EQ(b1.samples[i].id, b2.samples[i].id);
}

TEST(Split, SeedChangesMembership) {
  auto ds = xrseg::gen_synthetic(12, 8, 8, 3);
  auto val_ids = [&](std::uint64_t seed) {
    auto [train, val] = xrseg::split(ds, 0.75, seed);
    std::set<std::string> ids;
    for (const auto& s : val.samples) ids.insert(s.id);
    return ids;
  };
  const auto base = val_ids(0);
  bool any_diff = false;
  for (std::uint64_t s = 1; s <= 20 && !any_diff; ++s)
    if (val_ids(s) != base) any_diff = true;
  EXPECT_TRUE(any_diff);
}

TEST(Split, ClampsTinyFractionsToOneSample) {
  auto ds = xrseg::gen_synthetic(2, 8, 8, 4);
  auto [a, b] = xrseg::split(ds, 0.01, 1);
  EXPECT_EQ(a.size(), 1u);
  EXPECT_EQ(b.size(), 1u);
  auto [c, d] = xrseg::split(ds, 0.99, 1);
  EXPECT_EQ(c.size(), 1u);
  EXPECT_EQ(d.size(), 1u);
}

TEST(Split, RejectsBadArguments) {
  auto one = xrseg::gen_synthetic(1, 8, 8, 5);
  EXPECT_THROW(xrseg::split(one, 0.5, 1), xrseg::Error);
  auto ds = xrseg::gen_synthetic(4, 8, 8, 6);
  EXPECT_THROW(xrseg::split(ds, 0.0, 1), xrseg::Error);
  EXPECT_THROW(xrseg::split(ds, 1.0, 1), xrseg::Error);
}

// --- batching ----------------------------------------------------------------

TEST(Batches, CoverEveryIndexWithPartialTail) {
  auto batches = xrseg::batch_indices(33, 16, 123);
  ASSERT_EQ(batches.size(), 3u);
  EXPECT_EQ(batches[0].size(), 16u);
  EXPECT_EQ(batches[1].size(), 16u);
  EXPECT_EQ(batches[2].size(), 1u);
  std::set<std::size_t> seen;
  for (const auto& b : batches) seen.insert(b.begin(), b.end());
  EXPECT_EQ(seen.size(), 33u);
  EXPECT_EQ(*seen.begin(), 0u);
  EXPECT_EQ(*seen.rbegin(), 32u);
}

TEST(Batches, UnseededOrderIsSequential) {
  auto batches = xrseg::batch_indices(7, 3);
  std::vector<std::size_t> flat;
  for (const auto& b : batches) flat.insert(flat.end(), b.begin(), b.end());
  for (std::size_t i = 0; i < 7; ++i) EXPECT_EQ(flat[i], i);
}

TEST(Batches, SeededShuffleIsDeterministicAndNontrivial) {
  auto a = xrseg::batch_indices(50, 10, 9);
  auto b = xrseg::batch_indices(50, 10, 9);
  EXPECT_EQ(a, b);
  auto c = xrseg::batch_indices(50, 10, 10);
  EXPECT_NE(a, c);
  std::vector<std::size_t> flat;
  for (const auto& g : a) flat.insert(flat.end(), g.begin(), g.end());
  bool shuffled = false;
  for (std::size_t i = 0; i < flat.size(); ++i)
    if (flat[i] != i) shuffled = true;
  EXPECT_TRUE(shuffled);
}

TEST(Batches, RejectsZeroBatchSize) {
  EXPECT_THROW(xrseg::batch_indices(4, 0), xrseg::Error);
}

TEST(Batches, StackCopiesSelectedSamplesExactly) {
  auto ds = xrseg::gen_synthetic(3, 8, 8, 7);
  auto [images, masks] = xrseg::stack_batch<float>(ds, {2, 0});
  ASSERT_EQ(images.shape, (xrseg::Shape{2, 1, 8, 8}));
  ASSERT_EQ(masks.shape, (xrseg::Shape{2, 1, 8, 8}));
  for (std::size_t i = 0; i < 64; ++i) {
    EXPECT_EQ(images.vals()[i], ds.samples[2].image.vals()[i]);
    EXPECT_EQ(images.vals()[64 + i], ds.samples[0].image.vals()[i]);
    EXPECT_EQ(masks.vals()[i], ds.samples[2].mask.vals()[i]);
  }
  EXPECT_THROW(xrseg::stack_batch<float>(ds, {}), xrseg::Error);
  EXPECT_THROW(xrseg::stack_batch<float>(ds, {5}), xrseg::Error);
}

// --- synthetic generator -------------------------------------------------------

TEST(Synthetic, RegeneratesIdenticallyFromSeed) {
  auto a = xrseg::gen_synthetic(4, 16, 16, 42);
  auto b = xrseg::gen_synthetic(4, 16, 16, 42);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t s = 0; s < a.size(); ++s) {
    EXPECT_EQ(a.samples[s].id, b.samples[s].id);
    for (std::size_t i = 0; i < a.samples[s].image.numel(); ++i) {
      ASSERT_EQ(a.samples[s].image.vals()[i], b.samples[s].image.vals()[i]);
      ASSERT_EQ(a.samples[s].mask.vals()[i], b.samples[s].mask.vals()[i]);
    }
  }
  auto c = xrseg::gen_synthetic(4, 16, 16, 43);
  bool any_diff = false;
  for (std::size_t i = 0; i < 256; ++i)
    if (a.samples[0].image.vals()[i] != c.samples[0].image.vals()[i])
      any_diff = true;
  EXPECT_TRUE(any_diff);
}

TEST(Synthetic, IdsAreZeroPaddedAndOrdered) {
  auto ds = xrseg::gen_synthetic(3, 8, 8, 1);
  EXPECT_EQ(ds.samples[0].id, "synth_0000");
  EXPECT_EQ(ds.samples[1].id, "synth_0001");
  EXPECT_EQ(ds.samples[2].id, "synth_0002");
  EXPECT_EQ(ds.source, "synthetic");
}

TEST(Synthetic, ImagesInRangeMasksBinaryForegroundPlausible) {
  auto ds = xrseg::gen_synthetic(200, 32, 32, 11);
  double mean_fg = 0;
  for (const auto& s : ds.samples) {
    double fg = 0;
    for (float v : s.image.vals()) {
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f);
    }
    for (float v : s.mask.vals()) {
      ASSERT_TRUE(v == 0.0f || v == 1.0f);
      fg += v;
    }
    fg /= (double)s.mask.numel();
    EXPECT_GT(fg, 0.03) << s.id;
    EXPECT_LT(fg, 0.5) << s.id;
    mean_fg += fg;
  }
  mean_fg /= (double)ds.size();
  EXPECT_GT(mean_fg, 0.08);
  EXPECT_LT(mean_fg, 0.3);
}

TEST(Synthetic, MaskMarksBrightRegions) {
  auto ds = xrseg::gen_synthetic(8, 32, 32, 13);
  for (const auto& s : ds.samples) {
    double in_sum = 0, out_sum = 0;
    std::size_t in_n = 0, out_n = 0;
    for (std::size_t i = 0; i < s.mask.numel(); ++i) {
      if (s.mask.vals()[i] > 0.5f) {
        in_sum += s.image.vals()[i];
        ++in_n;
      } else {
        out_sum += s.image.vals()[i];
        ++out_n;
      }
    }
    ASSERT_GT(in_n, 0u);
    ASSERT_GT(out_n, 0u);
    EXPECT_GT(in_sum / (double)in_n, out_sum / (double)out_n + 0.4);
  }
}

TEST(Synthetic, RejectsDegenerateRequests) {
  EXPECT_THROW(xrseg::gen_synthetic(0, 16, 16, 1), xrseg::Error);
  EXPECT_THROW(xrseg::gen_synthetic(1, 4, 4, 1), xrseg::Error);
}
