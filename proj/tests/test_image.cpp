// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "hazelayer/error.hpp"
#include "hazelayer/image.hpp"
#include "hazelayer/image_io.hpp"
#include "oracles.hpp"

using namespace hazelayer;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    path_ = fs::temp_directory_path() / (std::string("hazelayer_image_") + info->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

// Mirror index without repeating the edge sample: -1 -> 1, n -> n - 2.
std::size_t mirror(long i, long n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
  return static_cast<std::size_t>(i);
}

ImagePlane ramp(std::size_t h, std::size_t w, std::size_t c) {
  ImagePlane img(h, w, c);
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) img.at(k, y, x) = static_cast<double>(1000 * k + 100 * y + x) / 1e4;
  return img;
}

}  // namespace

TEST(Pad, AlignedImageIsUnchanged) {
  const auto img = ramp(64, 64, 3);
  const auto p = pad_to_multiple(img, 16);
  EXPECT_EQ(p.image, img);
  EXPECT_EQ(p.original_height, 64u);
  EXPECT_EQ(p.original_width, 64u);
}

TEST(Pad, GrowsToNextMultipleAndCropsBack) {
  const auto img = ramp(70, 65, 3);
  const auto p = pad_to_multiple(img, 16);
  EXPECT_EQ(p.image.height(), 80u);
  EXPECT_EQ(p.image.width(), 80u);
  EXPECT_EQ(crop(p.image, p.original_height, p.original_width), img);
}

TEST(Pad, BorderMirrorsInterior) {
  for (auto [h, w, m] : {std::tuple<std::size_t, std::size_t, std::size_t>{5, 7, 4}, {3, 3, 8}, {17, 2, 16}, {1, 6, 4}}) {
    const auto img = ramp(h, w, 2);
    const auto p = pad_to_multiple(img, m);
    for (std::size_t c = 0; c < 2; ++c) {
      for (std::size_t y = 0; y < p.image.height(); ++y) {
        for (std::size_t x = 0; x < p.image.width(); ++x) {
          const auto sy = mirror(static_cast<long>(y), static_cast<long>(h));
          const auto sx = mirror(static_cast<long>(x), static_cast<long>(w));
          ASSERT_EQ(p.image.at(c, y, x), img.at(c, sy, sx)) << h << "x" << w << " at " << y << "," << x;
        }
      }
    }
  }
}

TEST(Pad, ZeroMultipleIsRejected) { EXPECT_THROW(pad_to_multiple(ramp(4, 4, 1), 0), UsageError); }

TEST(Resize, IdentityAndConstant) {
  const auto img = ramp(9, 11, 3);
  EXPECT_EQ(resize_bilinear(img, 9, 11), img);
  const auto flat = ImagePlane::filled(5, 4, {0.25, 0.5, 0.75});
  const auto big = resize_bilinear(flat, 13, 17);
  for (std::size_t y = 0; y < 13; ++y) EXPECT_NEAR(big.at(2, y, 3), 0.75, 1e-15);
  EXPECT_THROW(resize_bilinear(img, 0, 3), ShapeError);
}

TEST(Resize, DoublingAHorizontalRampInterpolatesAtQuarterOffsets) {
  ImagePlane img(1, 4, 1);
  for (std::size_t x = 0; x < 4; ++x) img.at(0, 0, x) = static_cast<double>(x);
  const auto out = resize_bilinear(img, 1, 8);
  const double want[] = {0.0, 0.25, 0.75, 1.25, 1.75, 2.25, 2.75, 3.0};
  for (std::size_t x = 0; x < 8; ++x) EXPECT_NEAR(out.at(0, 0, x), want[x], 1e-15) << x;
}

TEST(ImagePlaneTest, InterleavedAndArrayConversions) {
  const std::vector<double> s{0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
  const auto img = ImagePlane::from_interleaved(1, 2, 3, s);
  EXPECT_EQ(img.at(0, 0, 1), 0.4);
  EXPECT_EQ(img.at(2, 0, 0), 0.3);
  EXPECT_THROW(ImagePlane::from_interleaved(2, 2, 3, s), ShapeError);
  const auto arr = ag::DArray<float>::leaf(img.nchw(), img.as_vector<float>());
  const auto back = ImagePlane::from_array(arr);
  EXPECT_NEAR(back.at(1, 0, 1), 0.5, 1e-7);
  EXPECT_EQ(transpose(transpose(img)), img);
}

TEST(Io, PngRoundTripIsExactOnByteGrid) {
  TempDir dir;
  std::mt19937_64 rng(1);
  auto img = oracle::random_image(13, 9, 3, rng);
  for (auto& v : img.values()) v = std::round(v * 255.0) / 255.0;
  io::save_png8(dir.path() / "a.png", img);
  const auto back = io::load_image(dir.path() / "a.png");
  ASSERT_TRUE(back.same_dims(img));
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_EQ(back.values()[i], img.values()[i]);
}

TEST(Io, PngRoundTripWithinQuantization) {
  TempDir dir;
  std::mt19937_64 rng(2);
  const auto img = oracle::random_image(10, 12, 3, rng);
  io::save_png8(dir.path() / "a.png", img);
  const auto back = io::load_image(dir.path() / "a.png");
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_LE(std::abs(back.values()[i] - img.values()[i]), 0.5 / 255 + 1e-12);
}

TEST(Io, ByteExtremesNormalize) {
  TempDir dir;
  ImagePlane img(1, 2, 3, 0.0);
  for (std::size_t c = 0; c < 3; ++c) img.at(c, 0, 1) = 1.0;
  io::save_png8(dir.path() / "e.png", img);
  const auto back = io::load_image(dir.path() / "e.png");
  EXPECT_EQ(back.at(0, 0, 0), 0.0);
  EXPECT_EQ(back.at(2, 0, 1), 1.0);
}

TEST(Io, ChannelOrderIsRgb) {
  TempDir dir;
  const auto img = ImagePlane::filled(2, 2, {1.0, 0.0, 0.0});
  io::save_png8(dir.path() / "red.png", img);
  const auto back = io::load_image(dir.path() / "red.png");
  EXPECT_EQ(back.at(0, 1, 1), 1.0);
  EXPECT_EQ(back.at(2, 1, 1), 0.0);
}

TEST(Io, GrayscaleExpandsToThreeChannels) {
  TempDir dir;
  ImagePlane gray(3, 4, 1);
  for (std::size_t i = 0; i < gray.size(); ++i) gray.values()[i] = static_cast<double>(i * 20) / 255.0;
  io::save_png8(dir.path() / "g.png", gray);
  const auto back = io::load_image(dir.path() / "g.png");
  ASSERT_EQ(back.channels(), 3u);
  for (std::size_t y = 0; y < 3; ++y) {
    for (std::size_t x = 0; x < 4; ++x) {
      EXPECT_NEAR(back.at(0, y, x), gray.at(0, y, x), 1e-12);
      EXPECT_EQ(back.at(0, y, x), back.at(1, y, x));
      EXPECT_EQ(back.at(1, y, x), back.at(2, y, x));
    }
  }
}

TEST(Io, JpegInputDecodes) {
  const auto img = io::load_image(std::string(HAZELAYER_TEST_DATA) + "/gradient_24x20.jpg");
  ASSERT_EQ(img.height(), 20u);
  ASSERT_EQ(img.width(), 24u);
  for (std::size_t y = 0; y < 20; ++y) {
    for (std::size_t x = 0; x < 24; ++x) {
      EXPECT_NEAR(img.at(0, y, x), std::round(255.0 * x / 23.0) / 255.0, 4.0 / 255.0);
      EXPECT_NEAR(img.at(1, y, x), std::round(255.0 * y / 19.0) / 255.0, 4.0 / 255.0);
      EXPECT_NEAR(img.at(2, y, x), 128.0 / 255.0, 4.0 / 255.0);
    }
  }
}

TEST(Io, SixteenBitRoundTrip) {
  TempDir dir;
  std::mt19937_64 rng(3);
  const auto t = oracle::random_image(7, 5, 1, rng);
  io::save_png16(dir.path() / "t.png", t);
  const auto back = io::load_png16(dir.path() / "t.png");
  for (std::size_t i = 0; i < t.size(); ++i) EXPECT_LE(std::abs(back.values()[i] - t.values()[i]), 0.5 / 65535 + 1e-12);
  EXPECT_THROW(io::save_png16(dir.path() / "bad.png", ImagePlane(2, 2, 3)), ShapeError);
}

TEST(Io, SixteenBitIsNotAnAcceptedInputDepth) {
  TempDir dir;
  io::save_png16(dir.path() / "deep.png", ImagePlane(4, 4, 1, 0.5));
  try {
    io::load_image(dir.path() / "deep.png");
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("deep.png"), std::string::npos);
  }
  io::save_png8(dir.path() / "shallow.png", ImagePlane(4, 4, 1, 0.5));
  EXPECT_THROW(io::load_png16(dir.path() / "shallow.png"), IoError);
}

TEST(Io, UnreadableFileNamesThePath) {
  TempDir dir;
  const auto missing = dir.path() / "nope.png";
  try {
    io::load_image(missing);
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find(missing.string()), std::string::npos) << e.what();
  }
  std::ofstream(dir.path() / "junk.png") << "not an image";
  EXPECT_THROW(io::load_image(dir.path() / "junk.png"), IoError);
  EXPECT_THROW(io::save_png8(dir.path() / "no_dir" / "x.png", ImagePlane(2, 2, 3)), IoError);
}
