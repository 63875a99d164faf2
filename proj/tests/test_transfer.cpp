// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "hazelayer/error.hpp"
#include "hazelayer/image_io.hpp"
#include "hazelayer/transfer.hpp"
#include "oracles.hpp"

using namespace hazelayer;
namespace fs = std::filesystem;

namespace {

transfer::HazeStyle random_style(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  return {oracle::random_image(h, w, 1, rng), oracle::random_image(h, w, 3, rng), h, w};
}

// clean * T + A * (1 - T) written out per element.
ImagePlane scatter(const ImagePlane& clean, const ImagePlane& t, const ImagePlane& a) {
  ImagePlane out(clean.height(), clean.width(), 3);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < clean.height(); ++y)
      for (std::size_t x = 0; x < clean.width(); ++x)
        out.at(c, y, x) = clean.at(c, y, x) * t.at(0, y, x) + a.at(c, y, x) * (1.0 - t.at(0, y, x));
  return out;
}

ImagePlane fixture() { return io::load_image(std::string(HAZELAYER_TEST_DATA) + "/chelsea_crop64.png"); }

}  // namespace

TEST(ApplyStyle, UnitTransmissionIsIdentity) {
  std::mt19937_64 rng(1);
  const auto clean = oracle::random_image(20, 30, 3, rng);
  transfer::HazeStyle style{ImagePlane(7, 9, 1, 1.0), oracle::random_image(7, 9, 3, rng), 7, 9};
  EXPECT_EQ(transfer::apply_style(clean, style), clean);
}

TEST(ApplyStyle, OpaqueStyleGivesAirlight) {
  std::mt19937_64 rng(2);
  const auto clean = oracle::random_image(12, 10, 3, rng);
  transfer::HazeStyle style{ImagePlane(5, 5, 1, 0.0), ImagePlane::filled(5, 5, {0.8, 0.8, 0.8}), 5, 5};
  const auto out = transfer::apply_style(clean, style);
  for (double v : out.values()) EXPECT_DOUBLE_EQ(v, 0.8);
}

TEST(ApplyStyle, MatchesIndependentComposition) {
  std::mt19937_64 rng(3);
  for (auto [sh, sw, th, tw] : {std::array<std::size_t, 4>{16, 16, 16, 16}, {9, 13, 24, 20}, {32, 32, 11, 17}}) {
    const auto style = random_style(sh, sw, rng);
    const auto clean = oracle::random_image(th, tw, 3, rng);
    const auto want = scatter(clean, oracle::resize_tent(style.transmission, th, tw),
                              oracle::resize_tent(style.airlight, th, tw));
    const auto got = transfer::apply_style(clean, style);
    ASSERT_TRUE(got.same_dims(want));
    for (std::size_t i = 0; i < got.size(); ++i) ASSERT_NEAR(got.values()[i], want.values()[i], 1e-7);
  }
}

TEST(ApplyStyle, OutputInUnitIntervalAndShapedLikeTarget) {
  std::mt19937_64 rng(4);
  const auto style = random_style(10, 14, rng);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t h = 3 + trial, w = 40 - trial;
    const auto out = transfer::apply_style(oracle::random_image(h, w, 3, rng), style);
    EXPECT_EQ(out.height(), h);
    EXPECT_EQ(out.width(), w);
    EXPECT_EQ(out.channels(), 3u);
    for (double v : out.values()) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
    }
  }
}

TEST(ApplyStyle, PureFunction) {
  std::mt19937_64 rng(5);
  const auto style = random_style(8, 8, rng);
  const auto copy = style;
  const auto clean = oracle::random_image(16, 12, 3, rng);
  const auto a = transfer::apply_style(clean, style);
  const auto b = transfer::apply_style(clean, style);
  EXPECT_EQ(a, b);
  EXPECT_EQ(style.transmission, copy.transmission);
  EXPECT_EQ(style.airlight, copy.airlight);
}

TEST(ApplyStyle, MalformedInputsThrow) {
  std::mt19937_64 rng(6);
  const auto style = random_style(8, 8, rng);
  EXPECT_THROW(transfer::apply_style(ImagePlane(4, 4, 1), style), ShapeError);
  transfer::HazeStyle bad{ImagePlane(8, 8, 1), ImagePlane(8, 7, 3), 8, 8};
  EXPECT_THROW(transfer::apply_style(ImagePlane(4, 4, 3), bad), ShapeError);
}

TEST(StyleFiles, RoundTripWithinQuantization) {
  std::mt19937_64 rng(7);
  const auto style = random_style(12, 15, rng);
  const fs::path dir = fs::temp_directory_path() / "hazelayer_style_roundtrip";
  fs::remove_all(dir);
  transfer::save_style(dir, style);
  EXPECT_TRUE(fs::exists(dir / "style.json"));
  const auto back = transfer::load_style(dir);
  EXPECT_EQ(back.source_height, 12u);
  EXPECT_EQ(back.source_width, 15u);
  ASSERT_TRUE(back.transmission.same_dims(style.transmission));
  ASSERT_TRUE(back.airlight.same_dims(style.airlight));
  for (std::size_t i = 0; i < style.transmission.size(); ++i) {
    EXPECT_LE(std::abs(back.transmission.values()[i] - style.transmission.values()[i]), 0.5 / 65535 + 1e-12);
  }
  for (std::size_t i = 0; i < style.airlight.size(); ++i) {
    EXPECT_LE(std::abs(back.airlight.values()[i] - style.airlight.values()[i]), 0.5 / 255 + 1e-12);
  }
  fs::remove_all(dir);
}

TEST(StyleFiles, MissingDirectoryThrows) {
  EXPECT_THROW(transfer::load_style(fs::temp_directory_path() / "hazelayer_no_such_style"), IoError);
}

TEST(ExtractStyle, DimsAndDeterminism) {
  const auto hazy = crop(fixture(), 40, 48);
  solver::SolverConfig cfg;
  cfg.epochs = 3;
  const auto a = transfer::extract_style(hazy, cfg);
  const auto b = transfer::extract_style(hazy, cfg);
  EXPECT_EQ(a.transmission.height(), 40u);
  EXPECT_EQ(a.transmission.width(), 48u);
  EXPECT_EQ(a.airlight.channels(), 3u);
  EXPECT_EQ(a.source_height, 40u);
  EXPECT_EQ(a.transmission, b.transmission);
  EXPECT_EQ(a.airlight, b.airlight);
}

TEST(ExtractStyle, HomogeneousAirlightOnSyntheticHaze) {
  // Known smooth T* and constant A* = 0.8 over a natural texture; the
  // recovered airlight must be close to spatially flat.
  const auto clean = fixture();
  ImagePlane t(64, 64, 1);
  for (std::size_t y = 0; y < 64; ++y)
    for (std::size_t x = 0; x < 64; ++x)
      t.at(0, y, x) = 0.6 + 0.3 * std::cos(std::numbers::pi * (y + 0.5 * x) / 94.5);
  const auto hazy = scatter(clean, t, ImagePlane::filled(64, 64, {0.8, 0.8, 0.8}));
  solver::SolverConfig cfg;
  cfg.epochs = 150;
  const auto style = transfer::extract_style(hazy, cfg);
  for (std::size_t c = 0; c < 3; ++c) {
    const auto plane = style.airlight.channel(c);
    double mean = 0.0, var = 0.0;
    for (double v : plane) mean += v / plane.size();
    for (double v : plane) var += (v - mean) * (v - mean) / plane.size();
    EXPECT_LE(std::sqrt(var), 0.05) << "channel " << c;
  }
}
