// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "hazelayer/autograd.hpp"

namespace hazelayer {

using Rgb = std::array<double, 3>;

/// Planar (channel-major) image with real intensities, nominally in [0,1].
class ImagePlane {
 public:
  ImagePlane() = default;
  ImagePlane(std::size_t height, std::size_t width, std::size_t channels, double fill = 0.0);

  static ImagePlane filled(std::size_t height, std::size_t width, const Rgb& color);
  /// Builds from row-major interleaved samples (y, x, c).
  static ImagePlane from_interleaved(std::size_t height, std::size_t width, std::size_t channels,
                                     std::span<const double> samples);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t channels() const { return channels_; }
  std::size_t pixel_count() const { return height_ * width_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double& at(std::size_t c, std::size_t y, std::size_t x) { return values_[(c * height_ + y) * width_ + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return values_[(c * height_ + y) * width_ + x];
  }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::span<const double> channel(std::size_t c) const {
    return std::span<const double>(values_).subspan(c * pixel_count(), pixel_count());
  }

  bool same_dims(const ImagePlane& other) const {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }
  bool all_in_unit_interval() const;

  /// Copy as a [1,C,H,W] array.
  template <typename T>
  std::vector<T> as_vector() const {
    return std::vector<T>(values_.begin(), values_.end());
  }
  ag::Shape nchw() const { return {1, channels_, height_, width_}; }

  template <typename T>
  static ImagePlane from_array(const ag::DArray<T>& array);

  bool operator==(const ImagePlane& other) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t channels_ = 0;
  std::vector<double> values_;
};

struct PaddedImage {
  ImagePlane image;
  std::size_t original_height = 0;
  std::size_t original_width = 0;
};

/// Reflect-pads right and bottom so both dims become multiples of `multiple`.
PaddedImage pad_to_multiple(const ImagePlane& image, std::size_t multiple = 16);

/// Top-left crop.
ImagePlane crop(const ImagePlane& image, std::size_t height, std::size_t width);

/// Bilinear resize with half-pixel centers and clamped borders.
ImagePlane resize_bilinear(const ImagePlane& image, std::size_t height, std::size_t width);

/// Swaps the spatial axes.
ImagePlane transpose(const ImagePlane& image);

}  // namespace hazelayer
