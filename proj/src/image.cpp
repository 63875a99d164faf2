// SPDX-License-Identifier: Apache-2.0
#include "hazelayer/image.hpp"

#include <algorithm>
#include <cmath>

#include "hazelayer/error.hpp"

namespace hazelayer {

ImagePlane::ImagePlane(std::size_t height, std::size_t width, std::size_t channels, double fill)
    : height_(height), width_(width), channels_(channels), values_(height * width * channels, fill) {}

ImagePlane ImagePlane::filled(std::size_t height, std::size_t width, const Rgb& color) {
  ImagePlane out(height, width, 3);
  for (std::size_t c = 0; c < 3; ++c) {
    std::fill_n(out.values_.begin() + static_cast<std::ptrdiff_t>(c * out.pixel_count()), out.pixel_count(),
                color[c]);
  }
  return out;
}

ImagePlane ImagePlane::from_interleaved(std::size_t height, std::size_t width, std::size_t channels,
                                        std::span<const double> samples) {
  if (samples.size() != height * width * channels) {
    throw ShapeError("from_interleaved: sample count does not match " + std::to_string(height) + "x" +
                     std::to_string(width) + "x" + std::to_string(channels));
  }
  ImagePlane out(height, width, channels);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      for (std::size_t c = 0; c < channels; ++c) out.at(c, y, x) = samples[(y * width + x) * channels + c];
    }
  }
  return out;
}

bool ImagePlane::all_in_unit_interval() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return v >= 0.0 && v <= 1.0; });
}

template <typename T>
ImagePlane ImagePlane::from_array(const ag::DArray<T>& array) {
  if (array.rank() != 4 || array.dim(0) != 1) {
    throw ShapeError("from_array: expected [1,C,H,W], got " + ag::shape_string(array.shape()));
  }
  ImagePlane out(array.dim(2), array.dim(3), array.dim(1));
  const auto data = array.data();
  std::copy(data.begin(), data.end(), out.values_.begin());
  return out;
}

template ImagePlane ImagePlane::from_array(const ag::DArray<float>&);
template ImagePlane ImagePlane::from_array(const ag::DArray<double>&);

namespace {

// Mirror without repeating the edge sample: -1 -> 1, n -> n-2.
std::size_t reflect_index(std::size_t i, std::size_t n) {
  if (n == 1) return 0;
  const std::size_t period = 2 * (n - 1);
  std::size_t r = i % period;
  return r < n ? r : period - r;
}

}  // namespace

PaddedImage pad_to_multiple(const ImagePlane& image, std::size_t multiple) {
  if (multiple < 1) throw UsageError("pad_to_multiple: multiple must be >= 1");
  const std::size_t h = image.height();
  const std::size_t w = image.width();
  const std::size_t ph = (h + multiple - 1) / multiple * multiple;
  const std::size_t pw = (w + multiple - 1) / multiple * multiple;
  PaddedImage result{ImagePlane(ph, pw, image.channels()), h, w};
  for (std::size_t c = 0; c < image.channels(); ++c) {
    for (std::size_t y = 0; y < ph; ++y) {
      const std::size_t sy = reflect_index(y, h);
      for (std::size_t x = 0; x < pw; ++x) result.image.at(c, y, x) = image.at(c, sy, reflect_index(x, w));
    }
  }
  return result;
}

ImagePlane crop(const ImagePlane& image, std::size_t height, std::size_t width) {
  if (height > image.height() || width > image.width()) {
    throw ShapeError("crop: target larger than image");
  }
  ImagePlane out(height, width, image.channels());
  for (std::size_t c = 0; c < image.channels(); ++c) {
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) out.at(c, y, x) = image.at(c, y, x);
    }
  }
  return out;
}

ImagePlane resize_bilinear(const ImagePlane& image, std::size_t height, std::size_t width) {
  if (image.empty() || height == 0 || width == 0) throw ShapeError("resize_bilinear: empty image or target");
  if (height == image.height() && width == image.width()) return image;
  ImagePlane out(height, width, image.channels());
  const double sy = static_cast<double>(image.height()) / static_cast<double>(height);
  const double sx = static_cast<double>(image.width()) / static_cast<double>(width);
  const auto max_y = static_cast<double>(image.height() - 1);
  const auto max_x = static_cast<double>(image.width() - 1);
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, max_y);
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, image.height() - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, max_x);
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, image.width() - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < image.channels(); ++c) {
        const double top = image.at(c, y0, x0) * (1.0 - wx) + image.at(c, y0, x1) * wx;
        const double bottom = image.at(c, y1, x0) * (1.0 - wx) + image.at(c, y1, x1) * wx;
        out.at(c, y, x) = top * (1.0 - wy) + bottom * wy;
      }
    }
  }
  return out;
}

ImagePlane transpose(const ImagePlane& image) {
  ImagePlane out(image.width(), image.height(), image.channels());
  for (std::size_t c = 0; c < image.channels(); ++c) {
    for (std::size_t y = 0; y < image.height(); ++y) {
      for (std::size_t x = 0; x < image.width(); ++x) out.at(c, x, y) = image.at(c, y, x);
    }
  }
  return out;
}

}  // namespace hazelayer
