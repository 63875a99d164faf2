// SPDX-License-Identifier: Apache-2.0
#include "hazelayer/haze.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hazelayer/error.hpp"

namespace hazelayer::haze {

template <typename T>
ag::DArray<T> compose(ag::Graph<T>& graph, const ag::DArray<T>& radiance, const ag::DArray<T>& transmission,
                      const ag::DArray<T>& airlight) {
  if (radiance.rank() != 4 || transmission.rank() != 4 || airlight.rank() != 4 || transmission.dim(1) != 1 ||
      radiance.dim(2) != transmission.dim(2) || radiance.dim(3) != transmission.dim(3) ||
      airlight.dim(2) != transmission.dim(2) || airlight.dim(3) != transmission.dim(3)) {
    throw ShapeError("compose: mismatched planes radiance " + ag::shape_string(radiance.shape()) +
                     ", transmission " + ag::shape_string(transmission.shape()) + ", airlight " +
                     ag::shape_string(airlight.shape()));
  }
  const auto opacity = graph.add_scalar(graph.scale(transmission, T(-1)), T(1));
  return graph.add(graph.mul(radiance, transmission), graph.mul(airlight, opacity));
}

template <typename T>
ag::DArray<T> hsv_value(ag::Graph<T>& graph, const ag::DArray<T>& image) {
  return graph.max3(image);
}

template <typename T>
ag::DArray<T> hsv_saturation(ag::Graph<T>& graph, const ag::DArray<T>& image, T eps) {
  if (!(eps > T(0))) throw UsageError("hsv_saturation: eps must be positive");
  const auto hi = graph.max3(image);
  const auto lo = graph.min3(image);
  return graph.div(graph.sub(hi, lo), graph.add_scalar(hi, eps));
}

template ag::DArray<float> compose(ag::Graph<float>&, const ag::DArray<float>&, const ag::DArray<float>&,
                                   const ag::DArray<float>&);
template ag::DArray<double> compose(ag::Graph<double>&, const ag::DArray<double>&, const ag::DArray<double>&,
                                    const ag::DArray<double>&);
template ag::DArray<float> hsv_value(ag::Graph<float>&, const ag::DArray<float>&);
template ag::DArray<double> hsv_value(ag::Graph<double>&, const ag::DArray<double>&);
template ag::DArray<float> hsv_saturation(ag::Graph<float>&, const ag::DArray<float>&, float);
template ag::DArray<double> hsv_saturation(ag::Graph<double>&, const ag::DArray<double>&, double);

ImagePlane dark_channel(const ImagePlane& image, int patch) {
  if (image.empty()) throw ShapeError("dark_channel: empty image");
  if (patch < 1 || patch % 2 == 0) throw UsageError("dark_channel: patch must be a positive odd size");
  const std::size_t h = image.height();
  const std::size_t w = image.width();
  const auto radius = static_cast<std::ptrdiff_t>(patch / 2);

  ImagePlane pixel_min(h, w, 1);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double m = image.at(0, y, x);
      for (std::size_t c = 1; c < image.channels(); ++c) m = std::min(m, image.at(c, y, x));
      pixel_min.at(0, y, x) = m;
    }
  }
  // A square min filter with replicated borders separates into rows then columns.
  auto clamp = [](std::ptrdiff_t i, std::size_t n) {
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(n) - 1));
  };
  ImagePlane rows(h, w, 1);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double m = pixel_min.at(0, y, x);
      for (std::ptrdiff_t d = -radius; d <= radius; ++d) {
        m = std::min(m, pixel_min.at(0, y, clamp(static_cast<std::ptrdiff_t>(x) + d, w)));
      }
      rows.at(0, y, x) = m;
    }
  }
  ImagePlane out(h, w, 1);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double m = rows.at(0, y, x);
      for (std::ptrdiff_t d = -radius; d <= radius; ++d) {
        m = std::min(m, rows.at(0, clamp(static_cast<std::ptrdiff_t>(y) + d, h), x));
      }
      out.at(0, y, x) = m;
    }
  }
  return out;
}

Rgb estimate_airlight_hint(const ImagePlane& hazy, int patch, double top_fraction) {
  if (hazy.empty()) throw ShapeError("estimate_airlight_hint: empty image");
  if (hazy.channels() != 3) throw ShapeError("estimate_airlight_hint: expected a 3-channel image");
  if (!(top_fraction > 0.0 && top_fraction <= 1.0)) {
    throw UsageError("estimate_airlight_hint: top_fraction must lie in (0, 1]");
  }
  const ImagePlane dark = dark_channel(hazy, patch);
  const std::size_t m = hazy.pixel_count();
  const auto wanted = static_cast<std::size_t>(std::ceil(top_fraction * static_cast<double>(m)));
  const std::size_t take = std::clamp<std::size_t>(wanted, 1, m);

  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto brighter = [&](std::size_t a, std::size_t b) {
    const double da = dark.values()[a];
    const double db = dark.values()[b];
    return da > db || (da == db && a < b);
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(), brighter);

  Rgb hint{0.0, 0.0, 0.0};
  for (std::size_t c = 0; c < 3; ++c) {
    const auto plane = hazy.channel(c);
    double total = 0.0;
    for (std::size_t i = 0; i < take; ++i) total += plane[order[i]];
    hint[c] = total / static_cast<double>(take);
  }
  return hint;
}

}  // namespace hazelayer::haze
