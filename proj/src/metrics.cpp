// SPDX-License-Identifier: Apache-2.0
#include "hazelayer/metrics.hpp"

#include <cmath>
#include <limits>

#include "hazelayer/error.hpp"

namespace hazelayer::metrics {

namespace {

void require_same(const ImagePlane& a, const ImagePlane& b, const char* what) {
  if (!a.same_dims(b) || a.empty()) {
    throw ShapeError(std::string(what) + ": images differ in shape (" + std::to_string(a.height()) + "x" +
                     std::to_string(a.width()) + "x" + std::to_string(a.channels()) + " vs " +
                     std::to_string(b.height()) + "x" + std::to_string(b.width()) + "x" +
                     std::to_string(b.channels()) + ")");
  }
}

std::vector<double> gaussian_1d() {
  std::vector<double> taps(kSsimWindow);
  const int radius = kSsimWindow / 2;
  double total = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double d = i - radius;
    taps[i] = std::exp(-(d * d) / (2.0 * kSsimSigma * kSsimSigma));
    total += taps[i];
  }
  for (auto& t : taps) t /= total;
  return taps;
}

// Valid-mode separable filtering of one channel; output is (h-10) x (w-10).
std::vector<double> filter_valid(std::span<const double> plane, std::size_t h, std::size_t w,
                                 const std::vector<double>& taps) {
  const std::size_t k = taps.size();
  const std::size_t ow = w - k + 1;
  const std::size_t oh = h - k + 1;
  std::vector<double> rows(h * ow, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += taps[t] * plane[y * w + x + t];
      rows[y * ow + x] = acc;
    }
  }
  std::vector<double> out(oh * ow, 0.0);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += taps[t] * rows[(y + t) * ow + x];
      out[y * ow + x] = acc;
    }
  }
  return out;
}

}  // namespace

double psnr(const ImagePlane& a, const ImagePlane& b) {
  require_same(a, b, "psnr");
  const auto va = a.values();
  const auto vb = b.values();
  double total = 0.0;
  for (std::size_t i = 0; i < va.size(); ++i) total += (va[i] - vb[i]) * (va[i] - vb[i]);
  const double mse = total / static_cast<double>(va.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

std::vector<double> ssim_window() {
  const auto taps = gaussian_1d();
  std::vector<double> window(taps.size() * taps.size());
  for (std::size_t i = 0; i < taps.size(); ++i) {
    for (std::size_t j = 0; j < taps.size(); ++j) window[i * taps.size() + j] = taps[i] * taps[j];
  }
  return window;
}

double ssim(const ImagePlane& a, const ImagePlane& b) {
  require_same(a, b, "ssim");
  const std::size_t h = a.height();
  const std::size_t w = a.width();
  if (h < static_cast<std::size_t>(kSsimWindow) || w < static_cast<std::size_t>(kSsimWindow)) {
    throw ShapeError("ssim: image smaller than the 11x11 window");
  }
  const auto taps = gaussian_1d();
  double channel_total = 0.0;
  for (std::size_t c = 0; c < a.channels(); ++c) {
    const auto x = a.channel(c);
    const auto y = b.channel(c);
    std::vector<double> xx(x.size());
    std::vector<double> yy(x.size());
    std::vector<double> xy(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mu_x = filter_valid(x, h, w, taps);
    const auto mu_y = filter_valid(y, h, w, taps);
    const auto e_xx = filter_valid(xx, h, w, taps);
    const auto e_yy = filter_valid(yy, h, w, taps);
    const auto e_xy = filter_valid(xy, h, w, taps);
    double total = 0.0;
    for (std::size_t i = 0; i < mu_x.size(); ++i) {
      const double mx = mu_x[i];
      const double my = mu_y[i];
      const double sx = e_xx[i] - mx * mx;
      const double sy = e_yy[i] - my * my;
      const double sxy = e_xy[i] - mx * my;
      total += ((2.0 * mx * my + kSsimC1) * (2.0 * sxy + kSsimC2)) /
               ((mx * mx + my * my + kSsimC1) * (sx + sy + kSsimC2));
    }
    channel_total += total / static_cast<double>(mu_x.size());
  }
  return channel_total / static_cast<double>(a.channels());
}

MetricReport evaluate(const ImagePlane& prediction, const ImagePlane& reference) {
  return {psnr(prediction, reference), ssim(prediction, reference), kSsimConvention};
}

MetricReport aggregate(std::span<const MetricReport> reports) {
  MetricReport mean{0.0, 0.0, kSsimConvention};
  if (reports.empty()) return mean;
  for (const auto& r : reports) {
    mean.psnr_db += r.psnr_db;
    mean.ssim += r.ssim;
  }
  mean.psnr_db /= static_cast<double>(reports.size());
  mean.ssim /= static_cast<double>(reports.size());
  return mean;
}

}  // namespace hazelayer::metrics
