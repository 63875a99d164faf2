// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <vector>

#include "hazelayer/image.hpp"

namespace hazelayer::metrics {

/// Single-scale SSIM convention used everywhere in this project.
inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;
inline constexpr const char* kSsimConvention = "gaussian11_sigma1.5_valid_k0.01_0.03_peak1";

/// 10*log10(1/MSE); +inf when the images are identical.
double psnr(const ImagePlane& a, const ImagePlane& b);

/// Mean SSIM over valid 11x11 Gaussian windows, averaged per channel.
double ssim(const ImagePlane& a, const ImagePlane& b);

/// Normalized 11x11 Gaussian weights, row-major.
std::vector<double> ssim_window();

struct MetricReport {
  double psnr_db = 0.0;
  double ssim = 0.0;
  std::string ssim_convention = kSsimConvention;
};

MetricReport evaluate(const ImagePlane& prediction, const ImagePlane& reference);

/// Mean of per-image values; infinite PSNRs propagate.
MetricReport aggregate(std::span<const MetricReport> reports);

}  // namespace hazelayer::metrics
