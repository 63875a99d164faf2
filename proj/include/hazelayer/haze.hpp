// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "hazelayer/autograd.hpp"
#include "hazelayer/image.hpp"

namespace hazelayer::haze {

inline constexpr double kSaturationEps = 1e-6;
inline constexpr int kHintPatch = 15;
inline constexpr double kHintTopFraction = 0.001;

/// Scattering model I = J*T + A*(1-T); T is [N,1,H,W] and broadcasts over channels.
template <typename T>
ag::DArray<T> compose(ag::Graph<T>& graph, const ag::DArray<T>& radiance, const ag::DArray<T>& transmission,
                      const ag::DArray<T>& airlight);

/// HSV value: per-pixel channel maximum, [N,3,H,W] -> [N,1,H,W].
template <typename T>
ag::DArray<T> hsv_value(ag::Graph<T>& graph, const ag::DArray<T>& image);

/// HSV saturation (max - min) / (max + eps); the eps keeps black pixels differentiable.
template <typename T>
ag::DArray<T> hsv_saturation(ag::Graph<T>& graph, const ag::DArray<T>& image, T eps = T(kSaturationEps));

/// Per-pixel channel minimum followed by a patch x patch minimum filter with
/// replicated borders. Returns a single-channel plane.
ImagePlane dark_channel(const ImagePlane& image, int patch = kHintPatch);

/// Airlight hint: mean color of the ceil(top_fraction * pixels) pixels with the
/// brightest dark channel. Ties in the dark channel go to the lower raster index.
Rgb estimate_airlight_hint(const ImagePlane& hazy, int patch = kHintPatch,
                           double top_fraction = kHintTopFraction);

}  // namespace hazelayer::haze
