// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>

#include "hazelayer/image.hpp"
#include "hazelayer/solver.hpp"

namespace hazelayer::transfer {

/// Transmission and airlight planes disentangled from a hazy image.
struct HazeStyle {
  ImagePlane transmission;  // 1 channel
  ImagePlane airlight;      // 3 channels
  std::size_t source_height = 0;
  std::size_t source_width = 0;
};

/// Runs the solver on `hazy` and keeps its transmission and airlight.
HazeStyle extract_style(const ImagePlane& hazy, const solver::SolverConfig& cfg);

HazeStyle style_from_layers(const solver::Disentanglement& layers);

/// Bilinearly resizes the style to `clean` and composes clean*T + A*(1-T).
ImagePlane apply_style(const ImagePlane& clean, const HazeStyle& style);

// On disk a style is three files in one directory: style_transmission.png
// (16-bit gray), style_airlight.png (8-bit RGB) and style.json.
void save_style(const std::filesystem::path& dir, const HazeStyle& style);
HazeStyle load_style(const std::filesystem::path& dir);

}  // namespace hazelayer::transfer
