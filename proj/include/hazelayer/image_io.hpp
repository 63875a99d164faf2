// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>

#include "hazelayer/image.hpp"

namespace hazelayer::io {

/// Reads an 8-bit PNG or JPEG as RGB in [0,1]. Grayscale expands to three
/// identical channels; an alpha channel is dropped.
ImagePlane load_image(const std::filesystem::path& path);

/// Writes a 1- or 3-channel plane as an 8-bit PNG (values clamped, rounded).
void save_png8(const std::filesystem::path& path, const ImagePlane& image);

/// Writes a 1-channel plane as a 16-bit grayscale PNG.
void save_png16(const std::filesystem::path& path, const ImagePlane& image);

/// Reads a 16-bit grayscale PNG into a 1-channel plane in [0,1].
ImagePlane load_png16(const std::filesystem::path& path);

}  // namespace hazelayer::io
