// SPDX-License-Identifier: Apache-2.0
#include "hazelayer/transfer.hpp"

#include <fstream>

#include "hazelayer/error.hpp"
#include "hazelayer/haze.hpp"
#include "hazelayer/image_io.hpp"
#include "json.hpp"

namespace hazelayer::transfer {

namespace {

constexpr const char* kTransmissionFile = "style_transmission.png";
constexpr const char* kAirlightFile = "style_airlight.png";
constexpr const char* kMetadataFile = "style.json";
constexpr int kStyleFormatVersion = 1;

}  // namespace

HazeStyle style_from_layers(const solver::Disentanglement& layers) {
  return {layers.transmission, layers.airlight, layers.transmission.height(), layers.transmission.width()};
}

HazeStyle extract_style(const ImagePlane& hazy, const solver::SolverConfig& cfg) {
  return style_from_layers(solver::dehaze(hazy, cfg).layers);
}

ImagePlane apply_style(const ImagePlane& clean, const HazeStyle& style) {
  if (clean.channels() != 3 || clean.empty()) throw ShapeError("apply_style: expected a 3-channel clean image");
  if (style.transmission.channels() != 1 || style.airlight.channels() != 3 || style.transmission.empty() ||
      style.transmission.height() != style.airlight.height() ||
      style.transmission.width() != style.airlight.width()) {
    throw ShapeError("apply_style: malformed style planes");
  }
  const ImagePlane t = resize_bilinear(style.transmission, clean.height(), clean.width());
  const ImagePlane a = resize_bilinear(style.airlight, clean.height(), clean.width());

  ag::Graph<double> graph;
  const auto composed = haze::compose(graph, graph.constant(clean.nchw(), clean.as_vector<double>()),
                                      graph.constant(t.nchw(), t.as_vector<double>()),
                                      graph.constant(a.nchw(), a.as_vector<double>()));
  return ImagePlane::from_array(composed);
}

void save_style(const std::filesystem::path& dir, const HazeStyle& style) {
  std::filesystem::create_directories(dir);
  io::save_png16(dir / kTransmissionFile, style.transmission);
  io::save_png8(dir / kAirlightFile, style.airlight);
  const nlohmann::json meta = {
      {"format_version", kStyleFormatVersion},
      {"source_height", style.source_height},
      {"source_width", style.source_width},
      {"transmission", kTransmissionFile},
      {"airlight", kAirlightFile},
  };
  std::ofstream out(dir / kMetadataFile);
  out << meta.dump(2) << '\n';
  if (!out) throw IoError("cannot write " + (dir / kMetadataFile).string());
}

HazeStyle load_style(const std::filesystem::path& dir) {
  std::ifstream in(dir / kMetadataFile);
  if (!in) throw IoError("cannot open " + (dir / kMetadataFile).string());
  nlohmann::json meta;
  try {
    in >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed style metadata in " + dir.string() + ": " + e.what());
  }
  if (meta.value("format_version", 0) != kStyleFormatVersion) {
    throw IoError("unsupported style format in " + dir.string());
  }
  HazeStyle style;
  style.transmission = io::load_png16(dir / meta.value("transmission", std::string(kTransmissionFile)));
  style.airlight = io::load_image(dir / meta.value("airlight", std::string(kAirlightFile)));
  style.source_height = meta.value("source_height", style.transmission.height());
  style.source_width = meta.value("source_width", style.transmission.width());
  return style;
}

}  // namespace hazelayer::transfer
