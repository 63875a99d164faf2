// SPDX-License-Identifier: Apache-2.0
#include "hazelayer/image_io.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>

#include "hazelayer/error.hpp"

namespace hazelayer::io {

namespace {

template <typename Pixel>
Pixel quantize(double v, double peak) {
  return static_cast<Pixel>(std::lround(std::clamp(v, 0.0, 1.0) * peak));
}

void write(const std::filesystem::path& path, const cv::Mat& mat) {
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), mat);
  } catch (const cv::Exception& e) {
    throw IoError("cannot write " + path.string() + ": " + e.what());
  }
  if (!ok) throw IoError("cannot write " + path.string());
}

cv::Mat read(const std::filesystem::path& path) {
  cv::Mat mat;
  try {
    mat = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  } catch (const cv::Exception& e) {
    throw IoError("cannot read " + path.string() + ": " + e.what());
  }
  if (mat.empty()) throw IoError("cannot read image " + path.string());
  return mat;
}

}  // namespace

ImagePlane load_image(const std::filesystem::path& path) {
  const cv::Mat mat = read(path);
  if (mat.depth() != CV_8U) {
    throw IoError("unsupported bit depth in " + path.string() + " (expected 8-bit samples)");
  }
  const int channels = mat.channels();
  if (channels != 1 && channels != 3 && channels != 4) {
    throw IoError("unsupported channel count " + std::to_string(channels) + " in " + path.string());
  }
  ImagePlane out(static_cast<std::size_t>(mat.rows), static_cast<std::size_t>(mat.cols), 3);
  for (int y = 0; y < mat.rows; ++y) {
    const auto* row = mat.ptr<std::uint8_t>(y);
    for (int x = 0; x < mat.cols; ++x) {
      const auto* px = row + static_cast<std::ptrdiff_t>(x) * channels;
      const auto uy = static_cast<std::size_t>(y);
      const auto ux = static_cast<std::size_t>(x);
      if (channels == 1) {
        const double g = px[0] / 255.0;
        out.at(0, uy, ux) = g;
        out.at(1, uy, ux) = g;
        out.at(2, uy, ux) = g;
      } else {
        // OpenCV stores BGR(A).
        out.at(0, uy, ux) = px[2] / 255.0;
        out.at(1, uy, ux) = px[1] / 255.0;
        out.at(2, uy, ux) = px[0] / 255.0;
      }
    }
  }
  return out;
}

void save_png8(const std::filesystem::path& path, const ImagePlane& image) {
  if (image.channels() != 1 && image.channels() != 3) {
    throw ShapeError("save_png8: expected 1 or 3 channels, got " + std::to_string(image.channels()));
  }
  const int rows = static_cast<int>(image.height());
  const int cols = static_cast<int>(image.width());
  const bool color = image.channels() == 3;
  cv::Mat mat(rows, cols, color ? CV_8UC3 : CV_8UC1);
  for (int y = 0; y < rows; ++y) {
    auto* row = mat.ptr<std::uint8_t>(y);
    for (int x = 0; x < cols; ++x) {
      const auto uy = static_cast<std::size_t>(y);
      const auto ux = static_cast<std::size_t>(x);
      if (color) {
        row[3 * x + 0] = quantize<std::uint8_t>(image.at(2, uy, ux), 255.0);
        row[3 * x + 1] = quantize<std::uint8_t>(image.at(1, uy, ux), 255.0);
        row[3 * x + 2] = quantize<std::uint8_t>(image.at(0, uy, ux), 255.0);
      } else {
        row[x] = quantize<std::uint8_t>(image.at(0, uy, ux), 255.0);
      }
    }
  }
  write(path, mat);
}

void save_png16(const std::filesystem::path& path, const ImagePlane& image) {
  if (image.channels() != 1) throw ShapeError("save_png16: expected a single channel");
  cv::Mat mat(static_cast<int>(image.height()), static_cast<int>(image.width()), CV_16UC1);
  for (int y = 0; y < mat.rows; ++y) {
    auto* row = mat.ptr<std::uint16_t>(y);
    for (int x = 0; x < mat.cols; ++x) {
      row[x] = quantize<std::uint16_t>(image.at(0, static_cast<std::size_t>(y), static_cast<std::size_t>(x)),
                                       65535.0);
    }
  }
  write(path, mat);
}

ImagePlane load_png16(const std::filesystem::path& path) {
  const cv::Mat mat = read(path);
  if (mat.depth() != CV_16U || mat.channels() != 1) {
    throw IoError("expected a 16-bit grayscale image in " + path.string());
  }
  ImagePlane out(static_cast<std::size_t>(mat.rows), static_cast<std::size_t>(mat.cols), 1);
  for (int y = 0; y < mat.rows; ++y) {
    const auto* row = mat.ptr<std::uint16_t>(y);
    for (int x = 0; x < mat.cols; ++x) {
      out.at(0, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = row[x] / 65535.0;
    }
  }
  return out;
}

}  // namespace hazelayer::io
