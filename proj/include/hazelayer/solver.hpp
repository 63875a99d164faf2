// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "hazelayer/error.hpp"
#include "hazelayer/image.hpp"
#include "hazelayer/networks.hpp"
#include "hazelayer/objective.hpp"

namespace hazelayer::solver {

enum class Precision { F32, F64 };

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First and second moments, one buffer per parameter array in visiting order.
template <typename T>
struct AdamState {
  std::vector<std::vector<T>> first;
  std::vector<std::vector<T>> second;
  std::int64_t step = 0;
};

/// One bias-corrected Adam update over every parameter of `nets`, then zeroes
/// the grads. Throws NumericError naming the parameter if any grad is not
/// finite; nothing is modified in that case.
template <typename T>
void adam_step(std::span<nets::NetworkParams<T>* const> nets, AdamState<T>& state, const AdamConfig& cfg);

struct SolverConfig {
  int epochs = 500;
  AdamConfig adam;
  std::uint64_t seed = 0;
  objective::LossConfig loss;
  Precision precision = Precision::F32;

  void validate() const;
};

struct Disentanglement {
  ImagePlane radiance;      // 3 channels
  ImagePlane transmission;  // 1 channel
  ImagePlane airlight;      // 3 channels

  /// Recomposes the hazy image from the three layers.
  ImagePlane reconstruct() const;
  bool operator==(const Disentanglement&) const = default;
};

struct RunRecord {
  std::vector<objective::LossBreakdown> epochs;
  std::vector<double> epoch_ms;
  SolverConfig config;
  std::uint64_t seed = 0;
  Rgb hint{};
};

struct DehazeResult {
  Disentanglement layers;
  RunRecord record;
};

/// Raised when the loss or a gradient stops being finite. Carries the outputs
/// of the last epoch whose loss was finite.
class NumericalFailure : public NumericError {
 public:
  NumericalFailure(const std::string& what, DehazeResult partial)
      : NumericError(what), partial_(std::move(partial)) {}
  const DehazeResult& partial() const { return partial_; }

 private:
  DehazeResult partial_;
};

using EpochObserver = std::function<void(int epoch, const objective::LossBreakdown&)>;

/// Optimizes fresh J/T/A networks on one hazy image and returns its layers.
/// Images whose sides are not multiples of 16 are reflect-padded for the
/// optimization; returned planes are cropped back to the input size.
template <typename T>
DehazeResult dehaze(const ImagePlane& hazy, const SolverConfig& cfg, const EpochObserver& observer = {});

/// Dispatches on cfg.precision.
DehazeResult dehaze(const ImagePlane& hazy, const SolverConfig& cfg, const EpochObserver& observer = {});

enum class AblatedTerm { H, KL, J, Reg };
std::string_view term_name(AblatedTerm term);

/// dehaze with one loss term switched off.
DehazeResult ablate(const ImagePlane& hazy, const SolverConfig& cfg, AblatedTerm disabled,
                    const EpochObserver& observer = {});

}  // namespace hazelayer::solver
