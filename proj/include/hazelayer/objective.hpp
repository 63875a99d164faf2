// SPDX-License-Identifier: Apache-2.0
//
// Loss terms of the layer-disentanglement objective
//
//   total = rec + j + h + kl + lambda * reg
//
//   rec  ||compose(J, T, A) - x||^2        reconstruction of the hazy input
//   j    ||V(J) - S(J)||^2                 color-attenuation prior on the radiance
//   h    ||A - hint||^2                    pulls the airlight toward the dark-channel hint
//   kl   KL(N(mu, sigma^2) || N(0, I))     latent prior of the airlight network
//   reg  mean-filter smoothness of A
//
// The squared norms are averaged over elements in NormMode::MeanOfSquares.
#pragma once

#include <optional>

#include "hazelayer/autograd.hpp"
#include "hazelayer/image.hpp"
#include "hazelayer/networks.hpp"

namespace hazelayer::objective {

enum class NormMode { SumOfSquares, MeanOfSquares };

struct LossConfig {
  double lambda_reg = 0.1;
  bool enable_rec = true;
  bool enable_j = true;
  bool enable_h = true;
  bool enable_kl = true;
  bool enable_reg = true;
  NormMode norm_mode = NormMode::MeanOfSquares;

  void validate() const;
};

struct LossBreakdown {
  double rec = 0.0;
  double j = 0.0;
  double h = 0.0;
  double kl = 0.0;
  double reg = 0.0;
  double total = 0.0;

  bool operator==(const LossBreakdown&) const = default;
};

template <typename T>
ag::DArray<T> loss_rec(ag::Graph<T>& graph, const ag::DArray<T>& reconstructed, const ag::DArray<T>& hazy,
                       const LossConfig& cfg);

template <typename T>
ag::DArray<T> loss_j(ag::Graph<T>& graph, const ag::DArray<T>& radiance, const LossConfig& cfg);

/// `hint` is either a full plane or a 1x1 color; it broadcasts to the airlight's shape.
template <typename T>
ag::DArray<T> loss_hint(ag::Graph<T>& graph, const ag::DArray<T>& airlight, const ImagePlane& hint,
                        const LossConfig& cfg);

/// 0.5 * sum(mu^2 + exp(log_var) - 1 - log_var), summed over every latent element.
template <typename T>
ag::DArray<T> loss_kl(ag::Graph<T>& graph, const nets::LatentGaussian<T>& latent);

/// (1/2m) * sum_i (a_i - mean of a_i's 8-connected neighbours)^2, per channel,
/// with neighbourhoods clipped at the borders.
template <typename T>
ag::DArray<T> loss_reg(ag::Graph<T>& graph, const ag::DArray<T>& airlight);

/// Individually computed terms. Every enabled term must be present.
template <typename T>
struct LossTerms {
  std::optional<ag::DArray<T>> rec;
  std::optional<ag::DArray<T>> j;
  std::optional<ag::DArray<T>> h;
  std::optional<ag::DArray<T>> kl;
  std::optional<ag::DArray<T>> reg;
};

template <typename T>
struct TotalLoss {
  ag::DArray<T> total;
  LossBreakdown breakdown;
};

template <typename T>
TotalLoss<T> loss_total(ag::Graph<T>& graph, const LossTerms<T>& terms, const LossConfig& cfg);

/// Everything the objective needs from one forward pass.
template <typename T>
struct ForwardPass {
  ag::DArray<T> hazy;
  ag::DArray<T> radiance;
  ag::DArray<T> transmission;
  ag::DArray<T> airlight;
  ag::DArray<T> reconstructed;
  nets::LatentGaussian<T> latent;
};

/// Computes each enabled term from a forward pass and combines them.
template <typename T>
TotalLoss<T> evaluate(ag::Graph<T>& graph, const ForwardPass<T>& pass, const ImagePlane& hint,
                      const LossConfig& cfg);

}  // namespace hazelayer::objective
