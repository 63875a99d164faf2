// SPDX-License-Identifier: Apache-2.0
#include "hazelayer/objective.hpp"

#include <vector>

#include "hazelayer/error.hpp"
#include "hazelayer/haze.hpp"

namespace hazelayer::objective {

void LossConfig::validate() const {
  if (!(lambda_reg >= 0.0)) throw UsageError("lambda must be nonnegative");
}

namespace {

template <typename T>
ag::DArray<T> squared_distance(ag::Graph<T>& graph, const ag::DArray<T>& a, const ag::DArray<T>& b,
                               NormMode mode) {
  const auto diff = graph.square(graph.sub(a, b));
  return mode == NormMode::MeanOfSquares ? graph.mean(diff) : graph.sum(diff);
}

}  // namespace

template <typename T>
ag::DArray<T> loss_rec(ag::Graph<T>& graph, const ag::DArray<T>& reconstructed, const ag::DArray<T>& hazy,
                       const LossConfig& cfg) {
  if (reconstructed.shape() != hazy.shape()) {
    throw ShapeError("loss_rec: reconstruction " + ag::shape_string(reconstructed.shape()) +
                     " does not match hazy image " + ag::shape_string(hazy.shape()));
  }
  return squared_distance(graph, reconstructed, hazy, cfg.norm_mode);
}

template <typename T>
ag::DArray<T> loss_j(ag::Graph<T>& graph, const ag::DArray<T>& radiance, const LossConfig& cfg) {
  const auto value = haze::hsv_value(graph, radiance);
  const auto saturation = haze::hsv_saturation(graph, radiance);
  return squared_distance(graph, value, saturation, cfg.norm_mode);
}

template <typename T>
ag::DArray<T> loss_hint(ag::Graph<T>& graph, const ag::DArray<T>& airlight, const ImagePlane& hint,
                        const LossConfig& cfg) {
  if (airlight.rank() != 4 || hint.channels() != airlight.dim(1) ||
      !((hint.height() == 1 && hint.width() == 1) ||
        (hint.height() == airlight.dim(2) && hint.width() == airlight.dim(3)))) {
    throw ShapeError("loss_hint: hint " + std::to_string(hint.height()) + "x" + std::to_string(hint.width()) +
                     "x" + std::to_string(hint.channels()) + " cannot broadcast to airlight " +
                     ag::shape_string(airlight.shape()));
  }
  const auto target = graph.constant(hint.nchw(), hint.as_vector<T>());
  return squared_distance(graph, airlight, target, cfg.norm_mode);
}

template <typename T>
ag::DArray<T> loss_kl(ag::Graph<T>& graph, const nets::LatentGaussian<T>& latent) {
  if (latent.mu.shape() != latent.log_var.shape()) {
    throw ShapeError("loss_kl: mu " + ag::shape_string(latent.mu.shape()) + " and log_var " +
                     ag::shape_string(latent.log_var.shape()) + " differ");
  }
  const auto& lv = latent.log_var;
  const auto inner = graph.sub(graph.add_scalar(graph.add(graph.square(latent.mu), graph.exp(lv)), T(-1)), lv);
  return graph.scale(graph.sum(inner), T(0.5));
}

template <typename T>
ag::DArray<T> loss_reg(ag::Graph<T>& graph, const ag::DArray<T>& airlight) {
  if (airlight.rank() != 4 || airlight.dim(2) < 2 || airlight.dim(3) < 2) {
    throw ShapeError("loss_reg: need a [N,C,H,W] plane with H,W >= 2, got " +
                     ag::shape_string(airlight.shape()));
  }
  const std::size_t planes = airlight.dim(0) * airlight.dim(1);
  const std::size_t h = airlight.dim(2);
  const std::size_t w = airlight.dim(3);

  // Neighbour count of each pixel in the clipped 3x3 stencil, excluding itself.
  std::vector<T> counts(h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t rows = 1 + (y > 0) + (y + 1 < h);
      const std::size_t cols = 1 + (x > 0) + (x + 1 < w);
      counts[y * w + x] = static_cast<T>(rows * cols - 1);
    }
  }
  const auto count = graph.constant({1, 1, h, w}, std::move(counts));
  const auto box = graph.constant({1, 1, 3, 3}, std::vector<T>(9, T(1)));
  const auto no_bias = graph.constant({1}, {T(0)});

  const auto stacked = graph.reshape(airlight, {planes, 1, h, w});
  const auto window_sum = graph.conv2d(stacked, box, no_bias, 1, ag::Padding::same(3));
  const auto neighbour_mean = graph.div(graph.sub(window_sum, stacked), count);
  const auto deviation = graph.square(graph.sub(stacked, neighbour_mean));
  const T m = static_cast<T>(airlight.size());
  return graph.scale(graph.sum(deviation), T(1) / (T(2) * m));
}

template <typename T>
TotalLoss<T> loss_total(ag::Graph<T>& graph, const LossTerms<T>& terms, const LossConfig& cfg) {
  cfg.validate();
  LossBreakdown breakdown;
  std::optional<ag::DArray<T>> total;
  const auto include = [&](bool enabled, const std::optional<ag::DArray<T>>& term, const char* name,
                           double& slot, std::optional<T> weight) {
    if (!enabled) return;
    if (!term) throw UsageError(std::string("loss_total: enabled term '") + name + "' was not computed");
    slot = static_cast<double>(term->item());
    const auto weighted = weight ? graph.scale(*term, *weight) : *term;
    total = total ? graph.add(*total, weighted) : weighted;
  };
  include(cfg.enable_rec, terms.rec, "rec", breakdown.rec, std::nullopt);
  include(cfg.enable_j, terms.j, "j", breakdown.j, std::nullopt);
  include(cfg.enable_h, terms.h, "h", breakdown.h, std::nullopt);
  include(cfg.enable_kl, terms.kl, "kl", breakdown.kl, std::nullopt);
  include(cfg.enable_reg, terms.reg, "reg", breakdown.reg, static_cast<T>(cfg.lambda_reg));
  if (!total) total = graph.constant({1}, {T(0)});
  breakdown.total = static_cast<double>(total->item());
  return {*total, breakdown};
}

template <typename T>
TotalLoss<T> evaluate(ag::Graph<T>& graph, const ForwardPass<T>& pass, const ImagePlane& hint,
                      const LossConfig& cfg) {
  LossTerms<T> terms;
  if (cfg.enable_rec) terms.rec = loss_rec(graph, pass.reconstructed, pass.hazy, cfg);
  if (cfg.enable_j) terms.j = loss_j(graph, pass.radiance, cfg);
  if (cfg.enable_h) terms.h = loss_hint(graph, pass.airlight, hint, cfg);
  if (cfg.enable_kl) terms.kl = loss_kl(graph, pass.latent);
  if (cfg.enable_reg) terms.reg = loss_reg(graph, pass.airlight);
  return loss_total(graph, terms, cfg);
}

#define HAZELAYER_INSTANTIATE(T)                                                                           \
  template ag::DArray<T> loss_rec<T>(ag::Graph<T>&, const ag::DArray<T>&, const ag::DArray<T>&,            \
                                     const LossConfig&);                                                   \
  template ag::DArray<T> loss_j<T>(ag::Graph<T>&, const ag::DArray<T>&, const LossConfig&);                \
  template ag::DArray<T> loss_hint<T>(ag::Graph<T>&, const ag::DArray<T>&, const ImagePlane&,              \
                                      const LossConfig&);                                                  \
  template ag::DArray<T> loss_kl<T>(ag::Graph<T>&, const nets::LatentGaussian<T>&);                        \
  template ag::DArray<T> loss_reg<T>(ag::Graph<T>&, const ag::DArray<T>&);                                 \
  template TotalLoss<T> loss_total<T>(ag::Graph<T>&, const LossTerms<T>&, const LossConfig&);              \
  template TotalLoss<T> evaluate<T>(ag::Graph<T>&, const ForwardPass<T>&, const ImagePlane&, const LossConfig&);

HAZELAYER_INSTANTIATE(float)
HAZELAYER_INSTANTIATE(double)

#undef HAZELAYER_INSTANTIATE

}  // namespace hazelayer::objective
