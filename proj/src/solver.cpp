// SPDX-License-Identifier: Apache-2.0
#include "hazelayer/solver.hpp"

#include <array>
#include <chrono>
#include <cmath>
#include <random>

#include "hazelayer/haze.hpp"

namespace hazelayer::solver {

template <typename T>
void adam_step(std::span<nets::NetworkParams<T>* const> nets, AdamState<T>& state, const AdamConfig& cfg) {
  for (const auto* net : nets) {
    for (const auto& p : net->params()) {
      for (const T g : p.array.grad()) {
        if (!std::isfinite(g)) {
          throw NumericError("non-finite gradient in " + std::string(net->name()) + "/" + p.name);
        }
      }
    }
  }
  if (state.step == 0) {
    state.first.clear();
    state.second.clear();
    for (const auto* net : nets) {
      for (const auto& p : net->params()) {
        state.first.emplace_back(p.array.size(), T(0));
        state.second.emplace_back(p.array.size(), T(0));
      }
    }
  }
  ++state.step;
  const double correction1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(cfg.beta1);
  const T b2 = static_cast<T>(cfg.beta2);
  const T step_size = static_cast<T>(cfg.learning_rate / correction1);
  const T root_correction2 = static_cast<T>(std::sqrt(correction2));
  const T eps = static_cast<T>(cfg.eps);

  std::size_t slot = 0;
  for (auto* net : nets) {
    for (auto& p : net->params()) {
      if (slot >= state.first.size() || state.first[slot].size() != p.array.size()) {
        throw UsageError("adam_step: optimizer state does not match the parameter list");
      }
      auto& m = state.first[slot];
      auto& v = state.second[slot];
      auto w = p.array.mutable_data();
      auto g = p.array.mutable_grad();
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = b1 * m[i] + (T(1) - b1) * g[i];
        v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
        w[i] -= step_size * m[i] / (std::sqrt(v[i]) / root_correction2 + eps);
        g[i] = T(0);
      }
      ++slot;
    }
  }
}

template void adam_step<float>(std::span<nets::NetworkParams<float>* const>, AdamState<float>&, const AdamConfig&);
template void adam_step<double>(std::span<nets::NetworkParams<double>* const>, AdamState<double>&,
                                const AdamConfig&);

void SolverConfig::validate() const {
  if (epochs < 1) throw UsageError("epochs must be >= 1");
  if (!(adam.learning_rate > 0.0)) throw UsageError("learning rate must be positive");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw UsageError("Adam betas must lie in [0, 1)");
  }
  if (!(adam.eps > 0.0)) throw UsageError("Adam eps must be positive");
  loss.validate();
}

ImagePlane Disentanglement::reconstruct() const {
  ImagePlane out(radiance.height(), radiance.width(), 3);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < out.height(); ++y) {
      for (std::size_t x = 0; x < out.width(); ++x) {
        const double t = transmission.at(0, y, x);
        out.at(c, y, x) = radiance.at(c, y, x) * t + airlight.at(c, y, x) * (1.0 - t);
      }
    }
  }
  return out;
}

namespace {

struct Seeds {
  std::uint64_t jnet, tnet, anet, sampling;
};

Seeds derive_seeds(std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  std::array<std::uint32_t, 8> words{};
  seq.generate(words.begin(), words.end());
  const auto join = [&](std::size_t i) { return (std::uint64_t{words[2 * i]} << 32) | words[2 * i + 1]; };
  return {join(0), join(1), join(2), join(3)};
}

template <typename T>
Disentanglement snapshot(const ag::DArray<T>& radiance, const ag::DArray<T>& transmission,
                         const ag::DArray<T>& airlight, std::size_t height, std::size_t width) {
  return {crop(ImagePlane::from_array(radiance), height, width),
          crop(ImagePlane::from_array(transmission), height, width),
          crop(ImagePlane::from_array(airlight), height, width)};
}

}  // namespace

template <typename T>
DehazeResult dehaze(const ImagePlane& hazy, const SolverConfig& cfg, const EpochObserver& observer) {
  cfg.validate();
  if (hazy.channels() != 3) throw ShapeError("dehaze: expected a 3-channel image");
  if (hazy.height() < 32 || hazy.width() < 32) {
    throw ShapeError("dehaze: image must be at least 32x32, got " + std::to_string(hazy.height()) + "x" +
                     std::to_string(hazy.width()));
  }
  if (!hazy.all_in_unit_interval()) throw UsageError("dehaze: input values must lie in [0, 1]");

  const auto padded = pad_to_multiple(hazy, nets::kAnetDownsample);
  const std::size_t height = hazy.height();
  const std::size_t width = hazy.width();

  DehazeResult result;
  result.record.config = cfg;
  result.record.seed = cfg.seed;
  result.record.hint = haze::estimate_airlight_hint(hazy);
  result.record.epochs.reserve(static_cast<std::size_t>(cfg.epochs));
  const ImagePlane hint = ImagePlane::filled(1, 1, result.record.hint);

  const Seeds seeds = derive_seeds(cfg.seed);
  auto jnet = nets::build_jnet<T>(seeds.jnet);
  auto tnet = nets::build_tnet<T>(seeds.tnet);
  auto anet = nets::build_anet<T>(seeds.anet);
  nets::SeededRng sampling(seeds.sampling);
  const std::array<nets::NetworkParams<T>*, 3> all_nets{&jnet, &tnet, &anet};
  AdamState<T> adam;

  const auto x = ag::DArray<T>::leaf(padded.image.nchw(), padded.image.as_vector<T>());
  ag::Graph<T> graph;
  bool have_good = false;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    graph.reset();
    objective::ForwardPass<T> pass;
    pass.hazy = x;
    pass.radiance = nets::forward_jnet(graph, jnet, x);
    pass.transmission = nets::forward_tnet(graph, tnet, x);
    auto anet_out = nets::forward_anet(graph, anet, x, sampling, nets::LatentMode::Sample);
    pass.airlight = anet_out.image;
    pass.latent = std::move(anet_out.latent);
    pass.reconstructed = haze::compose(graph, pass.radiance, pass.transmission, pass.airlight);
    const auto loss = objective::evaluate(graph, pass, hint, cfg.loss);

    const auto fail = [&](const std::string& why) {
      const std::string detail = "epoch " + std::to_string(epoch + 1) + ": " + why +
                                 (have_good ? "" : " (no finite epoch to fall back on)");
      throw NumericalFailure(detail, result);
    };
    if (!std::isfinite(loss.breakdown.total)) fail("loss is not finite");
    result.layers = snapshot(pass.radiance, pass.transmission, pass.airlight, height, width);
    have_good = true;

    graph.backward(loss.total);
    try {
      adam_step(std::span<nets::NetworkParams<T>* const>(all_nets), adam, cfg.adam);
    } catch (const NumericalFailure&) {
      throw;
    } catch (const NumericError& e) {
      fail(e.what());
    }

    const auto stop = std::chrono::steady_clock::now();
    result.record.epochs.push_back(loss.breakdown);
    result.record.epoch_ms.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
    if (observer) observer(epoch + 1, loss.breakdown);
  }

  graph.reset();
  const auto radiance = nets::forward_jnet(graph, jnet, x);
  const auto transmission = nets::forward_tnet(graph, tnet, x);
  const auto airlight = nets::forward_anet(graph, anet, x, sampling, nets::LatentMode::Mean).image;
  result.layers = snapshot(radiance, transmission, airlight, height, width);
  return result;
}

template DehazeResult dehaze<float>(const ImagePlane&, const SolverConfig&, const EpochObserver&);
template DehazeResult dehaze<double>(const ImagePlane&, const SolverConfig&, const EpochObserver&);

DehazeResult dehaze(const ImagePlane& hazy, const SolverConfig& cfg, const EpochObserver& observer) {
  return cfg.precision == Precision::F64 ? dehaze<double>(hazy, cfg, observer)
                                         : dehaze<float>(hazy, cfg, observer);
}

std::string_view term_name(AblatedTerm term) {
  switch (term) {
    case AblatedTerm::H: return "H";
    case AblatedTerm::KL: return "KL";
    case AblatedTerm::J: return "J";
    case AblatedTerm::Reg: return "Reg";
  }
  return "?";
}

DehazeResult ablate(const ImagePlane& hazy, const SolverConfig& cfg, AblatedTerm disabled,
                    const EpochObserver& observer) {
  SolverConfig variant = cfg;
  switch (disabled) {
    case AblatedTerm::H: variant.loss.enable_h = false; break;
    case AblatedTerm::KL: variant.loss.enable_kl = false; break;
    case AblatedTerm::J: variant.loss.enable_j = false; break;
    case AblatedTerm::Reg: variant.loss.enable_reg = false; break;
  }
  return dehaze(hazy, variant, observer);
}

}  // namespace hazelayer::solver
