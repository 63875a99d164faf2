// SPDX-License-Identifier: Apache-2.0
//
// The three subnetworks that split a hazy image into layers:
//   J-Net  radiance      stride-1 conv/bn/leaky-relu stack, 3-channel sigmoid head
//   T-Net  transmission  same hidden stack, 1-channel sigmoid head
//   A-Net  airlight      conv encoder (/16), spatial Gaussian latent, upsampling decoder
//
// A network is an ordered list of LayerSpec entries plus named parameters; one
// interpreter runs all three. Convs followed by batch_norm have no bias.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hazelayer/autograd.hpp"

namespace hazelayer::nets {

using SeededRng = std::mt19937_64;

inline constexpr std::size_t kHiddenWidth = 64;
inline constexpr std::size_t kHiddenBlocks = 4;
inline constexpr double kLeakySlope = 0.2;
inline constexpr std::size_t kAnetDownsample = 16;

enum class NetworkKind { JNet, TNet, ANet };
std::string_view kind_name(NetworkKind kind);

enum class LayerKind { Conv, BatchNorm, LeakyRelu, Relu, MaxPool2, Upsample2, Sigmoid, GaussianLatent };

struct LayerSpec {
  LayerKind kind;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 0;

  bool operator==(const LayerSpec&) const = default;
};

template <typename T>
struct NamedArray {
  std::string name;
  ag::DArray<T> array;
};

template <typename T>
class NetworkParams {
 public:
  NetworkParams(NetworkKind kind, std::vector<LayerSpec> layers) : kind_(kind), layers_(std::move(layers)) {}

  /// Throws UsageError on a duplicate name.
  void add(std::string name, ag::DArray<T> array);
  const ag::DArray<T>& get(std::string_view name) const;
  ag::DArray<T>& get(std::string_view name);

  NetworkKind kind() const { return kind_; }
  std::string_view name() const { return kind_name(kind_); }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  const std::vector<NamedArray<T>>& params() const { return params_; }
  std::vector<NamedArray<T>>& params() { return params_; }

  std::size_t scalar_count() const;
  bool all_finite() const;
  void zero_grad();

 private:
  NetworkKind kind_;
  std::vector<LayerSpec> layers_;
  std::vector<NamedArray<T>> params_;
};

/// Mean and log-variance of the latent code, both [1,C,h,w].
template <typename T>
struct LatentGaussian {
  ag::DArray<T> mu;
  ag::DArray<T> log_var;
};

enum class LatentMode {
  Sample,  // z = mu + exp(log_var / 2) * eps, eps ~ N(0, I)
  Mean,    // z = mu
};

template <typename T>
struct AnetOutput {
  ag::DArray<T> image;
  LatentGaussian<T> latent;
};

template <typename T>
NetworkParams<T> build_jnet(std::uint64_t seed);
template <typename T>
NetworkParams<T> build_tnet(std::uint64_t seed);
template <typename T>
NetworkParams<T> build_anet(std::uint64_t seed);

/// Layers shared by J-Net and T-Net ahead of the output convolution.
std::vector<LayerSpec> hidden_stack_spec();

template <typename T>
ag::DArray<T> forward_jnet(ag::Graph<T>& graph, const NetworkParams<T>& params, const ag::DArray<T>& x);
template <typename T>
ag::DArray<T> forward_tnet(ag::Graph<T>& graph, const NetworkParams<T>& params, const ag::DArray<T>& x);

/// x must have spatial dims divisible by 16. `rng` is only consulted in Sample mode.
template <typename T>
AnetOutput<T> forward_anet(ag::Graph<T>& graph, const NetworkParams<T>& params, const ag::DArray<T>& x,
                           SeededRng& rng, LatentMode mode = LatentMode::Sample);

// Parameter snapshots: a versioned text dump, name -> shape -> values.
template <typename T>
void save_params(std::ostream& out, const NetworkParams<T>& params);
/// Overwrites the values of `params` from a snapshot of the same network kind.
template <typename T>
void load_params(std::istream& in, NetworkParams<T>& params);

}  // namespace hazelayer::nets
