// SPDX-License-Identifier: Apache-2.0
#include "hazelayer/networks.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "hazelayer/error.hpp"

namespace hazelayer::nets {

namespace {

constexpr std::string_view kSnapshotMagic = "hazelayer-params";
constexpr int kSnapshotVersion = 1;

std::string layer_prefix(std::size_t index) {
  std::ostringstream os;
  os << "layer" << std::setw(2) << std::setfill('0') << index;
  return os.str();
}

LayerSpec conv(std::size_t in, std::size_t out, std::size_t k) { return {LayerKind::Conv, in, out, k}; }
LayerSpec norm(std::size_t c) { return {LayerKind::BatchNorm, c, c, 0}; }
LayerSpec op(LayerKind kind) { return {kind, 0, 0, 0}; }

std::vector<LayerSpec> plain_spec(std::size_t out_channels) {
  auto layers = hidden_stack_spec();
  layers.push_back(conv(kHiddenWidth, out_channels, 3));
  layers.push_back(op(LayerKind::Sigmoid));
  return layers;
}

std::vector<LayerSpec> anet_spec() {
  const std::size_t ladder[] = {3, 16, 32, 64, 128};
  std::vector<LayerSpec> layers;
  for (std::size_t i = 0; i < 4; ++i) {
    layers.push_back(conv(ladder[i], ladder[i + 1], 3));
    layers.push_back(op(LayerKind::Relu));
    layers.push_back(op(LayerKind::MaxPool2));
  }
  layers.push_back({LayerKind::GaussianLatent, 128, 128, 1});
  const std::size_t decoder[] = {128, 64, 32, 16, 16};
  for (std::size_t i = 0; i < 4; ++i) {
    layers.push_back(op(LayerKind::Upsample2));
    layers.push_back(conv(decoder[i], decoder[i + 1], 3));
    layers.push_back(norm(decoder[i + 1]));
    layers.push_back(op(LayerKind::Relu));
  }
  layers.push_back(conv(16, 3, 3));
  layers.push_back(op(LayerKind::Sigmoid));
  return layers;
}

template <typename T>
ag::DArray<T> kaiming_kernel(std::size_t out, std::size_t in, std::size_t k, SeededRng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(in * k * k));
  std::normal_distribution<double> normal(0.0, stddev);
  std::vector<T> values(out * in * k * k);
  for (auto& v : values) v = static_cast<T>(normal(rng));
  return ag::DArray<T>::leaf({out, in, k, k}, std::move(values), true);
}

// A bias right before batch_norm is cancelled by the mean subtraction, so its
// gradient is identically zero. Such convs carry no bias; beta plays its role.
bool conv_has_bias(const std::vector<LayerSpec>& layers, std::size_t i) {
  return i + 1 >= layers.size() || layers[i + 1].kind != LayerKind::BatchNorm;
}

template <typename T>
void add_conv(NetworkParams<T>& params, const std::string& prefix, std::size_t in, std::size_t out,
              std::size_t k, SeededRng& rng, bool bias = true) {
  params.add(prefix + ".weight", kaiming_kernel<T>(out, in, k, rng));
  if (bias) params.add(prefix + ".bias", ag::DArray<T>::zeros({out}, true));
}

template <typename T>
NetworkParams<T> build(NetworkKind kind, std::vector<LayerSpec> layers, std::uint64_t seed) {
  SeededRng rng(seed);
  NetworkParams<T> params(kind, std::move(layers));
  const auto specs = params.layers();
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const LayerSpec& s = specs[i];
    const std::string prefix = layer_prefix(i);
    switch (s.kind) {
      case LayerKind::Conv:
        add_conv(params, prefix + ".conv", s.in_channels, s.out_channels, s.kernel, rng, conv_has_bias(specs, i));
        break;
      case LayerKind::BatchNorm:
        params.add(prefix + ".bn.gamma", ag::DArray<T>::filled({s.out_channels}, T(1), true));
        params.add(prefix + ".bn.beta", ag::DArray<T>::zeros({s.out_channels}, true));
        break;
      case LayerKind::GaussianLatent:
        add_conv(params, prefix + ".mu", s.in_channels, s.out_channels, s.kernel, rng);
        add_conv(params, prefix + ".logvar", s.in_channels, s.out_channels, s.kernel, rng);
        break;
      default:
        break;
    }
  }
  return params;
}

template <typename T>
struct Interpreted {
  ag::DArray<T> output;
  std::optional<LatentGaussian<T>> latent;
};

template <typename T>
Interpreted<T> interpret(ag::Graph<T>& graph, const NetworkParams<T>& params, const ag::DArray<T>& x,
                         SeededRng* rng, LatentMode mode) {
  if (x.rank() != 4 || x.dim(1) != 3) {
    throw ShapeError(std::string(params.name()) + ": expected a [N,3,H,W] input, got " +
                     ag::shape_string(x.shape()));
  }
  Interpreted<T> result;
  ag::DArray<T> h = x;
  const auto& specs = params.layers();
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const LayerSpec& s = specs[i];
    const std::string prefix = layer_prefix(i);
    switch (s.kind) {
      case LayerKind::Conv:
        h = graph.conv2d(h, params.get(prefix + ".conv.weight"),
                         conv_has_bias(specs, i) ? params.get(prefix + ".conv.bias") : ag::DArray<T>{}, 1,
                         ag::Padding::same(static_cast<int>(s.kernel)));
        break;
      case LayerKind::BatchNorm:
        h = graph.batch_norm(h, params.get(prefix + ".bn.gamma"), params.get(prefix + ".bn.beta"));
        break;
      case LayerKind::LeakyRelu:
        h = graph.leaky_relu(h, T(kLeakySlope));
        break;
      case LayerKind::Relu:
        h = graph.relu(h);
        break;
      case LayerKind::MaxPool2:
        h = graph.max_pool2(h);
        break;
      case LayerKind::Upsample2:
        h = graph.upsample_nearest2(h);
        break;
      case LayerKind::Sigmoid:
        h = graph.sigmoid(h);
        break;
      case LayerKind::GaussianLatent: {
        const auto pad = ag::Padding::same(static_cast<int>(s.kernel));
        LatentGaussian<T> latent{
            graph.conv2d(h, params.get(prefix + ".mu.weight"), params.get(prefix + ".mu.bias"), 1, pad),
            graph.conv2d(h, params.get(prefix + ".logvar.weight"), params.get(prefix + ".logvar.bias"), 1,
                         pad)};
        if (mode == LatentMode::Mean) {
          h = latent.mu;
        } else {
          std::normal_distribution<double> normal(0.0, 1.0);
          std::vector<T> noise(latent.mu.size());
          for (auto& v : noise) v = static_cast<T>(normal(*rng));
          const auto eps = graph.constant(latent.mu.shape(), std::move(noise));
          const auto stddev = graph.exp(graph.scale(latent.log_var, T(0.5)));
          h = graph.add(latent.mu, graph.mul(stddev, eps));
        }
        result.latent = std::move(latent);
        break;
      }
    }
  }
  result.output = h;
  return result;
}

}  // namespace

std::string_view kind_name(NetworkKind kind) {
  switch (kind) {
    case NetworkKind::JNet: return "jnet";
    case NetworkKind::TNet: return "tnet";
    case NetworkKind::ANet: return "anet";
  }
  return "unknown";
}

std::vector<LayerSpec> hidden_stack_spec() {
  std::vector<LayerSpec> layers;
  std::size_t in = 3;
  for (std::size_t b = 0; b < kHiddenBlocks; ++b) {
    layers.push_back(conv(in, kHiddenWidth, 3));
    layers.push_back(norm(kHiddenWidth));
    layers.push_back(op(LayerKind::LeakyRelu));
    in = kHiddenWidth;
  }
  return layers;
}

template <typename T>
void NetworkParams<T>::add(std::string name, ag::DArray<T> array) {
  const auto clash = std::find_if(params_.begin(), params_.end(), [&](const auto& p) { return p.name == name; });
  if (clash != params_.end()) throw UsageError("duplicate parameter name: " + name);
  params_.push_back({std::move(name), std::move(array)});
}

template <typename T>
const ag::DArray<T>& NetworkParams<T>::get(std::string_view name) const {
  const auto it = std::find_if(params_.begin(), params_.end(), [&](const auto& p) { return p.name == name; });
  if (it == params_.end()) throw UsageError(std::string(kind_name(kind_)) + ": no parameter " + std::string(name));
  return it->array;
}

template <typename T>
ag::DArray<T>& NetworkParams<T>::get(std::string_view name) {
  return const_cast<ag::DArray<T>&>(std::as_const(*this).get(name));
}

template <typename T>
std::size_t NetworkParams<T>::scalar_count() const {
  std::size_t total = 0;
  for (const auto& p : params_) total += p.array.size();
  return total;
}

template <typename T>
bool NetworkParams<T>::all_finite() const {
  return std::all_of(params_.begin(), params_.end(), [](const auto& p) {
    const auto data = p.array.data();
    return std::all_of(data.begin(), data.end(), [](T v) { return std::isfinite(v); });
  });
}

template <typename T>
void NetworkParams<T>::zero_grad() {
  for (auto& p : params_) p.array.zero_grad();
}

template <typename T>
NetworkParams<T> build_jnet(std::uint64_t seed) {
  return build<T>(NetworkKind::JNet, plain_spec(3), seed);
}

template <typename T>
NetworkParams<T> build_tnet(std::uint64_t seed) {
  return build<T>(NetworkKind::TNet, plain_spec(1), seed);
}

template <typename T>
NetworkParams<T> build_anet(std::uint64_t seed) {
  return build<T>(NetworkKind::ANet, anet_spec(), seed);
}

template <typename T>
ag::DArray<T> forward_jnet(ag::Graph<T>& graph, const NetworkParams<T>& params, const ag::DArray<T>& x) {
  if (params.kind() != NetworkKind::JNet) throw UsageError("forward_jnet: got " + std::string(params.name()));
  return interpret(graph, params, x, nullptr, LatentMode::Mean).output;
}

template <typename T>
ag::DArray<T> forward_tnet(ag::Graph<T>& graph, const NetworkParams<T>& params, const ag::DArray<T>& x) {
  if (params.kind() != NetworkKind::TNet) throw UsageError("forward_tnet: got " + std::string(params.name()));
  return interpret(graph, params, x, nullptr, LatentMode::Mean).output;
}

template <typename T>
AnetOutput<T> forward_anet(ag::Graph<T>& graph, const NetworkParams<T>& params, const ag::DArray<T>& x,
                           SeededRng& rng, LatentMode mode) {
  if (params.kind() != NetworkKind::ANet) throw UsageError("forward_anet: got " + std::string(params.name()));
  if (x.rank() != 4 || x.dim(2) % kAnetDownsample != 0 || x.dim(3) % kAnetDownsample != 0) {
    throw ShapeError("forward_anet: spatial dims must be divisible by 16, got " + ag::shape_string(x.shape()));
  }
  auto result = interpret(graph, params, x, &rng, mode);
  if (!result.latent) throw UsageError("forward_anet: network has no latent layer");
  return {result.output, std::move(*result.latent)};
}

template <typename T>
void save_params(std::ostream& out, const NetworkParams<T>& params) {
  out << kSnapshotMagic << ' ' << kSnapshotVersion << '\n';
  out << "network " << params.name() << '\n';
  out << "count " << params.params().size() << '\n';
  out << std::setprecision(std::numeric_limits<T>::max_digits10);
  for (const auto& p : params.params()) {
    out << "param " << p.name << ' ' << p.array.rank();
    for (const auto d : p.array.shape()) out << ' ' << d;
    out << '\n';
    const auto data = p.array.data();
    for (std::size_t i = 0; i < data.size(); ++i) out << (i ? " " : "") << data[i];
    out << '\n';
  }
  if (!out) throw IoError("save_params: write failed");
}

template <typename T>
void load_params(std::istream& in, NetworkParams<T>& params) {
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != kSnapshotMagic) throw IoError("load_params: not a parameter snapshot");
  if (version != kSnapshotVersion) throw IoError("load_params: unsupported snapshot version " + std::to_string(version));
  std::string key;
  std::string network;
  std::size_t count = 0;
  in >> key >> network;
  if (key != "network" || network != params.name()) {
    throw IoError("load_params: snapshot is for network '" + network + "', expected '" +
                  std::string(params.name()) + "'");
  }
  in >> key >> count;
  if (key != "count" || count != params.params().size()) throw IoError("load_params: parameter count mismatch");
  for (std::size_t i = 0; i < count; ++i) {
    std::string name;
    std::size_t rank = 0;
    in >> key >> name >> rank;
    if (!in || key != "param") throw IoError("load_params: malformed parameter header");
    ag::Shape shape(rank);
    for (auto& d : shape) in >> d;
    auto& target = params.get(name);
    if (shape != target.shape()) {
      throw IoError("load_params: shape mismatch for " + name + ": snapshot " + ag::shape_string(shape) +
                    ", network " + ag::shape_string(target.shape()));
    }
    for (auto& v : target.mutable_data()) in >> v;
    if (!in) throw IoError("load_params: truncated values for " + name);
  }
}

#define HAZELAYER_INSTANTIATE(T)                                                                          \
  template class NetworkParams<T>;                                                                        \
  template NetworkParams<T> build_jnet<T>(std::uint64_t);                                                 \
  template NetworkParams<T> build_tnet<T>(std::uint64_t);                                                 \
  template NetworkParams<T> build_anet<T>(std::uint64_t);                                                 \
  template ag::DArray<T> forward_jnet<T>(ag::Graph<T>&, const NetworkParams<T>&, const ag::DArray<T>&);   \
  template ag::DArray<T> forward_tnet<T>(ag::Graph<T>&, const NetworkParams<T>&, const ag::DArray<T>&);   \
  template AnetOutput<T> forward_anet<T>(ag::Graph<T>&, const NetworkParams<T>&, const ag::DArray<T>&,    \
                                         SeededRng&, LatentMode);                                         \
  template void save_params<T>(std::ostream&, const NetworkParams<T>&);                                   \
  template void load_params<T>(std::istream&, NetworkParams<T>&);

HAZELAYER_INSTANTIATE(float)
HAZELAYER_INSTANTIATE(double)

#undef HAZELAYER_INSTANTIATE

}  // namespace hazelayer::nets
