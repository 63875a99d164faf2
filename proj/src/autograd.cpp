// SPDX-License-Identifier: Apache-2.0
#include "hazelayer/autograd.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>

#include "hazelayer/error.hpp"

namespace hazelayer::ag {

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

std::atomic<std::uint64_t> next_graph_id{1};

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Broadcast {
  Shape out;
  std::vector<std::size_t> a_strides;
  std::vector<std::size_t> b_strides;
  bool trivial = false;
};

std::vector<std::size_t> padded_strides(const Shape& shape, const Shape& out) {
  const std::size_t rank = out.size();
  const std::size_t offset = rank - shape.size();
  std::vector<std::size_t> strides(rank, 0);
  std::size_t stride = 1;
  for (std::size_t i = shape.size(); i-- > 0;) {
    strides[i + offset] = shape[i] == 1 ? 0 : stride;
    stride *= shape[i];
  }
  return strides;
}

Broadcast plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast bc;
  if (a == b) {
    bc.out = a;
    bc.trivial = true;
    return bc;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  bc.out.assign(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i + a.size() >= rank ? a[i + a.size() - rank] : 1;
    const std::size_t db = i + b.size() >= rank ? b[i + b.size() - rank] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_string(a) + " with " +
                       shape_string(b));
    }
    bc.out[i] = std::max(da, db);
  }
  bc.a_strides = padded_strides(a, bc.out);
  bc.b_strides = padded_strides(b, bc.out);
  return bc;
}

template <typename F>
void for_each_broadcast(const Broadcast& bc, F&& f) {
  const std::size_t n = element_count(bc.out);
  if (bc.trivial) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  const std::size_t rank = bc.out.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0;
  std::size_t ib = 0;
  for (std::size_t o = 0; o < n; ++o) {
    f(o, ia, ib);
    for (std::size_t ax = rank; ax-- > 0;) {
      ++idx[ax];
      ia += bc.a_strides[ax];
      ib += bc.b_strides[ax];
      if (idx[ax] < bc.out[ax]) break;
      ia -= bc.a_strides[ax] * bc.out[ax];
      ib -= bc.b_strides[ax] * bc.out[ax];
      idx[ax] = 0;
    }
  }
}

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, k, hout, wout;
  int stride, pad;
  std::size_t patch() const { return cin * k * k; }
  std::size_t pixels() const { return hout * wout; }
  bool direct() const { return k == 1 && stride == 1 && pad == 0; }
};

template <typename T>
void im2col(const ConvGeometry& g, const T* image, T* cols) {
  const auto k = static_cast<std::ptrdiff_t>(g.k);
  const auto h = static_cast<std::ptrdiff_t>(g.h);
  const auto w = static_cast<std::ptrdiff_t>(g.w);
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::ptrdiff_t ky = 0; ky < k; ++ky) {
      for (std::ptrdiff_t kx = 0; kx < k; ++kx) {
        T* row = cols + ((c * g.k + ky) * g.k + kx) * g.pixels();
        const T* plane = image + c * g.h * g.w;
        for (std::size_t oy = 0; oy < g.hout; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) * g.stride - g.pad + ky;
          T* dst = row + oy * g.wout;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + g.wout, T(0));
            continue;
          }
          for (std::size_t ox = 0; ox < g.wout; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox) * g.stride - g.pad + kx;
            dst[ox] = (ix < 0 || ix >= w) ? T(0) : plane[iy * w + ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const ConvGeometry& g, const T* cols, T* image) {
  const auto k = static_cast<std::ptrdiff_t>(g.k);
  const auto h = static_cast<std::ptrdiff_t>(g.h);
  const auto w = static_cast<std::ptrdiff_t>(g.w);
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::ptrdiff_t ky = 0; ky < k; ++ky) {
      for (std::ptrdiff_t kx = 0; kx < k; ++kx) {
        const T* row = cols + ((c * g.k + ky) * g.k + kx) * g.pixels();
        T* plane = image + c * g.h * g.w;
        for (std::size_t oy = 0; oy < g.hout; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) * g.stride - g.pad + ky;
          if (iy < 0 || iy >= h) continue;
          const T* src = row + oy * g.wout;
          for (std::size_t ox = 0; ox < g.wout; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox) * g.stride - g.pad + kx;
            if (ix >= 0 && ix < w) plane[iy * w + ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// DArray

template <typename T>
DArray<T> DArray<T>::leaf(Shape shape, std::vector<T> values, bool requires_grad) {
  if (shape.empty() || std::find(shape.begin(), shape.end(), 0) != shape.end()) {
    throw ShapeError("array shape must have positive dimensions, got " + shape_string(shape));
  }
  if (values.size() != element_count(shape)) {
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                     shape_string(shape));
  }
  auto node = std::make_shared<Node<T>>();
  node->grad.assign(values.size(), T(0));
  node->data.assign(values.begin(), values.end());
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return DArray(std::move(node));
}

template <typename T>
DArray<T> DArray<T>::zeros(Shape shape, bool requires_grad) {
  return filled(std::move(shape), T(0), requires_grad);
}

template <typename T>
DArray<T> DArray<T>::filled(Shape shape, T value, bool requires_grad) {
  const std::size_t n = element_count(shape);
  return leaf(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
T DArray<T>::item() const {
  if (size() != 1) {
    throw ShapeError("item() needs a one-element array, got " + shape_string(shape()));
  }
  return node_->data[0];
}

template <typename T>
void DArray<T>::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

// ---------------------------------------------------------------------------
// Graph bookkeeping

template <typename T>
Graph<T>::Graph() : id_(next_graph_id.fetch_add(1)) {}

template <typename T>
DArray<T> Graph<T>::make_output(Shape shape, bool requires_grad) {
  auto node = std::make_shared<Node<T>>();
  const std::size_t n = element_count(shape);
  node->shape = std::move(shape);
  node->data.assign(n, T(0));
  node->grad.assign(n, T(0));
  node->requires_grad = requires_grad;
  node->graph_id = id_;
  node->generation = generation_;
  return DArray<T>(std::move(node));
}

template <typename T>
void Graph<T>::check_live(const DArray<T>& x, const char* op) const {
  if (!x.defined()) throw GraphError(std::string(op) + ": undefined input array");
  const auto& node = *x.node_;
  if (node.graph_id != 0 && (node.graph_id != id_ || node.generation != generation_)) {
    throw GraphError(std::string(op) + ": input belongs to a stale or foreign graph");
  }
}

template <typename T>
void Graph<T>::record(std::function<void()> rule) {
  tape_.push_back(std::move(rule));
}

template <typename T>
DArray<T> Graph<T>::constant(Shape shape, std::vector<T> values) {
  auto leaf = DArray<T>::leaf(shape, std::move(values), false);
  auto out = make_output(std::move(shape), false);
  out.node_->data = std::move(leaf.node_->data);
  return out;
}

template <typename T>
void Graph<T>::backward(const DArray<T>& root) {
  check_live(root, "backward");
  if (root.is_leaf()) throw GraphError("backward: root was not produced by this graph");
  if (root.size() != 1) {
    throw GraphError("backward: root must have exactly one element, got shape " +
                     shape_string(root.shape()));
  }
  if (backward_done_) throw GraphError("backward: graph already differentiated; call reset() first");
  backward_done_ = true;
  if (!root.requires_grad()) return;
  root.node_->grad[0] += T(1);
  for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
}

template <typename T>
void Graph<T>::reset() {
  tape_.clear();
  ++generation_;
  backward_done_ = false;
}

// ---------------------------------------------------------------------------
// Convolution

template <typename T>
DArray<T> Graph<T>::conv2d(const DArray<T>& input, const DArray<T>& kernel, const DArray<T>& bias,
                           int stride, Padding padding) {
  check_live(input, "conv2d");
  check_live(kernel, "conv2d");
  const bool has_bias = bias.defined();
  if (has_bias) check_live(bias, "conv2d");
  if (input.rank() != 4 || kernel.rank() != 4) {
    throw ShapeError("conv2d: expected 4-d input and kernel, got input " + shape_string(input.shape()) +
                     " and kernel " + shape_string(kernel.shape()));
  }
  if (input.dim(1) != kernel.dim(1)) {
    throw ShapeError("conv2d: input channels of input " + shape_string(input.shape()) +
                     " do not match kernel " + shape_string(kernel.shape()));
  }
  if (kernel.dim(2) != kernel.dim(3) || kernel.dim(2) % 2 == 0) {
    throw ShapeError("conv2d: kernel must be square with odd size, got " + shape_string(kernel.shape()));
  }
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != kernel.dim(0))) {
    throw ShapeError("conv2d: bias " + shape_string(bias.shape()) + " does not match kernel " +
                     shape_string(kernel.shape()));
  }
  if (stride < 1 || padding.amount < 0) throw ShapeError("conv2d: stride must be >= 1 and padding >= 0");

  ConvGeometry g{};
  g.n = input.dim(0);
  g.cin = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.cout = kernel.dim(0);
  g.k = kernel.dim(2);
  g.stride = stride;
  g.pad = padding.amount;
  const auto span_h = static_cast<std::ptrdiff_t>(g.h) + 2 * g.pad - static_cast<std::ptrdiff_t>(g.k);
  const auto span_w = static_cast<std::ptrdiff_t>(g.w) + 2 * g.pad - static_cast<std::ptrdiff_t>(g.k);
  if (span_h < 0 || span_w < 0) {
    throw ShapeError("conv2d: kernel " + shape_string(kernel.shape()) + " larger than padded input " +
                     shape_string(input.shape()));
  }
  g.hout = static_cast<std::size_t>(span_h / stride + 1);
  g.wout = static_cast<std::size_t>(span_w / stride + 1);

  const bool needs_grad = input.requires_grad() || kernel.requires_grad() || (has_bias && bias.requires_grad());
  auto out = make_output({g.n, g.cout, g.hout, g.wout}, needs_grad);

  const std::size_t in_stride = g.cin * g.h * g.w;
  const std::size_t out_stride = g.cout * g.pixels();
  Buffer<T> cols(g.direct() ? 0 : g.patch() * g.pixels());
  Eigen::Map<const RowMat<T>> weights(kernel.node_->data.data(), g.cout, g.patch());
  for (std::size_t n = 0; n < g.n; ++n) {
    const T* image = input.node_->data.data() + n * in_stride;
    const T* col_data = image;
    if (!g.direct()) {
      im2col(g, image, cols.data());
      col_data = cols.data();
    }
    Eigen::Map<const RowMat<T>> col_mat(col_data, g.patch(), g.pixels());
    Eigen::Map<RowMat<T>> result(out.node_->data.data() + n * out_stride, g.cout, g.pixels());
    result.noalias() = weights * col_mat;
    if (has_bias) {
      for (std::size_t c = 0; c < g.cout; ++c) result.row(c).array() += bias.node_->data[c];
    }
  }

  if (needs_grad) {
    record([g, in = input.node_, ker = kernel.node_, b = bias.node_, o = out.node_, in_stride,
            out_stride]() {
      Eigen::Map<const RowMat<T>> weights(ker->data.data(), g.cout, g.patch());
      Eigen::Map<RowMat<T>> weight_grad(ker->grad.data(), g.cout, g.patch());
      Buffer<T> cols(g.direct() ? 0 : g.patch() * g.pixels());
      Buffer<T> col_grad(in->requires_grad ? g.patch() * g.pixels() : 0);
      for (std::size_t n = 0; n < g.n; ++n) {
        Eigen::Map<const RowMat<T>> upstream(o->grad.data() + n * out_stride, g.cout, g.pixels());
        if (b && b->requires_grad) {
          for (std::size_t c = 0; c < g.cout; ++c) b->grad[c] += upstream.row(c).sum();
        }
        if (ker->requires_grad) {
          const T* image = in->data.data() + n * in_stride;
          const T* col_data = image;
          if (!g.direct()) {
            im2col(g, image, cols.data());
            col_data = cols.data();
          }
          Eigen::Map<const RowMat<T>> col_mat(col_data, g.patch(), g.pixels());
          weight_grad.noalias() += upstream * col_mat.transpose();
        }
        if (in->requires_grad) {
          Eigen::Map<RowMat<T>> col_grad_mat(col_grad.data(), g.patch(), g.pixels());
          col_grad_mat.noalias() = weights.transpose() * upstream;
          col2im_add(g, col_grad.data(), in->grad.data() + n * in_stride);
        }
      }
    });
  }
  return out;
}

template <typename T>
DArray<T> Graph<T>::batch_norm(const DArray<T>& input, const DArray<T>& gamma, const DArray<T>& beta,
                               T eps) {
  check_live(input, "batch_norm");
  check_live(gamma, "batch_norm");
  check_live(beta, "batch_norm");
  if (!(eps > T(0))) throw ShapeError("batch_norm: eps must be positive");
  if (input.rank() != 4) throw ShapeError("batch_norm: expected 4-d input, got " + shape_string(input.shape()));
  const std::size_t n = input.dim(0);
  const std::size_t channels = input.dim(1);
  const std::size_t plane = input.dim(2) * input.dim(3);
  if (gamma.size() != channels || beta.size() != channels) {
    throw ShapeError("batch_norm: input " + shape_string(input.shape()) + " has " + std::to_string(channels) +
                     " channels but gamma " + shape_string(gamma.shape()) + " and beta " +
                     shape_string(beta.shape()));
  }
  const bool needs_grad = input.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  auto out = make_output(input.shape(), needs_grad);
  const std::size_t count = n * plane;
  std::vector<T> normalized(input.size());
  std::vector<T> inv_std(channels);
  const auto& x = input.node_->data;
  auto& y = out.node_->data;
  for (std::size_t c = 0; c < channels; ++c) {
    T total = 0;
    for (std::size_t b = 0; b < n; ++b) {
      const T* p = x.data() + (b * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) total += p[i];
    }
    const T mu = total / static_cast<T>(count);
    T var = 0;
    for (std::size_t b = 0; b < n; ++b) {
      const T* p = x.data() + (b * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) var += (p[i] - mu) * (p[i] - mu);
    }
    var /= static_cast<T>(count);
    const T istd = T(1) / std::sqrt(var + eps);
    inv_std[c] = istd;
    const T gm = gamma.node_->data[c];
    const T bt = beta.node_->data[c];
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t base = (b * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const T xh = (x[base + i] - mu) * istd;
        normalized[base + i] = xh;
        y[base + i] = gm * xh + bt;
      }
    }
  }
  if (needs_grad) {
    record([in = input.node_, gm = gamma.node_, bt = beta.node_, o = out.node_,
            normalized = std::move(normalized), inv_std = std::move(inv_std), n, channels, plane, count]() {
      for (std::size_t c = 0; c < channels; ++c) {
        T sum_dy = 0;
        T sum_dy_xh = 0;
        for (std::size_t b = 0; b < n; ++b) {
          const std::size_t base = (b * channels + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            sum_dy += o->grad[base + i];
            sum_dy_xh += o->grad[base + i] * normalized[base + i];
          }
        }
        if (gm->requires_grad) gm->grad[c] += sum_dy_xh;
        if (bt->requires_grad) bt->grad[c] += sum_dy;
        if (!in->requires_grad) continue;
        // dx = gamma * istd / M * (M*dy - sum(dy) - xhat * sum(dy*xhat))
        const T m = static_cast<T>(count);
        const T factor = gm->data[c] * inv_std[c] / m;
        for (std::size_t b = 0; b < n; ++b) {
          const std::size_t base = (b * channels + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            in->grad[base + i] +=
                factor * (m * o->grad[base + i] - sum_dy - normalized[base + i] * sum_dy_xh);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Activations and elementwise unary ops

namespace {

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace

#define HAZELAYER_UNARY(NAME, FORWARD, DERIVATIVE)                                       \
  template <typename T>                                                                  \
  DArray<T> Graph<T>::NAME(const DArray<T>& input) {                                     \
    check_live(input, #NAME);                                                            \
    auto out = make_output(input.shape(), input.requires_grad());                        \
    const auto& xs = input.node_->data;                                                  \
    auto& ys = out.node_->data;                                                          \
    for (std::size_t i = 0; i < xs.size(); ++i) {                                        \
      const T x = xs[i];                                                                 \
      ys[i] = (FORWARD);                                                                 \
    }                                                                                    \
    if (input.requires_grad()) {                                                         \
      record([in = input.node_, o = out.node_]() {                                       \
        for (std::size_t i = 0; i < in->data.size(); ++i) {                              \
          const T x = in->data[i];                                                       \
          const T y = o->data[i];                                                        \
          (void)x;                                                                       \
          (void)y;                                                                       \
          in->grad[i] += o->grad[i] * (DERIVATIVE);                                      \
        }                                                                                \
      });                                                                                \
    }                                                                                    \
    return out;                                                                          \
  }

HAZELAYER_UNARY(sigmoid, stable_sigmoid(x), y * (T(1) - y))
HAZELAYER_UNARY(exp, std::exp(x), y)
HAZELAYER_UNARY(log, std::log(x), T(1) / x)
HAZELAYER_UNARY(square, x * x, T(2) * x)
HAZELAYER_UNARY(sqrt, std::sqrt(x), T(0.5) / y)

#undef HAZELAYER_UNARY

template <typename T>
DArray<T> Graph<T>::rectify(const DArray<T>& input, T slope, const char* name) {
  check_live(input, name);
  auto out = make_output(input.shape(), input.requires_grad());
  const auto& xs = input.node_->data;
  auto& ys = out.node_->data;
  for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = xs[i] >= T(0) ? xs[i] : slope * xs[i];
  if (track_branches_) {
    for (const T x : xs) fold_branch(x >= T(0));
  }
  if (input.requires_grad()) {
    record([in = input.node_, o = out.node_, slope]() {
      for (std::size_t i = 0; i < in->data.size(); ++i) {
        in->grad[i] += o->grad[i] * (in->data[i] >= T(0) ? T(1) : slope);
      }
    });
  }
  return out;
}

template <typename T>
DArray<T> Graph<T>::relu(const DArray<T>& input) {
  return rectify(input, T(0), "relu");
}

template <typename T>
DArray<T> Graph<T>::leaky_relu(const DArray<T>& input, T slope) {
  if (slope < T(0) || slope >= T(1)) throw ShapeError("leaky_relu: slope must lie in [0, 1)");
  return rectify(input, slope, "leaky_relu");
}

template <typename T>
DArray<T> Graph<T>::scale(const DArray<T>& input, T factor) {
  check_live(input, "scale");
  auto out = make_output(input.shape(), input.requires_grad());
  const auto& xs = input.node_->data;
  auto& ys = out.node_->data;
  for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = xs[i] * factor;
  if (input.requires_grad()) {
    record([in = input.node_, o = out.node_, factor]() {
      for (std::size_t i = 0; i < in->grad.size(); ++i) in->grad[i] += o->grad[i] * factor;
    });
  }
  return out;
}

template <typename T>
DArray<T> Graph<T>::add_scalar(const DArray<T>& input, T offset) {
  check_live(input, "add_scalar");
  auto out = make_output(input.shape(), input.requires_grad());
  const auto& xs = input.node_->data;
  auto& ys = out.node_->data;
  for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = xs[i] + offset;
  if (input.requires_grad()) {
    record([in = input.node_, o = out.node_]() {
      for (std::size_t i = 0; i < in->grad.size(); ++i) in->grad[i] += o->grad[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Resampling

template <typename T>
DArray<T> Graph<T>::max_pool2(const DArray<T>& input) {
  check_live(input, "max_pool2");
  if (input.rank() != 4) throw ShapeError("max_pool2: expected 4-d input, got " + shape_string(input.shape()));
  const std::size_t planes = input.dim(0) * input.dim(1);
  const std::size_t h = input.dim(2);
  const std::size_t w = input.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("max_pool2: spatial dims must be even, got " + shape_string(input.shape()));
  }
  const std::size_t ho = h / 2;
  const std::size_t wo = w / 2;
  auto out = make_output({input.dim(0), input.dim(1), ho, wo}, input.requires_grad());
  std::vector<std::size_t> winners(out.size());
  const auto& xs = input.node_->data;
  auto& ys = out.node_->data;
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        const std::size_t base = p * h * w + (2 * oy) * w + 2 * ox;
        // Scan order (0,0),(0,1),(1,0),(1,1); strict comparison keeps the lowest index on ties.
        const std::size_t candidates[4] = {base, base + 1, base + w, base + w + 1};
        std::size_t best = candidates[0];
        for (std::size_t c = 1; c < 4; ++c) {
          if (xs[candidates[c]] > xs[best]) best = candidates[c];
        }
        const std::size_t o = (p * ho + oy) * wo + ox;
        winners[o] = best;
        ys[o] = xs[best];
        if (track_branches_) fold_branch(best - base);
      }
    }
  }
  if (input.requires_grad()) {
    record([in = input.node_, o = out.node_, winners = std::move(winners)]() {
      for (std::size_t i = 0; i < winners.size(); ++i) in->grad[winners[i]] += o->grad[i];
    });
  }
  return out;
}

template <typename T>
DArray<T> Graph<T>::upsample_nearest2(const DArray<T>& input) {
  check_live(input, "upsample_nearest2");
  if (input.rank() != 4) {
    throw ShapeError("upsample_nearest2: expected 4-d input, got " + shape_string(input.shape()));
  }
  const std::size_t planes = input.dim(0) * input.dim(1);
  const std::size_t h = input.dim(2);
  const std::size_t w = input.dim(3);
  auto out = make_output({input.dim(0), input.dim(1), 2 * h, 2 * w}, input.requires_grad());
  const auto& xs = input.node_->data;
  auto& ys = out.node_->data;
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < 2 * h; ++y) {
      for (std::size_t x = 0; x < 2 * w; ++x) {
        ys[(p * 2 * h + y) * 2 * w + x] = xs[(p * h + y / 2) * w + x / 2];
      }
    }
  }
  if (input.requires_grad()) {
    record([in = input.node_, o = out.node_, planes, h, w]() {
      for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t y = 0; y < 2 * h; ++y) {
          for (std::size_t x = 0; x < 2 * w; ++x) {
            in->grad[(p * h + y / 2) * w + x / 2] += o->grad[(p * 2 * h + y) * 2 * w + x];
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
DArray<T> Graph<T>::reshape(const DArray<T>& input, Shape shape) {
  check_live(input, "reshape");
  if (element_count(shape) != input.size()) {
    throw ShapeError("reshape: cannot view " + shape_string(input.shape()) + " as " + shape_string(shape));
  }
  auto out = make_output(std::move(shape), input.requires_grad());
  out.node_->data = input.node_->data;
  if (input.requires_grad()) {
    record([in = input.node_, o = out.node_]() {
      for (std::size_t i = 0; i < in->grad.size(); ++i) in->grad[i] += o->grad[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Binary ops

template <typename T>
DArray<T> Graph<T>::binary(const DArray<T>& a, const DArray<T>& b, int op) {
  static constexpr const char* names[] = {"add", "sub", "mul", "div"};
  check_live(a, names[op]);
  check_live(b, names[op]);
  const Broadcast bc = plan_broadcast(a.shape(), b.shape(), names[op]);
  const auto& xa = a.node_->data;
  const auto& xb = b.node_->data;
  if (op == 3 && std::find(xb.begin(), xb.end(), T(0)) != xb.end()) {
    throw NumericError("div: denominator contains zeros; add an eps guard");
  }
  const bool needs_grad = a.requires_grad() || b.requires_grad();
  auto out = make_output(bc.out, needs_grad);
  auto& y = out.node_->data;
  switch (op) {
    case 0: for_each_broadcast(bc, [&](std::size_t o, std::size_t i, std::size_t j) { y[o] = xa[i] + xb[j]; }); break;
    case 1: for_each_broadcast(bc, [&](std::size_t o, std::size_t i, std::size_t j) { y[o] = xa[i] - xb[j]; }); break;
    case 2: for_each_broadcast(bc, [&](std::size_t o, std::size_t i, std::size_t j) { y[o] = xa[i] * xb[j]; }); break;
    default: for_each_broadcast(bc, [&](std::size_t o, std::size_t i, std::size_t j) { y[o] = xa[i] / xb[j]; }); break;
  }
  if (needs_grad) {
    record([na = a.node_, nb = b.node_, o = out.node_, bc, op]() {
      const bool ga = na->requires_grad;
      const bool gb = nb->requires_grad;
      const auto& g = o->grad;
      const auto& xa = na->data;
      const auto& xb = nb->data;
      for_each_broadcast(bc, [&](std::size_t k, std::size_t i, std::size_t j) {
        switch (op) {
          case 0:
            if (ga) na->grad[i] += g[k];
            if (gb) nb->grad[j] += g[k];
            break;
          case 1:
            if (ga) na->grad[i] += g[k];
            if (gb) nb->grad[j] -= g[k];
            break;
          case 2:
            if (ga) na->grad[i] += g[k] * xb[j];
            if (gb) nb->grad[j] += g[k] * xa[i];
            break;
          default:
            if (ga) na->grad[i] += g[k] / xb[j];
            if (gb) nb->grad[j] -= g[k] * xa[i] / (xb[j] * xb[j]);
            break;
        }
      });
    });
  }
  return out;
}

template <typename T>
DArray<T> Graph<T>::add(const DArray<T>& a, const DArray<T>& b) {
  return binary(a, b, 0);
}
template <typename T>
DArray<T> Graph<T>::sub(const DArray<T>& a, const DArray<T>& b) {
  return binary(a, b, 1);
}
template <typename T>
DArray<T> Graph<T>::mul(const DArray<T>& a, const DArray<T>& b) {
  return binary(a, b, 2);
}
template <typename T>
DArray<T> Graph<T>::div(const DArray<T>& a, const DArray<T>& b) {
  return binary(a, b, 3);
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
DArray<T> Graph<T>::sum(const DArray<T>& input) {
  check_live(input, "sum");
  auto out = make_output({1}, input.requires_grad());
  T total = 0;
  for (const T v : input.node_->data) total += v;
  out.node_->data[0] = total;
  if (input.requires_grad()) {
    record([in = input.node_, o = out.node_]() {
      const T g = o->grad[0];
      for (auto& v : in->grad) v += g;
    });
  }
  return out;
}

template <typename T>
DArray<T> Graph<T>::mean(const DArray<T>& input) {
  check_live(input, "mean");
  auto out = make_output({1}, input.requires_grad());
  const T count = static_cast<T>(input.size());
  T total = 0;
  for (const T v : input.node_->data) total += v;
  out.node_->data[0] = total / count;
  if (input.requires_grad()) {
    record([in = input.node_, o = out.node_, count]() {
      const T g = o->grad[0] / count;
      for (auto& v : in->grad) v += g;
    });
  }
  return out;
}

template <typename T>
DArray<T> Graph<T>::axis_reduce(const DArray<T>& input, std::size_t axis, bool average) {
  check_live(input, average ? "mean" : "sum");
  if (axis >= input.rank()) {
    throw ShapeError("reduction axis " + std::to_string(axis) + " out of range for " +
                     shape_string(input.shape()));
  }
  const Shape& s = input.shape();
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t extent = s[axis];
  Shape reduced = s;
  reduced[axis] = 1;
  auto out = make_output(std::move(reduced), input.requires_grad());
  const T norm = average ? T(1) / static_cast<T>(extent) : T(1);
  const auto& xs = input.node_->data;
  auto& ys = out.node_->data;
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      T total = 0;
      for (std::size_t e = 0; e < extent; ++e) total += xs[(o * extent + e) * inner + i];
      ys[o * inner + i] = total * norm;
    }
  }
  if (input.requires_grad()) {
    record([in = input.node_, out_node = out.node_, outer, inner, extent, norm]() {
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
          const T g = out_node->grad[o * inner + i] * norm;
          for (std::size_t e = 0; e < extent; ++e) in->grad[(o * extent + e) * inner + i] += g;
        }
      }
    });
  }
  return out;
}

template <typename T>
DArray<T> Graph<T>::sum(const DArray<T>& x, std::size_t axis) {
  return axis_reduce(x, axis, false);
}

template <typename T>
DArray<T> Graph<T>::mean(const DArray<T>& x, std::size_t axis) {
  return axis_reduce(x, axis, true);
}

template <typename T>
DArray<T> Graph<T>::channel_extreme(const DArray<T>& input, bool take_max) {
  const char* name = take_max ? "max3" : "min3";
  check_live(input, name);
  if (input.rank() != 4 || input.dim(1) != 3) {
    throw ShapeError(std::string(name) + ": expected [N,3,H,W], got " + shape_string(input.shape()));
  }
  const std::size_t n = input.dim(0);
  const std::size_t plane = input.dim(2) * input.dim(3);
  auto out = make_output({n, 1, input.dim(2), input.dim(3)}, input.requires_grad());
  std::vector<std::size_t> winners(out.size());
  const auto& xs = input.node_->data;
  auto& ys = out.node_->data;
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < plane; ++i) {
      std::size_t best = b * 3 * plane + i;
      for (std::size_t c = 1; c < 3; ++c) {
        const std::size_t idx = (b * 3 + c) * plane + i;
        if (take_max ? xs[idx] > xs[best] : xs[idx] < xs[best]) best = idx;
      }
      winners[b * plane + i] = best;
      ys[b * plane + i] = xs[best];
      if (track_branches_) fold_branch(best);
    }
  }
  if (input.requires_grad()) {
    record([in = input.node_, o = out.node_, winners = std::move(winners)]() {
      for (std::size_t i = 0; i < winners.size(); ++i) in->grad[winners[i]] += o->grad[i];
    });
  }
  return out;
}

template <typename T>
DArray<T> Graph<T>::max3(const DArray<T>& x) {
  return channel_extreme(x, true);
}

template <typename T>
DArray<T> Graph<T>::min3(const DArray<T>& x) {
  return channel_extreme(x, false);
}

template class DArray<float>;
template class DArray<double>;
template class Graph<float>;
template class Graph<double>;

}  // namespace hazelayer::ag
