// SPDX-License-Identifier: Apache-2.0
//
// Tape-based reverse-mode differentiation over dense NCHW arrays.
//
// A Graph records one forward pass. Every op allocates a fresh output node and
// pushes its backward rule onto the tape; since an op can only consume arrays
// that already exist, the tape is topologically ordered by construction and
// backward simply replays it in reverse. Leaves (parameters, constants) live
// outside any graph and persist across reset().
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace hazelayer::ag {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

template <typename T>
class Graph;

/// Cache-line aligned storage. Vectorized kernels choose their loop peeling
/// from the base address, so a fixed alignment keeps results bit-identical
/// from one allocation to the next.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

template <typename T>
struct Node {
  Shape shape;
  Buffer<T> data;
  Buffer<T> grad;
  bool requires_grad = false;
  // Zero for leaves; otherwise the id and generation of the producing graph.
  std::uint64_t graph_id = 0;
  std::uint64_t generation = 0;
};

/// Shared handle to a differentiable array. Copies alias the same storage.
template <typename T>
class DArray {
 public:
  DArray() = default;

  static DArray leaf(Shape shape, std::vector<T> values, bool requires_grad = false);
  static DArray zeros(Shape shape, bool requires_grad = false);
  static DArray filled(Shape shape, T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->data.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->graph_id == 0; }

  std::span<const T> data() const { return node_->data; }
  std::span<T> mutable_data() { return node_->data; }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad; }

  T item() const;
  void zero_grad();

  bool same_node(const DArray& other) const { return node_ == other.node_; }

 private:
  explicit DArray(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  std::shared_ptr<Node<T>> node_;
  friend class Graph<T>;
};

/// Zero padding added on each spatial border.
struct Padding {
  int amount = 0;
  static Padding same(int kernel) { return Padding{kernel / 2}; }
  static Padding valid() { return Padding{0}; }
};

template <typename T>
class Graph {
 public:
  Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Non-differentiable array owned by this pass.
  DArray<T> constant(Shape shape, std::vector<T> values);

  // Convolution and normalization. An undefined bias means no bias term.
  DArray<T> conv2d(const DArray<T>& input, const DArray<T>& kernel, const DArray<T>& bias, int stride,
                   Padding padding);
  DArray<T> batch_norm(const DArray<T>& input, const DArray<T>& gamma, const DArray<T>& beta,
                       T eps = T(1e-5));

  // Activations.
  DArray<T> relu(const DArray<T>& x);
  DArray<T> leaky_relu(const DArray<T>& x, T slope);
  DArray<T> sigmoid(const DArray<T>& x);

  // Resampling.
  DArray<T> max_pool2(const DArray<T>& x);
  DArray<T> upsample_nearest2(const DArray<T>& x);
  DArray<T> reshape(const DArray<T>& x, Shape shape);

  // Elementwise binary ops with right-aligned broadcasting.
  DArray<T> add(const DArray<T>& a, const DArray<T>& b);
  DArray<T> sub(const DArray<T>& a, const DArray<T>& b);
  DArray<T> mul(const DArray<T>& a, const DArray<T>& b);
  /// Throws NumericError if b contains an exact zero; callers guard with eps.
  DArray<T> div(const DArray<T>& a, const DArray<T>& b);

  // Elementwise unary ops.
  DArray<T> scale(const DArray<T>& x, T factor);
  DArray<T> add_scalar(const DArray<T>& x, T offset);
  DArray<T> exp(const DArray<T>& x);
  DArray<T> log(const DArray<T>& x);
  DArray<T> square(const DArray<T>& x);
  DArray<T> sqrt(const DArray<T>& x);

  // Reductions. Per-axis variants keep the reduced axis with extent 1.
  DArray<T> sum(const DArray<T>& x);
  DArray<T> mean(const DArray<T>& x);
  DArray<T> sum(const DArray<T>& x, std::size_t axis);
  DArray<T> mean(const DArray<T>& x, std::size_t axis);

  /// Max / min over axis 1 of an [N,3,H,W] array, giving [N,1,H,W].
  DArray<T> max3(const DArray<T>& x);
  DArray<T> min3(const DArray<T>& x);

  /// Populates grads of every array reachable from a one-element root.
  void backward(const DArray<T>& root);

  /// Drops the tape. Arrays produced before the reset become stale.
  void reset();

  std::size_t op_count() const { return tape_.size(); }

  /// When on, relu, leaky_relu, max_pool2, max3 and min3 fold the branch every
  /// element takes into a running signature. Two evaluations with equal
  /// signatures stayed on the same side of every kink and tie.
  void track_branches(bool on) { track_branches_ = on; }
  std::uint64_t branch_signature() const { return signature_; }

 private:
  DArray<T> make_output(Shape shape, bool requires_grad);
  void check_live(const DArray<T>& x, const char* op) const;
  void record(std::function<void()> rule);
  DArray<T> binary(const DArray<T>& a, const DArray<T>& b, int op);
  DArray<T> channel_extreme(const DArray<T>& x, bool take_max);
  DArray<T> axis_reduce(const DArray<T>& x, std::size_t axis, bool average);
  DArray<T> rectify(const DArray<T>& x, T slope, const char* name);
  void fold_branch(std::uint64_t choice) { signature_ = (signature_ ^ choice) * 0x100000001b3ULL; }

  std::vector<std::function<void()>> tape_;
  std::uint64_t id_;
  std::uint64_t generation_ = 1;
  bool backward_done_ = false;
  bool track_branches_ = false;
  std::uint64_t signature_ = 0xcbf29ce484222325ULL;
};

extern template class DArray<float>;
extern template class DArray<double>;
extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace hazelayer::ag
