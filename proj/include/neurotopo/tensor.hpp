#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace neurotopo {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major array.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{});
  Tensor(Shape shape, std::vector<T> data);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  Tensor reshaped(Shape shape) const;
  void fill(T v);
  bool all_finite() const;

  static Tensor normal(Shape shape, T stddev, std::mt19937_64& rng);
  static Tensor uniform(Shape shape, T lo, T hi, std::mt19937_64& rng);

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

// A value in the differentiation graph. Leaves are constants or parameters;
// interior nodes remember their parents and how to push gradients to them.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until a gradient reaches this node
  bool requires_grad{false};
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  bool backward_done{false};

  // Adds g into grad, allocating it on first use.
  void accumulate(const Tensor<T>& g);
  Tensor<T>& grad_buffer();
  void zero_grad() { grad = Tensor<T>(); }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> constant(Tensor<T> value);
template <typename T>
Var<T> parameter(Tensor<T> value);
// Same value, cut from the graph.
template <typename T>
Var<T> detach(const Var<T>& x);

template <typename T>
Var<T> relu(const Var<T>& x);
template <typename T>
Var<T> sigmoid(const Var<T>& x);

// Along the last axis, max-shifted.
template <typename T>
Var<T> softmax(const Var<T>& x);

struct ConvGeometry {
  std::size_t stride{1};
  std::size_t padding{2};
};

// x: N x C x H x W, w: F x C x KH x KW, b: F. Cross-correlation plus bias.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, ConvGeometry geo = {});
// Transposed convolution. x: N x C x H x W, w: C x F x K x K, b: F.
// Output spatial size (H - 1) * stride - 2 * padding + K.
template <typename T>
Var<T> upconv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, ConvGeometry geo = {2, 1});
// 2x2 non-overlapping max, floor semantics, first-index tie-break.
template <typename T>
Var<T> maxpool2(const Var<T>& x);
// x: N x I, w: I x O, b: O.
template <typename T>
Var<T> dense(const Var<T>& x, const Var<T>& w, const Var<T>& b);
template <typename T>
Var<T> flatten(const Var<T>& x);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> scale(const Var<T>& a, double factor);
template <typename T>
Var<T> sum(const Var<T>& a);

// Mean over rows of -log(max(p[label], 1e-12)).
template <typename T>
Var<T> cross_entropy(const Var<T>& probs, std::span<const int> labels);
// Sum of |a - b| over every element.
template <typename T>
Var<T> l1_loss(const Var<T>& a, const Var<T>& b);

// Reverse-topological gradient accumulation from a scalar root. A root may be
// back-propagated only once.
template <typename T>
void backward(const Var<T>& root);

struct AdamOptions {
  double lr{1e-3};
  double beta1{0.9};
  double beta2{0.999};
  double eps{1e-8};
};

template <typename T>
struct AdamState {
  AdamOptions options;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::int64_t t{0};
};

// Bias-corrected Adam update of every parameter from its accumulated gradient
// (missing gradients count as zero). Gradients are cleared afterwards.
template <typename T>
void adam_step(std::span<const Var<T>> params, AdamState<T>& state);

} // namespace neurotopo
