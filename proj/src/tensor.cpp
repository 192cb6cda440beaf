#include "neurotopo/tensor.hpp"

#include "neurotopo/error.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace neurotopo {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

[[noreturn]] void shape_error(const std::string& what) { throw DomainError("tensor", what); }

template <typename T>
Var<T> make_node(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> fn) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  for (const auto& p : parents) node->requires_grad = node->requires_grad || p->requires_grad;
  if (node->requires_grad) {
    node->parents = std::move(parents);
    node->backward_fn = std::move(fn);
  }
  return node;
}

// Geometry of one convolution: input (C, H, W), kernel (KH, KW), output (OH, OW).
struct Im2Col {
  std::size_t c, h, w, kh, kw, oh, ow, stride, pad;

  std::size_t rows() const { return c * kh * kw; }
  std::size_t cols() const { return oh * ow; }

  // Output columns x whose input column x * stride + k - pad lies in [0, w).
  std::pair<std::size_t, std::size_t> valid_x(std::size_t k) const {
    const auto s = static_cast<std::ptrdiff_t>(stride);
    const auto off = static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(pad);
    std::ptrdiff_t lo = off >= 0 ? 0 : (-off + s - 1) / s;
    std::ptrdiff_t hi = static_cast<std::ptrdiff_t>(w) - 1 - off;
    hi = hi < 0 ? 0 : hi / s + 1;
    lo = std::min<std::ptrdiff_t>(lo, static_cast<std::ptrdiff_t>(ow));
    hi = std::clamp<std::ptrdiff_t>(hi, lo, static_cast<std::ptrdiff_t>(ow));
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
  }

  template <typename T>
  void gather(const T* img, T* col, std::size_t ld) const {
    for (std::size_t ci = 0; ci < c; ++ci) {
      for (std::size_t ki = 0; ki < kh; ++ki) {
        for (std::size_t kj = 0; kj < kw; ++kj) {
          T* dst = col + ((ci * kh + ki) * kw + kj) * ld;
          const auto [x0, x1] = valid_x(kj);
          for (std::size_t y = 0; y < oh; ++y) {
            const auto iy = static_cast<std::ptrdiff_t>(y * stride + ki) - static_cast<std::ptrdiff_t>(pad);
            T* row = dst + y * ow;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
              std::fill(row, row + ow, T{});
              continue;
            }
            const T* src = img + (ci * h + static_cast<std::size_t>(iy)) * w;
            const auto off = static_cast<std::ptrdiff_t>(kj) - static_cast<std::ptrdiff_t>(pad);
            std::fill(row, row + x0, T{});
            if (stride == 1) {
              if (x1 > x0) std::copy(src + (static_cast<std::ptrdiff_t>(x0) + off), src + (static_cast<std::ptrdiff_t>(x1) + off), row + x0);
            } else {
              for (std::size_t x = x0; x < x1; ++x) row[x] = src[static_cast<std::ptrdiff_t>(x * stride) + off];
            }
            std::fill(row + x1, row + ow, T{});
          }
        }
      }
    }
  }

  template <typename T>
  void scatter_add(const T* col, T* img, std::size_t ld) const {
    for (std::size_t ci = 0; ci < c; ++ci) {
      for (std::size_t ki = 0; ki < kh; ++ki) {
        for (std::size_t kj = 0; kj < kw; ++kj) {
          const T* src = col + ((ci * kh + ki) * kw + kj) * ld;
          const auto [x0, x1] = valid_x(kj);
          for (std::size_t y = 0; y < oh; ++y) {
            const auto iy = static_cast<std::ptrdiff_t>(y * stride + ki) - static_cast<std::ptrdiff_t>(pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            T* dst = img + (ci * h + static_cast<std::size_t>(iy)) * w;
            const auto off = static_cast<std::ptrdiff_t>(kj) - static_cast<std::ptrdiff_t>(pad);
            const T* row = src + y * ow;
            for (std::size_t x = x0; x < x1; ++x) dst[static_cast<std::ptrdiff_t>(x * stride) + off] += row[x];
          }
        }
      }
    }
  }
};

// Per-thread work buffers, reused across calls. Contents are unspecified.
template <typename T>
T* scratch(std::size_t n, int slot) {
  thread_local std::vector<T> buf[2];
  if (buf[slot].size() < n) buf[slot].resize(n);
  return buf[slot].data();
}

// Samples per im2col block so that one GEMM sees a few thousand columns.
std::size_t chunk_samples(std::size_t cols_per_sample, std::size_t n) {
  constexpr std::size_t kTargetCols = 4096;
  const std::size_t c = std::max<std::size_t>(1, kTargetCols / std::max<std::size_t>(1, cols_per_sample));
  return std::min(c, std::max<std::size_t>(1, n));
}

std::size_t conv_out(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  if (in + 2 * pad < k) shape_error("kernel larger than padded input");
  return (in + 2 * pad - k) / stride + 1;
}

} // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += 'x';
    s += std::to_string(shape[i]);
  }
  return s;
}

// ---------------------------------------------------------------- Tensor

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_size(shape_)) shape_error("data length does not match shape " + shape_string(shape_));
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) shape_error("cannot reshape to " + shape_string(shape));
  return Tensor(std::move(shape), data_);
}

template <typename T>
void Tensor<T>::fill(T v) {
  std::fill(data_.begin(), data_.end(), v);
}

template <typename T>
bool Tensor<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
Tensor<T> Tensor<T>::normal(Shape shape, T stddev, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
  for (auto& v : t.data_) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::uniform(Shape shape, T lo, T hi, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
  for (auto& v : t.data_) v = static_cast<T>(dist(rng));
  return t;
}

// ---------------------------------------------------------------- Node

template <typename T>
Tensor<T>& Node<T>::grad_buffer() {
  if (grad.size() != value.size() || grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
  return grad;
}

template <typename T>
void Node<T>::accumulate(const Tensor<T>& g) {
  auto& buf = grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

template <typename T>
Var<T> constant(Tensor<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  return n;
}

template <typename T>
Var<T> parameter(Tensor<T> value) {
  auto n = constant(std::move(value));
  n->requires_grad = true;
  return n;
}

template <typename T>
Var<T> detach(const Var<T>& x) {
  return constant(x->value);
}

// ---------------------------------------------------------------- elementwise

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out = x->value;
  for (auto& v : out.values()) v = v > T{} ? v : T{};
  return make_node<T>(std::move(out), {x}, [x](Node<T>& self) {
    if (!x->requires_grad) return;
    auto& g = x->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x->value[i] > T{}) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> out = x->value;
  for (auto& v : out.values()) v = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(v))));
  return make_node<T>(std::move(out), {x}, [x](Node<T>& self) {
    if (!x->requires_grad) return;
    auto& g = x->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T y = self.value[i];
      g[i] += self.grad[i] * y * (T{1} - y);
    }
  });
}

template <typename T>
Var<T> softmax(const Var<T>& x) {
  const auto& in = x->value;
  if (in.rank() == 0) shape_error("softmax of a rank-0 tensor");
  const std::size_t k = in.shape().back();
  const std::size_t rows = in.size() / k;
  Tensor<T> out(in.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = in.data() + r * k;
    T* dst = out.data() + r * k;
    const T mx = *std::max_element(src, src + k);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) total += std::exp(static_cast<double>(src[j] - mx));
    for (std::size_t j = 0; j < k; ++j) dst[j] = static_cast<T>(std::exp(static_cast<double>(src[j] - mx)) / total);
  }
  return make_node<T>(std::move(out), {x}, [x, k, rows](Node<T>& self) {
    if (!x->requires_grad) return;
    auto& g = x->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.value.data() + r * k;
      const T* dy = self.grad.data() + r * k;
      double dot = 0.0;
      for (std::size_t j = 0; j < k; ++j) dot += static_cast<double>(y[j]) * dy[j];
      for (std::size_t j = 0; j < k; ++j) g[r * k + j] += static_cast<T>(y[j] * (dy[j] - dot));
    }
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (a->value.shape() != b->value.shape()) shape_error("add: shape mismatch");
  Tensor<T> out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
  return make_node<T>(std::move(out), {a, b}, [a, b](Node<T>& self) {
    if (a->requires_grad) a->accumulate(self.grad);
    if (b->requires_grad) b->accumulate(self.grad);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  if (a->value.shape() != b->value.shape()) shape_error("sub: shape mismatch");
  Tensor<T> out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b->value[i];
  return make_node<T>(std::move(out), {a, b}, [a, b](Node<T>& self) {
    if (a->requires_grad) a->accumulate(self.grad);
    if (b->requires_grad) {
      auto& g = b->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  if (a->value.shape() != b->value.shape()) shape_error("mul: shape mismatch");
  Tensor<T> out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b->value[i];
  return make_node<T>(std::move(out), {a, b}, [a, b](Node<T>& self) {
    if (a->requires_grad) {
      auto& g = a->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * b->value[i];
    }
    if (b->requires_grad) {
      auto& g = b->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * a->value[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, double factor) {
  Tensor<T> out = a->value;
  for (auto& v : out.values()) v = static_cast<T>(v * factor);
  return make_node<T>(std::move(out), {a}, [a, factor](Node<T>& self) {
    if (!a->requires_grad) return;
    auto& g = a->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += static_cast<T>(self.grad[i] * factor);
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  double total = 0.0;
  for (T v : a->value.values()) total += v;
  return make_node<T>(Tensor<T>({1}, static_cast<T>(total)), {a}, [a](Node<T>& self) {
    if (!a->requires_grad) return;
    auto& g = a->grad_buffer();
    for (auto& v : g.values()) v += self.grad[0];
  });
}

template <typename T>
Var<T> flatten(const Var<T>& x) {
  if (x->value.rank() < 2) shape_error("flatten needs a batch axis");
  const std::size_t n = x->value.dim(0);
  Tensor<T> out = x->value.reshaped({n, x->value.size() / n});
  return make_node<T>(std::move(out), {x}, [x](Node<T>& self) {
    if (x->requires_grad) x->accumulate(self.grad);
  });
}

// ---------------------------------------------------------------- layers

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, ConvGeometry geo) {
  const auto& xs = x->value.shape();
  const auto& ws = w->value.shape();
  if (xs.size() != 4 || ws.size() != 4) shape_error("conv2d expects 4-d input and weights");
  if (xs[1] != ws[1]) shape_error("conv2d: input channels " + shape_string(xs) + " vs weights " + shape_string(ws));
  if (b->value.shape() != Shape{ws[0]}) shape_error("conv2d: bias shape mismatch");
  if (geo.stride == 0) shape_error("conv2d: zero stride");

  const std::size_t n = xs[0], f = ws[0];
  const Im2Col geom{xs[1], xs[2], xs[3], ws[2], ws[3],
                    conv_out(xs[2], ws[2], geo.stride, geo.padding),
                    conv_out(xs[3], ws[3], geo.stride, geo.padding), geo.stride, geo.padding};
  const std::size_t p = geom.cols();
  const std::size_t in_stride = geom.c * geom.h * geom.w;
  const std::size_t out_stride = f * p;
  const std::size_t chunk = chunk_samples(p, n);
  const auto rows = static_cast<Eigen::Index>(geom.rows());
  const auto fi = static_cast<Eigen::Index>(f);

  Tensor<T> out({n, f, geom.oh, geom.ow});
  const ConstMatMap<T> wm(w->value.data(), fi, rows);
  for (std::size_t i0 = 0; i0 < n; i0 += chunk) {
    const std::size_t m = std::min(chunk, n - i0);
    const std::size_t ld = m * p;
    T* cols = scratch<T>(geom.rows() * ld, 0);
    T* tmp = scratch<T>(f * ld, 1);
    for (std::size_t k = 0; k < m; ++k) geom.gather(x->value.data() + (i0 + k) * in_stride, cols + k * p, ld);
    MatMap<T> tm(tmp, fi, static_cast<Eigen::Index>(ld));
    tm.noalias() = wm * ConstMatMap<T>(cols, rows, static_cast<Eigen::Index>(ld));
    for (std::size_t k = 0; k < m; ++k) {
      for (std::size_t j = 0; j < f; ++j) {
        const T* src = tmp + j * ld + k * p;
        T* dst = out.data() + (i0 + k) * out_stride + j * p;
        const T bias = b->value[j];
        for (std::size_t q = 0; q < p; ++q) dst[q] = src[q] + bias;
      }
    }
  }

  return make_node<T>(std::move(out), {x, w, b}, [x, w, b, geom, n, f, p, in_stride, out_stride, chunk](Node<T>& self) {
    const auto rows = static_cast<Eigen::Index>(geom.rows());
    const auto fi = static_cast<Eigen::Index>(f);
    if (b->requires_grad) {
      auto& gb = b->grad_buffer();
      for (std::size_t j = 0; j < f; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const T* g = self.grad.data() + i * out_stride + j * p;
          for (std::size_t q = 0; q < p; ++q) s += g[q];
        }
        gb[j] += static_cast<T>(s);
      }
    }
    if (!w->requires_grad && !x->requires_grad) return;
    const ConstMatMap<T> wm(w->value.data(), fi, rows);
    for (std::size_t i0 = 0; i0 < n; i0 += chunk) {
      const std::size_t m = std::min(chunk, n - i0);
      const std::size_t ld = m * p;
      const auto ldi = static_cast<Eigen::Index>(ld);
      T* cols = scratch<T>(geom.rows() * ld, 0);
      T* gtmp = scratch<T>(f * ld, 1);
      for (std::size_t k = 0; k < m; ++k) {
        for (std::size_t j = 0; j < f; ++j) {
          const T* g = self.grad.data() + (i0 + k) * out_stride + j * p;
          std::copy(g, g + p, gtmp + j * ld + k * p);
        }
      }
      const ConstMatMap<T> gm(gtmp, fi, ldi);
      if (w->requires_grad) {
        for (std::size_t k = 0; k < m; ++k) geom.gather(x->value.data() + (i0 + k) * in_stride, cols + k * p, ld);
        MatMap<T> gw(w->grad_buffer().data(), fi, rows);
        gw.noalias() += gm * ConstMatMap<T>(cols, rows, ldi).transpose();
      }
      if (x->requires_grad) {
        MatMap<T> dcols(cols, rows, ldi);
        dcols.noalias() = wm.transpose() * gm;
        auto& gx = x->grad_buffer();
        for (std::size_t k = 0; k < m; ++k) geom.scatter_add(cols + k * p, gx.data() + (i0 + k) * in_stride, ld);
      }
    }
  });
}

template <typename T>
Var<T> upconv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, ConvGeometry geo) {
  const auto& xs = x->value.shape();
  const auto& ws = w->value.shape();
  if (xs.size() != 4 || ws.size() != 4) shape_error("upconv2d expects 4-d input and weights");
  if (xs[1] != ws[0]) shape_error("upconv2d: input channels " + shape_string(xs) + " vs weights " + shape_string(ws));
  if (b->value.shape() != Shape{ws[1]}) shape_error("upconv2d: bias shape mismatch");
  if (geo.stride == 0) shape_error("upconv2d: zero stride");
  const std::size_t n = xs[0], cin = xs[1], h = xs[2], wd = xs[3], f = ws[1], k = ws[2];
  if (ws[3] != k) shape_error("upconv2d expects square kernels");
  if ((h - 1) * geo.stride + k < 2 * geo.padding + 1) shape_error("upconv2d: padding too large");
  const std::size_t oh = (h - 1) * geo.stride + k - 2 * geo.padding;
  const std::size_t ow = (wd - 1) * geo.stride + k - 2 * geo.padding;
  // The adjoint convolution maps (f, oh, ow) to (cin, h, wd).
  const Im2Col geom{f, oh, ow, k, k, h, wd, geo.stride, geo.padding};
  if (conv_out(oh, k, geo.stride, geo.padding) != h || conv_out(ow, k, geo.stride, geo.padding) != wd) {
    shape_error("upconv2d: geometry is not invertible");
  }
  const std::size_t p = h * wd;
  const std::size_t in_stride = cin * p;
  const std::size_t out_stride = f * oh * ow;
  const std::size_t chunk = chunk_samples(p, n);
  const auto rows = static_cast<Eigen::Index>(geom.rows());
  const auto ci = static_cast<Eigen::Index>(cin);

  Tensor<T> out({n, f, oh, ow});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < f; ++j) {
      T* plane = out.data() + i * out_stride + j * oh * ow;
      std::fill(plane, plane + oh * ow, b->value[j]);
    }
  }
  const ConstMatMap<T> wm(w->value.data(), ci, rows);
  for (std::size_t i0 = 0; i0 < n; i0 += chunk) {
    const std::size_t m = std::min(chunk, n - i0);
    const std::size_t ld = m * p;
    T* xt = scratch<T>(cin * ld, 1);
    T* cols = scratch<T>(geom.rows() * ld, 0);
    for (std::size_t kk = 0; kk < m; ++kk) {
      for (std::size_t c = 0; c < cin; ++c) {
        const T* src = x->value.data() + (i0 + kk) * in_stride + c * p;
        std::copy(src, src + p, xt + c * ld + kk * p);
      }
    }
    MatMap<T> cm(cols, rows, static_cast<Eigen::Index>(ld));
    cm.noalias() = wm.transpose() * ConstMatMap<T>(xt, ci, static_cast<Eigen::Index>(ld));
    for (std::size_t kk = 0; kk < m; ++kk) geom.scatter_add(cols + kk * p, out.data() + (i0 + kk) * out_stride, ld);
  }

  return make_node<T>(std::move(out), {x, w, b}, [=](Node<T>& self) {
    if (b->requires_grad) {
      auto& gb = b->grad_buffer();
      for (std::size_t j = 0; j < f; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const T* g = self.grad.data() + i * out_stride + j * oh * ow;
          for (std::size_t q = 0; q < oh * ow; ++q) s += g[q];
        }
        gb[j] += static_cast<T>(s);
      }
    }
    if (!w->requires_grad && !x->requires_grad) return;
    const ConstMatMap<T> wm(w->value.data(), ci, rows);
    for (std::size_t i0 = 0; i0 < n; i0 += chunk) {
      const std::size_t m = std::min(chunk, n - i0);
      const std::size_t ld = m * p;
      const auto ldi = static_cast<Eigen::Index>(ld);
      T* cols = scratch<T>(geom.rows() * ld, 0);
      T* xt = scratch<T>(cin * ld, 1);
      for (std::size_t kk = 0; kk < m; ++kk) geom.gather(self.grad.data() + (i0 + kk) * out_stride, cols + kk * p, ld);
      const ConstMatMap<T> cm(cols, rows, ldi);
      if (w->requires_grad) {
        for (std::size_t kk = 0; kk < m; ++kk) {
          for (std::size_t c = 0; c < cin; ++c) {
            const T* src = x->value.data() + (i0 + kk) * in_stride + c * p;
            std::copy(src, src + p, xt + c * ld + kk * p);
          }
        }
        MatMap<T> gw(w->grad_buffer().data(), ci, rows);
        gw.noalias() += ConstMatMap<T>(xt, ci, ldi) * cm.transpose();
      }
      if (x->requires_grad) {
        MatMap<T> gxt(xt, ci, ldi);
        gxt.noalias() = wm * cm;
        auto& gx = x->grad_buffer();
        for (std::size_t kk = 0; kk < m; ++kk) {
          for (std::size_t c = 0; c < cin; ++c) {
            const T* src = xt + c * ld + kk * p;
            T* dst = gx.data() + (i0 + kk) * in_stride + c * p;
            for (std::size_t q = 0; q < p; ++q) dst[q] += src[q];
          }
        }
      }
    }
  });
}

template <typename T>
Var<T> maxpool2(const Var<T>& x) {
  const auto& xs = x->value.shape();
  if (xs.size() != 4) shape_error("maxpool2 expects a 4-d input");
  if (xs[2] < 2 || xs[3] < 2) shape_error("maxpool2 input smaller than 2x2");
  const std::size_t planes = xs[0] * xs[1], h = xs[2], w = xs[3], oh = h / 2, ow = w / 2;
  Tensor<T> out({xs[0], xs[1], oh, ow});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = x->value.data() + p * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        std::size_t best = (2 * y) * w + 2 * xx;
        for (std::size_t idx : {(2 * y) * w + 2 * xx + 1, (2 * y + 1) * w + 2 * xx, (2 * y + 1) * w + 2 * xx + 1}) {
          if (src[idx] > src[best]) best = idx;
        }
        const std::size_t o = (p * oh + y) * ow + xx;
        out[o] = src[best];
        (*argmax)[o] = p * h * w + best;
      }
    }
  }
  return make_node<T>(std::move(out), {x}, [x, argmax](Node<T>& self) {
    if (!x->requires_grad) return;
    auto& g = x->grad_buffer();
    for (std::size_t o = 0; o < argmax->size(); ++o) g[(*argmax)[o]] += self.grad[o];
  });
}

template <typename T>
Var<T> dense(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  const auto& xs = x->value.shape();
  const auto& ws = w->value.shape();
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[0]) {
    shape_error("dense: shapes " + shape_string(xs) + " and " + shape_string(ws) + " do not agree");
  }
  if (b->value.shape() != Shape{ws[1]}) shape_error("dense: bias shape mismatch");
  const auto n = static_cast<Eigen::Index>(xs[0]);
  const auto in = static_cast<Eigen::Index>(ws[0]);
  const auto outd = static_cast<Eigen::Index>(ws[1]);
  Tensor<T> out({xs[0], ws[1]});
  MatMap<T> om(out.data(), n, outd);
  om.noalias() = ConstMatMap<T>(x->value.data(), n, in) * ConstMatMap<T>(w->value.data(), in, outd);
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index c = 0; c < outd; ++c) om(r, c) += b->value[static_cast<std::size_t>(c)];
  }
  return make_node<T>(std::move(out), {x, w, b}, [x, w, b, n, in, outd](Node<T>& self) {
    const ConstMatMap<T> gm(self.grad.data(), n, outd);
    if (x->requires_grad) {
      MatMap<T>(x->grad_buffer().data(), n, in).noalias() += gm * ConstMatMap<T>(w->value.data(), in, outd).transpose();
    }
    if (w->requires_grad) {
      MatMap<T>(w->grad_buffer().data(), in, outd).noalias() += ConstMatMap<T>(x->value.data(), n, in).transpose() * gm;
    }
    if (b->requires_grad) {
      auto& gb = b->grad_buffer();
      for (Eigen::Index c = 0; c < outd; ++c) {
        gb[static_cast<std::size_t>(c)] += gm.col(c).template cast<double>().sum();
      }
    }
  });
}

// ---------------------------------------------------------------- losses

template <typename T>
Var<T> cross_entropy(const Var<T>& probs, std::span<const int> labels) {
  const auto& ps = probs->value.shape();
  if (ps.size() != 2) shape_error("cross_entropy expects N x K probabilities");
  const std::size_t n = ps[0], k = ps[1];
  if (labels.size() != n) shape_error("cross_entropy: label count mismatch");
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= k) throw DomainError("tensor", "class label out of range");
  }
  constexpr double kFloor = 1e-12;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = probs->value[i * k + static_cast<std::size_t>(labels[i])];
    total -= std::log(std::max(p, kFloor));
  }
  std::vector<int> owned(labels.begin(), labels.end());
  return make_node<T>(Tensor<T>({1}, static_cast<T>(total / n)), {probs}, [probs, owned, n, k](Node<T>& self) {
    if (!probs->requires_grad) return;
    auto& g = probs->grad_buffer();
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t at = i * k + static_cast<std::size_t>(owned[i]);
      const double p = probs->value[at];
      if (p > kFloor) g[at] += static_cast<T>(-self.grad[0] / (n * p));
    }
  });
}

template <typename T>
Var<T> l1_loss(const Var<T>& a, const Var<T>& b) {
  if (a->value.shape() != b->value.shape()) {
    shape_error("l1_loss: shapes " + shape_string(a->value.shape()) + " and " + shape_string(b->value.shape()));
  }
  double total = 0.0;
  for (std::size_t i = 0; i < a->value.size(); ++i) total += std::abs(static_cast<double>(a->value[i]) - b->value[i]);
  return make_node<T>(Tensor<T>({1}, static_cast<T>(total)), {a, b}, [a, b](Node<T>& self) {
    const T g = self.grad[0];
    for (std::size_t i = 0; i < a->value.size(); ++i) {
      const T d = a->value[i] - b->value[i];
      const T s = d > T{} ? g : (d < T{} ? -g : T{});
      if (s == T{}) continue;
      if (a->requires_grad) a->grad_buffer()[i] += s;
      if (b->requires_grad) b->grad_buffer()[i] -= s;
    }
  });
}

// ---------------------------------------------------------------- backward

template <typename T>
void backward(const Var<T>& root) {
  if (root->value.size() != 1) throw DomainError("tensor", "backward needs a scalar root, got " + shape_string(root->value.shape()));
  if (root->backward_done) throw DomainError("tensor", "backward already ran on this root");
  root->backward_done = true;
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->grad_buffer()[0] = T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward_fn && node->grad.size() == node->value.size()) node->backward_fn(*node);
  }
}

template <typename T>
void adam_step(std::span<const Var<T>> params, AdamState<T>& state) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p->value.shape());
      state.v.emplace_back(p->value.shape());
    }
  }
  if (state.m.size() != params.size()) throw DomainError("tensor", "optimizer state does not match parameters");
  ++state.t;
  const auto& o = state.options;
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.shape() != p.value.shape()) throw DomainError("tensor", "optimizer state shape mismatch");
    const bool has_grad = p.grad.size() == p.value.size();
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = has_grad ? static_cast<double>(p.grad[i]) : 0.0;
      const double mi = o.beta1 * m[i] + (1 - o.beta1) * g;
      const double vi = o.beta2 * v[i] + (1 - o.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double step = o.lr * (mi / c1) / (std::sqrt(vi / c2) + o.eps);
      p.value[i] = static_cast<T>(p.value[i] - step);
    }
    p.zero_grad();
  }
}

#define NEUROTOPO_INSTANTIATE(T)                                                            \
  template class Tensor<T>;                                                                 \
  template struct Node<T>;                                                                  \
  template Var<T> constant(Tensor<T>);                                                      \
  template Var<T> parameter(Tensor<T>);                                                     \
  template Var<T> detach(const Var<T>&);                                                    \
  template Var<T> relu(const Var<T>&);                                                      \
  template Var<T> softmax(const Var<T>&);                                                   \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, ConvGeometry);        \
  template Var<T> upconv2d(const Var<T>&, const Var<T>&, const Var<T>&, ConvGeometry);      \
  template Var<T> maxpool2(const Var<T>&);                                                  \
  template Var<T> dense(const Var<T>&, const Var<T>&, const Var<T>&);                       \
  template Var<T> flatten(const Var<T>&);                                                   \
  template Var<T> add(const Var<T>&, const Var<T>&);                                        \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                        \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                        \
  template Var<T> scale(const Var<T>&, double);                                             \
  template Var<T> sum(const Var<T>&);                                                       \
  template Var<T> cross_entropy(const Var<T>&, std::span<const int>);                       \
  template Var<T> sigmoid(const Var<T>&);                                                    \
  template Var<T> l1_loss(const Var<T>&, const Var<T>&);                                    \
  template void backward(const Var<T>&);                                                    \
  template void adam_step(std::span<const Var<T>>, AdamState<T>&);

NEUROTOPO_INSTANTIATE(float)
NEUROTOPO_INSTANTIATE(double)

#undef NEUROTOPO_INSTANTIATE

} // namespace neurotopo
