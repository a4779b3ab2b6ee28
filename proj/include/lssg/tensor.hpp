#pragma once

// Dense rank-1..4 storage used by every other module.
//
// Layout of a Volume is channel-major, then depth, height and width, so the
// flat index of (c, d, h, w) is ((c * D + d) * H + h) * W + w. Grouping slices
// along depth is therefore a gather over the second axis only.
//
// Reductions (dot products, per-voxel channel sums) always run sequentially in
// increasing index order. Nothing here is parallel, and results are
// bit-reproducible for a given build.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <type_traits>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lssg/common.hpp"

namespace lssg {

struct Shape4 {
  std::size_t c = 0;
  std::size_t d = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  constexpr std::size_t spatial() const { return d * h * w; }
  constexpr std::size_t size() const { return c * d * h * w; }
  constexpr bool operator==(const Shape4&) const = default;

  std::string str() const {
    return std::to_string(c) + "x" + std::to_string(d) + "x" + std::to_string(h) +
           "x" + std::to_string(w);
  }
};

template <std::floating_point T>
bool all_finite(std::span<const T> values) {
  return std::all_of(values.begin(), values.end(), [](T v) { return std::isfinite(v); });
}

template <std::floating_point T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{0})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> values)
      : rows_(rows), cols_(cols), data_(std::move(values)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("matrix: " + std::to_string(data_.size()) + " values for " +
                       std::to_string(rows_) + "x" + std::to_string(cols_));
    }
    if (!all_finite<T>(data_)) throw NumericError("matrix: non-finite entry");
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T{1};
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  T operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

template <std::floating_point T>
class Volume {
 public:
  Volume() = default;
  explicit Volume(Shape4 shape, T fill = T{0}) : shape_(shape), data_(shape.size(), fill) {}
  Volume(Shape4 shape, std::vector<T> values) : shape_(shape), data_(std::move(values)) {
    if (data_.size() != shape_.size()) {
      throw ShapeError("volume: " + std::to_string(data_.size()) + " values for shape " +
                       shape_.str());
    }
    if (!all_finite<T>(data_)) throw NumericError("volume: non-finite value");
  }

  const Shape4& shape() const { return shape_; }
  std::size_t channels() const { return shape_.c; }
  std::size_t depth() const { return shape_.d; }
  std::size_t height() const { return shape_.h; }
  std::size_t width() const { return shape_.w; }
  std::size_t spatial() const { return shape_.spatial(); }
  std::size_t size() const { return data_.size(); }

  std::size_t index(std::size_t c, std::size_t d, std::size_t h, std::size_t w) const {
    return ((c * shape_.d + d) * shape_.h + h) * shape_.w + w;
  }
  T& at(std::size_t c, std::size_t d, std::size_t h, std::size_t w) {
    return data_[index(c, d, h, w)];
  }
  T at(std::size_t c, std::size_t d, std::size_t h, std::size_t w) const {
    return data_[index(c, d, h, w)];
  }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::span<T> channel(std::size_t c) { return {data_.data() + c * spatial(), spatial()}; }
  std::span<const T> channel(std::size_t c) const {
    return {data_.data() + c * spatial(), spatial()};
  }

  bool operator==(const Volume&) const = default;

 private:
  Shape4 shape_;
  std::vector<T> data_;
};

template <std::floating_point T>
void require_finite(const Volume<T>& v, std::string_view op) {
  if (!all_finite(v.values())) throw NumericError(std::string(op) + ": non-finite output");
}

// vec(.) of a volume: the flat embedding in storage order.
template <std::floating_point T>
struct FlatEmbedding {
  std::vector<T> values;

  std::size_t size() const { return values.size(); }
  bool operator==(const FlatEmbedding&) const = default;
};

template <std::floating_point T>
FlatEmbedding<T> vectorize(const Volume<T>& x) {
  return {std::vector<T>(x.values().begin(), x.values().end())};
}

template <std::floating_point T>
Volume<T> devectorize(const FlatEmbedding<T>& e, Shape4 dims) {
  if (dims.size() != e.size()) {
    throw ShapeError("devectorize: length " + std::to_string(e.size()) +
                     " does not match dims " + dims.str());
  }
  return Volume<T>(dims, e.values);
}

// Sequential left-to-right sum.
template <std::floating_point T>
T dot(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
  T acc{0};
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

template <std::floating_point T>
T dot(const FlatEmbedding<T>& a, const FlatEmbedding<T>& b) {
  return dot<T>(a.values, b.values);
}

template <std::floating_point T>
FlatEmbedding<T> scale(const FlatEmbedding<T>& a, T s) {
  FlatEmbedding<T> out = a;
  for (auto& v : out.values) v *= s;
  return out;
}

template <std::floating_point T>
FlatEmbedding<T> add(const FlatEmbedding<T>& a, const FlatEmbedding<T>& b) {
  if (a.size() != b.size()) throw ShapeError("add: length mismatch");
  FlatEmbedding<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.values[i] += b.values[i];
  return out;
}

template <std::floating_point T>
Volume<T> scale(const Volume<T>& a, T s) {
  Volume<T> out = a;
  for (auto& v : out.values()) v *= s;
  return out;
}

template <std::floating_point T>
Volume<T> add(const Volume<T>& a, const Volume<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: " + a.shape().str() + " vs " + b.shape().str());
  }
  Volume<T> out = a;
  auto o = out.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  return out;
}

// out += a, shapes must match.
template <std::floating_point T>
void accumulate(Volume<T>& out, const Volume<T>& a) {
  if (out.shape() != a.shape()) {
    throw ShapeError("accumulate: " + out.shape().str() + " vs " + a.shape().str());
  }
  auto o = out.values();
  auto av = a.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += av[i];
}

template <std::floating_point T>
void accumulate(Matrix<T>& out, const Matrix<T>& a) {
  if (out.rows() != a.rows() || out.cols() != a.cols()) {
    throw ShapeError("accumulate: matrix shape mismatch");
  }
  auto o = out.values();
  auto av = a.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += av[i];
}

// 1x1x1 convolution: every voxel's channel vector is mapped by w (C_out x C_in).
// An empty bias means no bias.
template <std::floating_point T>
Volume<T> pointwise_conv(const Volume<T>& x, const Matrix<T>& w,
                         std::type_identity_t<std::span<const T>> bias = {}) {
  if (w.cols() != x.channels()) {
    throw ShapeError("pointwise_conv: weight has " + std::to_string(w.cols()) +
                     " input channels, volume has " + std::to_string(x.channels()));
  }
  if (!bias.empty() && bias.size() != w.rows()) throw ShapeError("pointwise_conv: bias length");
  const std::size_t n = x.spatial();
  Volume<T> out({w.rows(), x.depth(), x.height(), x.width()});
  for (std::size_t co = 0; co < w.rows(); ++co) {
    auto dst = out.channel(co);
    if (!bias.empty()) std::fill(dst.begin(), dst.end(), bias[co]);
    for (std::size_t ci = 0; ci < w.cols(); ++ci) {
      const T k = w(co, ci);
      auto src = x.channel(ci);
      for (std::size_t i = 0; i < n; ++i) dst[i] += k * src[i];
    }
  }
  return out;
}

template <std::floating_point T>
struct PointwiseConvGrads {
  Volume<T> grad_x;
  Matrix<T> grad_w;
  std::vector<T> grad_bias;
};

template <std::floating_point T>
PointwiseConvGrads<T> pointwise_conv_backward(const Volume<T>& x, const Matrix<T>& w,
                                              const Volume<T>& grad_out) {
  const Shape4 expect{w.rows(), x.depth(), x.height(), x.width()};
  if (grad_out.shape() != expect || w.cols() != x.channels()) {
    throw ShapeError("pointwise_conv_backward: grad shape " + grad_out.shape().str() +
                     ", expected " + expect.str());
  }
  PointwiseConvGrads<T> g{Volume<T>(x.shape()), Matrix<T>(w.rows(), w.cols()),
                          std::vector<T>(w.rows(), T{0})};
  const std::size_t n = x.spatial();
  for (std::size_t co = 0; co < w.rows(); ++co) {
    auto dy = grad_out.channel(co);
    T db{0};
    for (std::size_t i = 0; i < n; ++i) db += dy[i];
    g.grad_bias[co] = db;
    for (std::size_t ci = 0; ci < w.cols(); ++ci) {
      auto src = x.channel(ci);
      auto dx = g.grad_x.channel(ci);
      const T k = w(co, ci);
      T dw{0};
      for (std::size_t i = 0; i < n; ++i) {
        dw += dy[i] * src[i];
        dx[i] += k * dy[i];
      }
      g.grad_w(co, ci) = dw;
    }
  }
  return g;
}

// max |a - b| / max(max |b|, floor). Used by oracle comparisons and gradchecks.
template <std::floating_point T>
double relative_error(std::span<const T> a, std::span<const T> b, double floor = 1e-300) {
  if (a.size() != b.size()) throw ShapeError("relative_error: length mismatch");
  double diff = 0.0;
  double ref = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(double(a[i]) - double(b[i])));
    ref = std::max(ref, std::abs(double(b[i])));
  }
  if (diff == 0.0) return 0.0;
  return diff / std::max(ref, floor);
}

template <std::floating_point T>
double relative_error(const Volume<T>& a, const Volume<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("relative_error: shape mismatch");
  return relative_error<T>(a.values(), b.values());
}

template <std::floating_point To, std::floating_point From>
Volume<To> cast(const Volume<From>& v) {
  std::vector<To> out(v.values().begin(), v.values().end());
  return Volume<To>(v.shape(), std::move(out));
}

}  // namespace lssg
