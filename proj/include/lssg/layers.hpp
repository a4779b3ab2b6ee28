#pragma once

// Dense 3-D layers for the toy backbone: 3x3x3 convolution (padding 1,
// stride 1 or 2), 2x2x2 stride-2 transposed convolution, ReLU and channel
// concatenation. Backward functions accumulate parameter gradients into the
// supplied spans so a whole network can share one gradient registry.
//
// Convolution weights are stored [C_out][C_in][kd][kh][kw]; transposed
// convolution weights [C_in][C_out][kd][kh][kw].

#include <algorithm>
#include <span>
#include <vector>

#include "lssg/tensor.hpp"

namespace lssg {

inline std::size_t conv_out_extent(std::size_t in, std::size_t stride) {
  return (in - 1) / stride + 1;  // kernel 3, padding 1
}

namespace detail {

// Four interleaved partial sums, combined as (s0 + s1) + (s2 + s3) after the
// tail is folded into s0. Fixed order, so still reproducible.
template <std::floating_point T>
T dot4(const T* a, const T* b, std::size_t n) {
  T s0{0}, s1{0}, s2{0}, s3{0};
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

template <std::floating_point T>
T sum4(const T* a, std::size_t n) {
  T s0{0}, s1{0}, s2{0}, s3{0};
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i];
    s1 += a[i + 1];
    s2 += a[i + 2];
    s3 += a[i + 3];
  }
  for (; i < n; ++i) s0 += a[i];
  return (s0 + s1) + (s2 + s3);
}

// columns[(ci*27 + k) * N + o] = x[ci] at the k-th tap of output voxel o (0 when padded)
template <std::floating_point T>
std::vector<T> im2col3(const Volume<T>& x, std::size_t stride, const Shape4& out) {
  const std::size_t n = out.spatial();
  std::vector<T> cols(x.channels() * 27 * n, T{0});
  const std::size_t D = x.depth(), H = x.height(), W = x.width();
  for (std::size_t ci = 0; ci < x.channels(); ++ci) {
    auto src = x.channel(ci);
    for (std::size_t k = 0; k < 27; ++k) {
      const long kd = long(k / 9) - 1, kh = long((k / 3) % 3) - 1, kw = long(k % 3) - 1;
      T* dst = cols.data() + (ci * 27 + k) * n;
      for (std::size_t od = 0; od < out.d; ++od) {
        const long id = long(od * stride) + kd;
        if (id < 0 || id >= long(D)) continue;
        for (std::size_t oh = 0; oh < out.h; ++oh) {
          const long ih = long(oh * stride) + kh;
          if (ih < 0 || ih >= long(H)) continue;
          const T* row = src.data() + (std::size_t(id) * H + std::size_t(ih)) * W;
          T* drow = dst + (od * out.h + oh) * out.w;
          for (std::size_t ow = 0; ow < out.w; ++ow) {
            const long iw = long(ow * stride) + kw;
            if (iw >= 0 && iw < long(W)) drow[ow] = row[iw];
          }
        }
      }
    }
  }
  return cols;
}

template <std::floating_point T>
void col2im3(std::span<const T> cols, std::size_t stride, const Shape4& out, Volume<T>& dx) {
  const std::size_t n = out.spatial();
  const std::size_t D = dx.depth(), H = dx.height(), W = dx.width();
  for (std::size_t ci = 0; ci < dx.channels(); ++ci) {
    auto dst = dx.channel(ci);
    for (std::size_t k = 0; k < 27; ++k) {
      const long kd = long(k / 9) - 1, kh = long((k / 3) % 3) - 1, kw = long(k % 3) - 1;
      const T* src = cols.data() + (ci * 27 + k) * n;
      for (std::size_t od = 0; od < out.d; ++od) {
        const long id = long(od * stride) + kd;
        if (id < 0 || id >= long(D)) continue;
        for (std::size_t oh = 0; oh < out.h; ++oh) {
          const long ih = long(oh * stride) + kh;
          if (ih < 0 || ih >= long(H)) continue;
          T* row = dst.data() + (std::size_t(id) * H + std::size_t(ih)) * W;
          const T* srow = src + (od * out.h + oh) * out.w;
          for (std::size_t ow = 0; ow < out.w; ++ow) {
            const long iw = long(ow * stride) + kw;
            if (iw >= 0 && iw < long(W)) row[iw] += srow[ow];
          }
        }
      }
    }
  }
}

}  // namespace detail

template <std::floating_point T>
Volume<T> conv3d(const Volume<T>& x, std::span<const T> weight, std::span<const T> bias,
                 std::size_t out_channels, std::size_t stride) {
  const std::size_t k = x.channels() * 27;
  if (weight.size() != out_channels * k || bias.size() != out_channels) {
    throw ShapeError("conv3d: weight/bias size does not match " + std::to_string(out_channels) +
                     "x" + std::to_string(x.channels()) + "x3x3x3");
  }
  const Shape4 os{out_channels, conv_out_extent(x.depth(), stride),
                  conv_out_extent(x.height(), stride), conv_out_extent(x.width(), stride)};
  const auto cols = detail::im2col3(x, stride, os);
  const std::size_t n = os.spatial();
  Volume<T> y(os);
  for (std::size_t co = 0; co < out_channels; ++co) {
    T* dst = y.channel(co).data();
    std::fill_n(dst, n, bias[co]);
    const T* wrow = weight.data() + co * k;
    for (std::size_t j = 0; j < k; ++j) {
      const T wv = wrow[j];
      const T* src = cols.data() + j * n;
      for (std::size_t i = 0; i < n; ++i) dst[i] += wv * src[i];
    }
  }
  return y;
}

// Returns dL/dx; adds dL/dweight and dL/dbias into grad_weight / grad_bias.
template <std::floating_point T>
Volume<T> conv3d_backward(const Volume<T>& x, std::span<const T> weight, std::size_t stride,
                          const Volume<T>& grad_out, std::span<T> grad_weight,
                          std::span<T> grad_bias, bool need_grad_x = true) {
  const std::size_t co_n = grad_out.channels();
  const std::size_t k = x.channels() * 27;
  const Shape4 os = grad_out.shape();
  if (weight.size() != co_n * k || grad_weight.size() != weight.size() || grad_bias.size() != co_n ||
      os.d != conv_out_extent(x.depth(), stride) || os.h != conv_out_extent(x.height(), stride) ||
      os.w != conv_out_extent(x.width(), stride)) {
    throw ShapeError("conv3d_backward: inconsistent shapes");
  }
  const auto cols = detail::im2col3(x, stride, os);
  const std::size_t n = os.spatial();
  std::vector<T> dcols(need_grad_x ? k * n : 0, T{0});
  for (std::size_t co = 0; co < co_n; ++co) {
    const T* dy = grad_out.channel(co).data();
    grad_bias[co] += detail::sum4(dy, n);
    const T* wrow = weight.data() + co * k;
    T* gwrow = grad_weight.data() + co * k;
    for (std::size_t j = 0; j < k; ++j) {
      gwrow[j] += detail::dot4(dy, cols.data() + j * n, n);
      if (need_grad_x) {
        const T wv = wrow[j];
        T* dc = dcols.data() + j * n;
        for (std::size_t i = 0; i < n; ++i) dc[i] += wv * dy[i];
      }
    }
  }
  Volume<T> dx(x.shape());
  if (need_grad_x) detail::col2im3<T>(dcols, stride, os, dx);
  return dx;
}

// 2x2x2 transposed convolution with stride 2: doubles every spatial extent.
template <std::floating_point T>
Volume<T> deconv2(const Volume<T>& x, std::span<const T> weight, std::span<const T> bias,
                  std::size_t out_channels) {
  const std::size_t ci_n = x.channels();
  if (weight.size() != ci_n * out_channels * 8 || bias.size() != out_channels) {
    throw ShapeError("deconv2: weight/bias size");
  }
  const std::size_t D = x.depth(), H = x.height(), W = x.width();
  Volume<T> y({out_channels, 2 * D, 2 * H, 2 * W});
  for (std::size_t co = 0; co < out_channels; ++co) {
    auto dst = y.channel(co);
    std::fill(dst.begin(), dst.end(), bias[co]);
    for (std::size_t ci = 0; ci < ci_n; ++ci) {
      auto src = x.channel(ci);
      const T* w = weight.data() + (ci * out_channels + co) * 8;
      for (std::size_t d = 0; d < D; ++d)
        for (std::size_t h = 0; h < H; ++h)
          for (std::size_t a = 0; a < 2; ++a)
            for (std::size_t b = 0; b < 2; ++b) {
              T* orow = dst.data() + ((2 * d + a) * 2 * H + (2 * h + b)) * 2 * W;
              const T* irow = src.data() + (d * H + h) * W;
              const T w0 = w[a * 4 + b * 2], w1 = w[a * 4 + b * 2 + 1];
              for (std::size_t ww = 0; ww < W; ++ww) {
                orow[2 * ww] += w0 * irow[ww];
                orow[2 * ww + 1] += w1 * irow[ww];
              }
            }
    }
  }
  return y;
}

template <std::floating_point T>
Volume<T> deconv2_backward(const Volume<T>& x, std::span<const T> weight, const Volume<T>& grad_out,
                           std::span<T> grad_weight, std::span<T> grad_bias) {
  const std::size_t ci_n = x.channels(), co_n = grad_out.channels();
  const std::size_t D = x.depth(), H = x.height(), W = x.width();
  if (grad_out.shape() != Shape4{co_n, 2 * D, 2 * H, 2 * W} || weight.size() != ci_n * co_n * 8 ||
      grad_weight.size() != weight.size() || grad_bias.size() != co_n) {
    throw ShapeError("deconv2_backward: inconsistent shapes");
  }
  Volume<T> dx(x.shape());
  for (std::size_t co = 0; co < co_n; ++co) {
    auto dy = grad_out.channel(co);
    T db{0};
    for (T v : dy) db += v;
    grad_bias[co] += db;
    for (std::size_t ci = 0; ci < ci_n; ++ci) {
      auto src = x.channel(ci);
      auto dsrc = dx.channel(ci);
      const T* w = weight.data() + (ci * co_n + co) * 8;
      T* gw = grad_weight.data() + (ci * co_n + co) * 8;
      for (std::size_t d = 0; d < D; ++d)
        for (std::size_t h = 0; h < H; ++h)
          for (std::size_t a = 0; a < 2; ++a)
            for (std::size_t b = 0; b < 2; ++b) {
              const T* orow = dy.data() + ((2 * d + a) * 2 * H + (2 * h + b)) * 2 * W;
              const T* irow = src.data() + (d * H + h) * W;
              T* drow = dsrc.data() + (d * H + h) * W;
              const T w0 = w[a * 4 + b * 2], w1 = w[a * 4 + b * 2 + 1];
              T g0{0}, g1{0};
              for (std::size_t ww = 0; ww < W; ++ww) {
                g0 += orow[2 * ww] * irow[ww];
                g1 += orow[2 * ww + 1] * irow[ww];
                drow[ww] += w0 * orow[2 * ww] + w1 * orow[2 * ww + 1];
              }
              gw[a * 4 + b * 2] += g0;
              gw[a * 4 + b * 2 + 1] += g1;
            }
    }
  }
  return dx;
}

// 1x1x1 convolution with weights [C_out][C_in] read from a flat span.
template <std::floating_point T>
Volume<T> conv1x1(const Volume<T>& x, std::span<const T> weight, std::span<const T> bias,
                  std::size_t out_channels) {
  const std::size_t ci_n = x.channels(), n = x.spatial();
  if (weight.size() != out_channels * ci_n || bias.size() != out_channels) {
    throw ShapeError("conv1x1: weight/bias size");
  }
  Volume<T> y({out_channels, x.depth(), x.height(), x.width()});
  for (std::size_t co = 0; co < out_channels; ++co) {
    T* dst = y.channel(co).data();
    std::fill_n(dst, n, bias[co]);
    for (std::size_t ci = 0; ci < ci_n; ++ci) {
      const T wv = weight[co * ci_n + ci];
      const T* src = x.channel(ci).data();
      for (std::size_t i = 0; i < n; ++i) dst[i] += wv * src[i];
    }
  }
  return y;
}

template <std::floating_point T>
Volume<T> conv1x1_backward(const Volume<T>& x, std::span<const T> weight, const Volume<T>& grad_out,
                           std::span<T> grad_weight, std::span<T> grad_bias) {
  const std::size_t ci_n = x.channels(), co_n = grad_out.channels(), n = x.spatial();
  if (weight.size() != co_n * ci_n || grad_weight.size() != weight.size() || grad_bias.size() != co_n ||
      grad_out.spatial() != n) {
    throw ShapeError("conv1x1_backward: inconsistent shapes");
  }
  Volume<T> dx(x.shape());
  for (std::size_t co = 0; co < co_n; ++co) {
    const T* dy = grad_out.channel(co).data();
    grad_bias[co] += detail::sum4(dy, n);
    for (std::size_t ci = 0; ci < ci_n; ++ci) {
      const T* src = x.channel(ci).data();
      grad_weight[co * ci_n + ci] += detail::dot4(dy, src, n);
      const T wv = weight[co * ci_n + ci];
      T* d = dx.channel(ci).data();
      for (std::size_t i = 0; i < n; ++i) d[i] += wv * dy[i];
    }
  }
  return dx;
}

template <std::floating_point T>
void relu_inplace(Volume<T>& x) {
  for (auto& v : x.values()) v = v > T{0} ? v : T{0};
}

// Gradient through y = relu(z), given the output y.
template <std::floating_point T>
void relu_backward_inplace(const Volume<T>& y, Volume<T>& grad) {
  auto yv = y.values();
  auto g = grad.values();
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(yv[i] > T{0})) g[i] = T{0};
  }
}

template <std::floating_point T>
Volume<T> concat_channels(const Volume<T>& a, const Volume<T>& b) {
  if (a.depth() != b.depth() || a.height() != b.height() || a.width() != b.width()) {
    throw ShapeError("concat_channels: " + a.shape().str() + " vs " + b.shape().str());
  }
  std::vector<T> v(a.values().begin(), a.values().end());
  v.insert(v.end(), b.values().begin(), b.values().end());
  return Volume<T>({a.channels() + b.channels(), a.depth(), a.height(), a.width()}, std::move(v));
}

template <std::floating_point T>
std::pair<Volume<T>, Volume<T>> split_channels(const Volume<T>& x, std::size_t first) {
  if (first > x.channels()) throw ShapeError("split_channels: split point past channel count");
  const std::size_t n = first * x.spatial();
  auto v = x.values();
  return {Volume<T>({first, x.depth(), x.height(), x.width()}, std::vector<T>(v.begin(), v.begin() + n)),
          Volume<T>({x.channels() - first, x.depth(), x.height(), x.width()},
                    std::vector<T>(v.begin() + n, v.end()))};
}

}  // namespace lssg
