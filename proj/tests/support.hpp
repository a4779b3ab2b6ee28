#pragma once

#include <random>
#include <vector>

#include "lssg/attention.hpp"
#include "lssg/tensor.hpp"

namespace lssg::test {

template <std::floating_point T>
Volume<T> random_volume(Shape4 s, std::mt19937_64& rng, T lo = T(-1), T hi = T(1)) {
  std::uniform_real_distribution<T> dist(lo, hi);
  std::vector<T> v(s.size());
  for (auto& x : v) x = dist(rng);
  return Volume<T>(s, std::move(v));
}

template <std::floating_point T>
Matrix<T> random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, T scale = T(1)) {
  std::uniform_real_distribution<T> dist(-scale, scale);
  std::vector<T> v(rows * cols);
  for (auto& x : v) x = dist(rng);
  return Matrix<T>(rows, cols, std::move(v));
}

template <std::floating_point T>
AttentionWeights<T> random_attention(std::size_t c, std::mt19937_64& rng, std::size_t inner = 0) {
  if (inner == 0) inner = c;
  return {random_matrix<T>(inner, c, rng), random_matrix<T>(inner, c, rng),
          random_matrix<T>(inner, c, rng)};
}

// sum(r .* v): the scalar loss whose gradient w.r.t. v is r.
template <std::floating_point T>
T weighted_sum(const Volume<T>& v, const Volume<T>& r) {
  return dot<T>(v.values(), r.values());
}

// Direct 7-deep loop, zero padding 1.
inline Volume<double> conv3d_reference(const Volume<double>& x, const std::vector<double>& w, const std::vector<double>& b,
                                std::size_t co_n, std::size_t stride) {
  const long D = long(x.depth()), H = long(x.height()), W = long(x.width());
  const std::size_t od = (D - 1) / stride + 1, oh = (H - 1) / stride + 1, ow = (W - 1) / stride + 1;
  Volume<double> y({co_n, od, oh, ow});
  for (std::size_t co = 0; co < co_n; ++co)
    for (std::size_t d = 0; d < od; ++d)
      for (std::size_t h = 0; h < oh; ++h)
        for (std::size_t q = 0; q < ow; ++q) {
          double acc = b[co];
          for (std::size_t ci = 0; ci < x.channels(); ++ci)
            for (long a = 0; a < 3; ++a)
              for (long bb = 0; bb < 3; ++bb)
                for (long c = 0; c < 3; ++c) {
                  const long id = long(d * stride) + a - 1, ih = long(h * stride) + bb - 1,
                             iw = long(q * stride) + c - 1;
                  if (id < 0 || ih < 0 || iw < 0 || id >= D || ih >= H || iw >= W) continue;
                  acc += w[((co * x.channels() + ci) * 3 + a) * 9 + bb * 3 + c] *
                         x.at(ci, std::size_t(id), std::size_t(ih), std::size_t(iw));
                }
          y.at(co, d, h, q) = acc;
        }
  return y;
}

}  // namespace lssg::test
