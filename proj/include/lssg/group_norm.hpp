#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "lssg/tensor.hpp"

namespace lssg {

template <std::floating_point T>
struct GroupNormStats {
  std::size_t groups = 0;
  T eps = T(1e-5);
  std::vector<T> mean;      // one per normalization group
  std::vector<T> variance;  // biased (divide by n), >= 0

  bool operator==(const GroupNormStats&) const = default;
};

template <std::floating_point T>
struct GroupNormResult {
  Volume<T> output;
  GroupNormStats<T> stats;
};

template <std::floating_point T>
struct GroupNormGrads {
  Volume<T> grad_x;
  std::vector<T> grad_gamma;
  std::vector<T> grad_beta;
};

namespace detail {

template <std::floating_point T>
void check_group_norm_args(const Volume<T>& x, std::size_t gamma_len, std::size_t beta_len,
                           std::size_t groups, T eps) {
  if (groups == 0 || x.channels() % groups != 0) {
    throw ConfigError("group_norm: " + std::to_string(groups) + " groups do not divide " +
                      std::to_string(x.channels()) + " channels");
  }
  if (gamma_len != x.channels() || beta_len != x.channels()) {
    throw ShapeError("group_norm: gamma/beta length must equal channel count");
  }
  if (!(eps > T{0})) throw ConfigError("group_norm: eps must be positive");
}

}  // namespace detail

// Each of `groups` channel sets is normalized over (channels in set) x D x H x W,
// then scaled and shifted per channel.
template <std::floating_point T>
GroupNormResult<T> group_norm(const Volume<T>& x, std::span<const T> gamma,
                              std::span<const T> beta, std::size_t groups, T eps = T(1e-5)) {
  detail::check_group_norm_args(x, gamma.size(), beta.size(), groups, eps);
  const std::size_t per = x.channels() / groups;
  const std::size_t n = per * x.spatial();
  GroupNormResult<T> r{Volume<T>(x.shape()), {groups, eps, {}, {}}};
  auto src = x.values();
  for (std::size_t k = 0; k < groups; ++k) {
    const std::size_t begin = k * n;
    T mean{0};
    for (std::size_t i = 0; i < n; ++i) mean += src[begin + i];
    mean /= static_cast<T>(n);
    T var{0};
    for (std::size_t i = 0; i < n; ++i) {
      const T d = src[begin + i] - mean;
      var += d * d;
    }
    var /= static_cast<T>(n);
    const T inv_std = T{1} / std::sqrt(var + eps);
    r.stats.mean.push_back(mean);
    r.stats.variance.push_back(var);
    for (std::size_t c = k * per; c < (k + 1) * per; ++c) {
      auto xc = x.channel(c);
      auto yc = r.output.channel(c);
      for (std::size_t i = 0; i < xc.size(); ++i) yc[i] = (xc[i] - mean) * inv_std * gamma[c] + beta[c];
    }
  }
  require_finite(r.output, "group_norm");
  return r;
}

template <std::floating_point T>
GroupNormGrads<T> group_norm_backward(const Volume<T>& x, std::span<const T> gamma,
                                      const GroupNormStats<T>& stats, const Volume<T>& grad_out) {
  detail::check_group_norm_args(x, gamma.size(), gamma.size(), stats.groups, stats.eps);
  if (grad_out.shape() != x.shape()) throw ShapeError("group_norm_backward: grad shape");
  if (stats.mean.size() != stats.groups || stats.variance.size() != stats.groups) {
    throw StateError("group_norm_backward: statistics do not match group count");
  }
  const std::size_t groups = stats.groups;
  const std::size_t per = x.channels() / groups;
  const std::size_t n = per * x.spatial();
  GroupNormGrads<T> g{Volume<T>(x.shape()), std::vector<T>(x.channels(), T{0}),
                      std::vector<T>(x.channels(), T{0})};
  for (std::size_t k = 0; k < groups; ++k) {
    const T mean = stats.mean[k];
    const T inv_std = T{1} / std::sqrt(stats.variance[k] + stats.eps);
    // sums of dxhat and dxhat * xhat over the group
    T sum_dxh{0};
    T sum_dxh_xh{0};
    for (std::size_t c = k * per; c < (k + 1) * per; ++c) {
      auto xc = x.channel(c);
      auto dy = grad_out.channel(c);
      T dgamma{0};
      T dbeta{0};
      for (std::size_t i = 0; i < xc.size(); ++i) {
        const T xh = (xc[i] - mean) * inv_std;
        dgamma += dy[i] * xh;
        dbeta += dy[i];
        const T dxh = dy[i] * gamma[c];
        sum_dxh += dxh;
        sum_dxh_xh += dxh * xh;
      }
      g.grad_gamma[c] = dgamma;
      g.grad_beta[c] = dbeta;
    }
    const T mean_dxh = sum_dxh / static_cast<T>(n);
    const T mean_dxh_xh = sum_dxh_xh / static_cast<T>(n);
    for (std::size_t c = k * per; c < (k + 1) * per; ++c) {
      auto xc = x.channel(c);
      auto dy = grad_out.channel(c);
      auto dx = g.grad_x.channel(c);
      for (std::size_t i = 0; i < xc.size(); ++i) {
        const T xh = (xc[i] - mean) * inv_std;
        dx[i] = inv_std * (dy[i] * gamma[c] - mean_dxh - xh * mean_dxh_xh);
      }
    }
  }
  return g;
}

}  // namespace lssg
