#pragma once

// Non-local attention over 3-D feature volumes and its depth-grouped form.
//
// Kernels (dot product, no softmax):
//   original  y_i = 1/N  * sum_j <theta_i, phi_j> g_j      N = D*H*W positions
//   compact   y   = 1/L  * vec(theta) (vec(phi)^T vec(g))  L = C*D*H*W elements
// where theta/phi/g are 1x1x1 convolutions of the input. The compact form is
// evaluated by associativity: s = <phi, g> / L, y = s * theta.
//
// Slice grouping splits the D depth slices into G groups of D/G slices, runs
// the kernel inside each group and scatters the results back to their
// original depths. Short grouping takes contiguous blocks, Long grouping
// takes every G-th slice.

#include <cstdlib>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "lssg/tensor.hpp"

namespace lssg {

enum class GroupingMode { Short, Long };
enum class AttentionKernel { NonLocal, CompactNonLocal };

inline const char* to_string(GroupingMode m) { return m == GroupingMode::Short ? "ssg" : "lsg"; }
inline const char* to_string(AttentionKernel k) {
  return k == AttentionKernel::NonLocal ? "nl" : "cnl";
}

inline GroupingMode parse_mode(const std::string& s) {
  if (s == "ssg") return GroupingMode::Short;
  if (s == "lsg") return GroupingMode::Long;
  throw ConfigError("mode must be ssg|lsg, got '" + s + "'");
}
inline AttentionKernel parse_kernel(const std::string& s) {
  if (s == "nl") return AttentionKernel::NonLocal;
  if (s == "cnl") return AttentionKernel::CompactNonLocal;
  throw ConfigError("kernel must be nl|cnl, got '" + s + "'");
}

inline constexpr std::size_t kDefaultOracleCap = 4096;

// LSSG_ORACLE_CAP overrides the naive-path size cap; must be a positive integer.
inline std::size_t oracle_cap_from_env() {
  const char* v = std::getenv("LSSG_ORACLE_CAP");
  if (v == nullptr || *v == '\0') return kDefaultOracleCap;
  const std::string s(v);
  if (s.find_first_not_of("0123456789") != std::string::npos || s.size() > 12 || std::stoull(s) == 0) {
    throw ConfigError("LSSG_ORACLE_CAP must be a positive integer, got '" + s + "'");
  }
  return std::size_t(std::stoull(s));
}

// W_theta, W_phi, W_g. Each is (inner x C); inner == C unless channel reduction
// is requested, in which case the attention output has `inner` channels.
template <std::floating_point T>
struct AttentionWeights {
  Matrix<T> w_theta;
  Matrix<T> w_phi;
  Matrix<T> w_g;

  std::size_t in_channels() const { return w_theta.cols(); }
  std::size_t inner_channels() const { return w_theta.rows(); }

  static AttentionWeights zeros(std::size_t channels, std::size_t inner) {
    return {Matrix<T>(inner, channels), Matrix<T>(inner, channels), Matrix<T>(inner, channels)};
  }
  static AttentionWeights zeros(std::size_t channels) { return zeros(channels, channels); }

  void validate() const {
    for (const Matrix<T>* m : {&w_phi, &w_g}) {
      if (m->rows() != w_theta.rows() || m->cols() != w_theta.cols()) {
        throw ShapeError("attention weights: W_theta, W_phi, W_g must share one shape");
      }
    }
    for (const Matrix<T>* m : {&w_theta, &w_phi, &w_g}) {
      if (!all_finite(m->values())) throw NumericError("attention weights: non-finite entry");
    }
  }

  bool operator==(const AttentionWeights&) const = default;
};

struct SliceGrouping {
  GroupingMode mode = GroupingMode::Short;
  std::size_t group_count = 1;
  std::size_t depth = 0;
  std::vector<std::vector<std::size_t>> groups;  // source depth indices per group, ascending

  std::size_t group_depth() const { return group_count == 0 ? 0 : depth / group_count; }

  bool operator==(const SliceGrouping&) const = default;
};

inline SliceGrouping build_grouping(GroupingMode mode, std::size_t depth, std::size_t groups) {
  if (groups == 0) throw ConfigError("slice grouping: G must be >= 1");
  if (depth == 0 || depth % groups != 0) {
    throw ConfigError("slice grouping: G=" + std::to_string(groups) +
                      " does not divide depth D=" + std::to_string(depth));
  }
  SliceGrouping sg{mode, groups, depth, {}};
  const std::size_t per = depth / groups;
  sg.groups.resize(groups);
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t k = 0; k < per; ++k) {
      sg.groups[g].push_back(mode == GroupingMode::Short ? g * per + k : g + k * groups);
    }
  }
  return sg;
}

// Every depth appears exactly once and all groups have D/G entries.
inline void validate_partition(const SliceGrouping& sg) {
  if (sg.group_count == 0 || sg.groups.size() != sg.group_count) {
    throw PartitionError("slice grouping: expected " + std::to_string(sg.group_count) +
                         " groups, found " + std::to_string(sg.groups.size()));
  }
  std::vector<int> seen(sg.depth, 0);
  for (const auto& grp : sg.groups) {
    if (grp.size() * sg.group_count != sg.depth) {
      throw PartitionError("slice grouping: unequal group sizes");
    }
    for (std::size_t d : grp) {
      if (d >= sg.depth) throw PartitionError("slice grouping: depth index out of range");
      if (seen[d]++) throw PartitionError("slice grouping: depth " + std::to_string(d) + " repeated");
    }
  }
}

template <std::floating_point T>
Volume<T> gather_group(const Volume<T>& x, const SliceGrouping& sg, std::size_t g) {
  if (x.depth() != sg.depth) {
    throw ShapeError("gather_group: volume depth " + std::to_string(x.depth()) +
                     " vs grouping depth " + std::to_string(sg.depth));
  }
  if (g >= sg.groups.size()) throw PartitionError("gather_group: group index out of range");
  const auto& idx = sg.groups[g];
  const std::size_t plane = x.height() * x.width();
  Volume<T> out({x.channels(), idx.size(), x.height(), x.width()});
  auto src = x.values();
  auto dst = out.values();
  for (std::size_t c = 0; c < x.channels(); ++c) {
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const std::size_t from = x.index(c, idx[k], 0, 0);
      const std::size_t to = out.index(c, k, 0, 0);
      std::copy_n(src.begin() + from, plane, dst.begin() + to);
    }
  }
  return out;
}

// Inverse of gather_group over all groups ("recover").
template <std::floating_point T>
Volume<T> scatter_groups(std::span<const Volume<T>> parts, const SliceGrouping& sg) {
  validate_partition(sg);
  if (parts.size() != sg.group_count) {
    throw PartitionError("scatter_groups: " + std::to_string(parts.size()) + " parts for " +
                         std::to_string(sg.group_count) + " groups");
  }
  const Shape4 ps = parts[0].shape();
  for (const auto& p : parts) {
    if (p.shape() != ps || p.depth() != sg.group_depth()) {
      throw ShapeError("scatter_groups: part shape " + p.shape().str() + " inconsistent");
    }
  }
  Volume<T> out({ps.c, sg.depth, ps.h, ps.w});
  const std::size_t plane = ps.h * ps.w;
  auto dst = out.values();
  for (std::size_t g = 0; g < parts.size(); ++g) {
    auto src = parts[g].values();
    const auto& idx = sg.groups[g];
    for (std::size_t c = 0; c < ps.c; ++c) {
      for (std::size_t k = 0; k < idx.size(); ++k) {
        std::copy_n(src.begin() + parts[g].index(c, k, 0, 0), plane,
                    dst.begin() + out.index(c, idx[k], 0, 0));
      }
    }
  }
  return out;
}

template <std::floating_point T>
Volume<T> scatter_groups(const std::vector<Volume<T>>& parts, const SliceGrouping& sg) {
  return scatter_groups(std::span<const Volume<T>>(parts), sg);
}

namespace detail {

template <std::floating_point T>
void check_attention_input(const Volume<T>& x, const AttentionWeights<T>& w, const char* op) {
  w.validate();
  if (x.channels() != w.in_channels()) {
    throw ShapeError(std::string(op) + ": volume has " + std::to_string(x.channels()) +
                     " channels, weights expect " + std::to_string(w.in_channels()));
  }
}

template <std::floating_point T>
void check_grad_shape(const Volume<T>& x, const AttentionWeights<T>& w, const Volume<T>& grad,
                      const char* op) {
  const Shape4 expect{w.inner_channels(), x.depth(), x.height(), x.width()};
  if (grad.shape() != expect) {
    throw ShapeError(std::string(op) + ": grad_out " + grad.shape().str() + ", expected " +
                     expect.str());
  }
}

}  // namespace detail

template <std::floating_point T>
Volume<T> compact_nonlocal_fast(const Volume<T>& x, const AttentionWeights<T>& w) {
  detail::check_attention_input(x, w, "compact_nonlocal");
  const Volume<T> theta = pointwise_conv(x, w.w_theta);
  const Volume<T> phi = pointwise_conv(x, w.w_phi);
  const Volume<T> g = pointwise_conv(x, w.w_g);
  const T s = dot<T>(phi.values(), g.values()) / static_cast<T>(theta.size());
  Volume<T> y = scale(theta, s);
  require_finite(y, "compact_nonlocal");
  return y;
}

// Materializes the L x L pairwise matrix. Oracle only.
template <std::floating_point T>
Volume<T> compact_nonlocal_naive(const Volume<T>& x, const AttentionWeights<T>& w,
                                 std::size_t cap = kDefaultOracleCap) {
  detail::check_attention_input(x, w, "compact_nonlocal_naive");
  const std::size_t n = w.inner_channels() * x.spatial();
  if (n > cap) {
    throw CapacityError("compact_nonlocal_naive: C*D*H*W = " + std::to_string(n) +
                        " exceeds cap " + std::to_string(cap));
  }
  const auto theta = vectorize(pointwise_conv(x, w.w_theta));
  const auto phi = vectorize(pointwise_conv(x, w.w_phi));
  const auto g = vectorize(pointwise_conv(x, w.w_g));
  const T inv = T{1} / static_cast<T>(n);
  std::vector<T> pairwise(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) pairwise[i * n + j] = theta.values[i] * phi.values[j] * inv;
  }
  FlatEmbedding<T> y{std::vector<T>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    T acc{0};
    for (std::size_t j = 0; j < n; ++j) acc += pairwise[i * n + j] * g.values[j];
    y.values[i] = acc;
  }
  return devectorize(y, {w.inner_channels(), x.depth(), x.height(), x.width()});
}

template <std::floating_point T>
struct AttentionGrads {
  Volume<T> grad_x;
  AttentionWeights<T> grad_w;
};

template <std::floating_point T>
AttentionGrads<T> compact_nonlocal_backward(const Volume<T>& x, const AttentionWeights<T>& w,
                                            const Volume<T>& grad_out) {
  detail::check_attention_input(x, w, "compact_nonlocal_backward");
  detail::check_grad_shape(x, w, grad_out, "compact_nonlocal_backward");
  const Volume<T> theta = pointwise_conv(x, w.w_theta);
  const Volume<T> phi = pointwise_conv(x, w.w_phi);
  const Volume<T> g = pointwise_conv(x, w.w_g);
  const T n = static_cast<T>(theta.size());
  const T s = dot<T>(phi.values(), g.values()) / n;
  const T ds = dot<T>(grad_out.values(), theta.values());

  const Volume<T> d_theta = scale(grad_out, s);
  const Volume<T> d_phi = scale(g, ds / n);
  const Volume<T> d_g = scale(phi, ds / n);

  auto bt = pointwise_conv_backward(x, w.w_theta, d_theta);
  auto bp = pointwise_conv_backward(x, w.w_phi, d_phi);
  auto bg = pointwise_conv_backward(x, w.w_g, d_g);
  accumulate(bt.grad_x, bp.grad_x);
  accumulate(bt.grad_x, bg.grad_x);
  return {std::move(bt.grad_x),
          {std::move(bt.grad_w), std::move(bp.grad_w), std::move(bg.grad_w)}};
}

// Original (position-wise) non-local operation. The N x N affinity matrix is
// never formed: y = M theta with M = g phi^T / N (inner x inner).
template <std::floating_point T>
Volume<T> nonlocal_original(const Volume<T>& x, const AttentionWeights<T>& w) {
  detail::check_attention_input(x, w, "nonlocal_original");
  const Volume<T> theta = pointwise_conv(x, w.w_theta);
  const Volume<T> phi = pointwise_conv(x, w.w_phi);
  const Volume<T> g = pointwise_conv(x, w.w_g);
  const std::size_t c = w.inner_channels();
  const T inv = T{1} / static_cast<T>(x.spatial());
  Matrix<T> m(c, c);
  for (std::size_t a = 0; a < c; ++a) {
    for (std::size_t b = 0; b < c; ++b) m(a, b) = dot<T>(g.channel(a), phi.channel(b)) * inv;
  }
  Volume<T> y = pointwise_conv(theta, m);
  require_finite(y, "nonlocal_original");
  return y;
}

template <std::floating_point T>
AttentionGrads<T> nonlocal_original_backward(const Volume<T>& x, const AttentionWeights<T>& w,
                                             const Volume<T>& grad_out) {
  detail::check_attention_input(x, w, "nonlocal_original_backward");
  detail::check_grad_shape(x, w, grad_out, "nonlocal_original_backward");
  const Volume<T> theta = pointwise_conv(x, w.w_theta);
  const Volume<T> phi = pointwise_conv(x, w.w_phi);
  const Volume<T> g = pointwise_conv(x, w.w_g);
  const std::size_t c = w.inner_channels();
  const T inv = T{1} / static_cast<T>(x.spatial());
  Matrix<T> m(c, c);
  for (std::size_t a = 0; a < c; ++a) {
    for (std::size_t b = 0; b < c; ++b) m(a, b) = dot<T>(g.channel(a), phi.channel(b)) * inv;
  }
  // y = m theta (as a pointwise map) -> d_theta = m^T dy, dm = dy theta^T.
  auto bm = pointwise_conv_backward(theta, m, grad_out);
  Matrix<T> dm_t(c, c);  // transposed, scaled by 1/N
  Matrix<T> dm_s(c, c);
  for (std::size_t a = 0; a < c; ++a) {
    for (std::size_t b = 0; b < c; ++b) {
      dm_s(a, b) = bm.grad_w(a, b) * inv;
      dm_t(b, a) = bm.grad_w(a, b) * inv;
    }
  }
  const Volume<T> d_g = pointwise_conv(phi, dm_s);    // dg_a = sum_b dM_ab phi_b / N
  const Volume<T> d_phi = pointwise_conv(g, dm_t);    // dphi_b = sum_a dM_ab g_a / N

  auto bt = pointwise_conv_backward(x, w.w_theta, bm.grad_x);
  auto bp = pointwise_conv_backward(x, w.w_phi, d_phi);
  auto bg = pointwise_conv_backward(x, w.w_g, d_g);
  accumulate(bt.grad_x, bp.grad_x);
  accumulate(bt.grad_x, bg.grad_x);
  return {std::move(bt.grad_x),
          {std::move(bt.grad_w), std::move(bp.grad_w), std::move(bg.grad_w)}};
}

template <std::floating_point T>
Volume<T> attention_forward(AttentionKernel k, const Volume<T>& x, const AttentionWeights<T>& w) {
  return k == AttentionKernel::NonLocal ? nonlocal_original(x, w) : compact_nonlocal_fast(x, w);
}

template <std::floating_point T>
AttentionGrads<T> attention_backward(AttentionKernel k, const Volume<T>& x,
                                     const AttentionWeights<T>& w, const Volume<T>& grad_out) {
  return k == AttentionKernel::NonLocal ? nonlocal_original_backward(x, w, grad_out)
                                        : compact_nonlocal_backward(x, w, grad_out);
}

template <std::floating_point T>
Volume<T> lssg_forward(const Volume<T>& x, const AttentionWeights<T>& w, const SliceGrouping& sg,
                       AttentionKernel kernel = AttentionKernel::CompactNonLocal) {
  if (sg.depth != x.depth()) {
    throw ShapeError("lssg_forward: grouping depth " + std::to_string(sg.depth) +
                     " vs volume depth " + std::to_string(x.depth()));
  }
  validate_partition(sg);
  std::vector<Volume<T>> parts;
  parts.reserve(sg.group_count);
  for (std::size_t g = 0; g < sg.group_count; ++g) {
    parts.push_back(attention_forward(kernel, gather_group(x, sg, g), w));
  }
  return scatter_groups(parts, sg);
}

template <std::floating_point T>
AttentionGrads<T> lssg_backward(const Volume<T>& x, const AttentionWeights<T>& w,
                                const SliceGrouping& sg, const Volume<T>& grad_out,
                                AttentionKernel kernel = AttentionKernel::CompactNonLocal) {
  if (sg.depth != x.depth()) throw ShapeError("lssg_backward: grouping/volume depth mismatch");
  detail::check_attention_input(x, w, "lssg_backward");
  detail::check_grad_shape(x, w, grad_out, "lssg_backward");
  validate_partition(sg);
  AttentionGrads<T> total{Volume<T>(x.shape()),
                          AttentionWeights<T>::zeros(w.in_channels(), w.inner_channels())};
  std::vector<Volume<T>> dx_parts;
  dx_parts.reserve(sg.group_count);
  for (std::size_t g = 0; g < sg.group_count; ++g) {
    auto part = attention_backward(kernel, gather_group(x, sg, g), w, gather_group(grad_out, sg, g));
    accumulate(total.grad_w.w_theta, part.grad_w.w_theta);
    accumulate(total.grad_w.w_phi, part.grad_w.w_phi);
    accumulate(total.grad_w.w_g, part.grad_w.w_g);
    dx_parts.push_back(std::move(part.grad_x));
  }
  total.grad_x = scatter_groups(dx_parts, sg);
  return total;
}

}  // namespace lssg
