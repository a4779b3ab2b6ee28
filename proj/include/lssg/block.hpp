#pragma once

// Residual slice-grouped attention block:
//
//   Z = recover(GN(W_z Y')) + X,   Y' = attention(gather(X)) per slice group
//
// GN is applied per slice group on the gathered sub-volume (default) or once
// on the recovered volume (GnPlacement::WholeVolume, ablation only).
// Forward returns the GN statistics alongside the output; backward insists
// on receiving the statistics produced for the same input and parameters.

#include <bit>
#include <cstdint>
#include <string>
#include <vector>

#include "lssg/attention.hpp"
#include "lssg/group_norm.hpp"
#include "lssg/io.hpp"

namespace lssg {

enum class GnPlacement { PerGroup, WholeVolume };

inline constexpr std::size_t kDefaultGnGroups = 4;

template <std::floating_point T>
struct LssgBlockParams {
  AttentionWeights<T> attn;
  Matrix<T> w_z;  // C x inner
  std::vector<T> gn_gamma;
  std::vector<T> gn_beta;
  std::size_t gn_groups = kDefaultGnGroups;
  GroupingMode grouping_mode = GroupingMode::Short;
  std::size_t group_count = 4;
  AttentionKernel kernel = AttentionKernel::CompactNonLocal;
  GnPlacement gn_placement = GnPlacement::PerGroup;
  T eps = T(1e-5);

  std::size_t channels() const { return w_z.rows(); }

  // Zero weights, gamma = 1, beta = 0: the block starts as the identity map.
  static LssgBlockParams zeros(std::size_t channels, GroupingMode mode, std::size_t groups,
                               std::size_t gn_groups = kDefaultGnGroups) {
    LssgBlockParams p;
    p.attn = AttentionWeights<T>::zeros(channels);
    p.w_z = Matrix<T>(channels, channels);
    p.gn_gamma.assign(channels, T{1});
    p.gn_beta.assign(channels, T{0});
    p.gn_groups = gn_groups;
    p.grouping_mode = mode;
    p.group_count = groups;
    return p;
  }

  void validate() const {
    attn.validate();
    const std::size_t c = channels();
    if (attn.in_channels() != c || w_z.cols() != attn.inner_channels()) {
      throw ShapeError("lssg block: W_z must map inner channels back to " + std::to_string(c));
    }
    if (gn_gamma.size() != c || gn_beta.size() != c) throw ShapeError("lssg block: GN affine length");
    if (gn_groups == 0 || c % gn_groups != 0) {
      throw ConfigError("lssg block: gn_groups=" + std::to_string(gn_groups) +
                        " does not divide C=" + std::to_string(c));
    }
    if (group_count == 0) throw ConfigError("lssg block: G must be >= 1");
  }

  bool operator==(const LssgBlockParams&) const = default;
};

template <std::floating_point T>
struct BlockStats {
  Shape4 shape;
  std::uint64_t fingerprint = 0;  // input volume + parameters
  std::vector<GroupNormStats<T>> gn;  // per slice group, or one entry for WholeVolume
};

template <std::floating_point T>
struct BlockForward {
  Volume<T> output;
  BlockStats<T> stats;
};

template <std::floating_point T>
struct BlockGrads {
  Volume<T> grad_x;
  LssgBlockParams<T> grad_p;  // same layout/config as the parameters
};

namespace detail {

class Fnv1a {
 public:
  template <std::floating_point T>
  void add(std::span<const T> v) {
    for (T x : v) {
      auto bits = std::bit_cast<std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>>(x);
      for (std::size_t i = 0; i < sizeof(T); ++i) {
        h_ ^= (bits >> (8 * i)) & 0xFFu;
        h_ *= 1099511628211ull;
      }
    }
  }
  void add(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h_ ^= (v >> (8 * i)) & 0xFFu;
      h_ *= 1099511628211ull;
    }
  }
  std::uint64_t value() const { return h_; }

 private:
  std::uint64_t h_ = 14695981039346656037ull;
};

template <std::floating_point T>
std::uint64_t block_fingerprint(const Volume<T>& x, const LssgBlockParams<T>& p) {
  Fnv1a f;
  f.add(x.values());
  f.add(p.attn.w_theta.values());
  f.add(p.attn.w_phi.values());
  f.add(p.attn.w_g.values());
  f.add(p.w_z.values());
  f.add<T>(p.gn_gamma);
  f.add<T>(p.gn_beta);
  f.add(static_cast<std::uint64_t>(p.gn_groups));
  f.add(static_cast<std::uint64_t>(p.grouping_mode));
  f.add(static_cast<std::uint64_t>(p.group_count));
  f.add(static_cast<std::uint64_t>(p.kernel));
  f.add(static_cast<std::uint64_t>(p.gn_placement));
  return f.value();
}

template <std::floating_point T>
SliceGrouping block_grouping(const Volume<T>& x, const LssgBlockParams<T>& p) {
  p.validate();
  if (x.channels() != p.channels()) {
    throw ShapeError("lssg block: volume has " + std::to_string(x.channels()) +
                     " channels, block expects " + std::to_string(p.channels()));
  }
  if (x.depth() % p.group_count != 0) {
    throw ShapeError("lssg block: G=" + std::to_string(p.group_count) +
                     " does not divide depth " + std::to_string(x.depth()));
  }
  return build_grouping(p.grouping_mode, x.depth(), p.group_count);
}

}  // namespace detail

template <std::floating_point T>
BlockForward<T> lssg_block_forward(const Volume<T>& x, const LssgBlockParams<T>& p) {
  const SliceGrouping sg = detail::block_grouping(x, p);
  BlockForward<T> r;
  r.stats.shape = x.shape();
  r.stats.fingerprint = detail::block_fingerprint(x, p);

  std::vector<Volume<T>> parts;
  parts.reserve(sg.group_count);
  for (std::size_t g = 0; g < sg.group_count; ++g) {
    Volume<T> y = attention_forward(p.kernel, gather_group(x, sg, g), p.attn);
    Volume<T> proj = pointwise_conv(y, p.w_z);
    if (p.gn_placement == GnPlacement::PerGroup) {
      auto gn = group_norm<T>(proj, p.gn_gamma, p.gn_beta, p.gn_groups, p.eps);
      r.stats.gn.push_back(std::move(gn.stats));
      parts.push_back(std::move(gn.output));
    } else {
      parts.push_back(std::move(proj));
    }
  }
  Volume<T> recovered = scatter_groups(parts, sg);
  if (p.gn_placement == GnPlacement::WholeVolume) {
    auto gn = group_norm<T>(recovered, p.gn_gamma, p.gn_beta, p.gn_groups, p.eps);
    r.stats.gn.push_back(std::move(gn.stats));
    recovered = std::move(gn.output);
  }
  r.output = add(recovered, x);
  require_finite(r.output, "lssg_block_forward");
  return r;
}

template <std::floating_point T>
BlockGrads<T> lssg_block_backward(const Volume<T>& x, const LssgBlockParams<T>& p,
                                  const BlockStats<T>& stats, const Volume<T>& grad_out) {
  const SliceGrouping sg = detail::block_grouping(x, p);
  const std::size_t expected_gn = p.gn_placement == GnPlacement::PerGroup ? sg.group_count : 1;
  if (stats.shape != x.shape() || stats.gn.size() != expected_gn ||
      stats.fingerprint != detail::block_fingerprint(x, p)) {
    throw StateError("lssg_block_backward: statistics were not produced for this input/parameters");
  }
  if (grad_out.shape() != x.shape()) throw ShapeError("lssg_block_backward: grad_out shape");

  const std::size_t c = p.channels();
  const std::size_t inner = p.attn.inner_channels();
  BlockGrads<T> r{grad_out, p};  // residual path: dZ/dX contributes grad_out directly
  r.grad_p.attn = AttentionWeights<T>::zeros(c, inner);
  r.grad_p.w_z = Matrix<T>(c, inner);
  r.grad_p.gn_gamma.assign(c, T{0});
  r.grad_p.gn_beta.assign(c, T{0});

  auto add_vec = [](std::vector<T>& dst, const std::vector<T>& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  };

  std::vector<Volume<T>> xs, ys, projs;
  for (std::size_t g = 0; g < sg.group_count; ++g) {
    xs.push_back(gather_group(x, sg, g));
    ys.push_back(attention_forward(p.kernel, xs.back(), p.attn));
    projs.push_back(pointwise_conv(ys.back(), p.w_z));
  }

  // d(proj) per group
  std::vector<Volume<T>> d_proj(sg.group_count);
  if (p.gn_placement == GnPlacement::PerGroup) {
    for (std::size_t g = 0; g < sg.group_count; ++g) {
      auto gg = group_norm_backward<T>(projs[g], p.gn_gamma, stats.gn[g], gather_group(grad_out, sg, g));
      add_vec(r.grad_p.gn_gamma, gg.grad_gamma);
      add_vec(r.grad_p.gn_beta, gg.grad_beta);
      d_proj[g] = std::move(gg.grad_x);
    }
  } else {
    const Volume<T> recovered = scatter_groups(projs, sg);
    auto gg = group_norm_backward<T>(recovered, p.gn_gamma, stats.gn[0], grad_out);
    r.grad_p.gn_gamma = std::move(gg.grad_gamma);
    r.grad_p.gn_beta = std::move(gg.grad_beta);
    for (std::size_t g = 0; g < sg.group_count; ++g) d_proj[g] = gather_group(gg.grad_x, sg, g);
  }

  std::vector<Volume<T>> dx_parts;
  for (std::size_t g = 0; g < sg.group_count; ++g) {
    auto pc = pointwise_conv_backward(ys[g], p.w_z, d_proj[g]);
    accumulate(r.grad_p.w_z, pc.grad_w);
    auto ag = attention_backward(p.kernel, xs[g], p.attn, pc.grad_x);
    accumulate(r.grad_p.attn.w_theta, ag.grad_w.w_theta);
    accumulate(r.grad_p.attn.w_phi, ag.grad_w.w_phi);
    accumulate(r.grad_p.attn.w_g, ag.grad_w.w_g);
    dx_parts.push_back(std::move(ag.grad_x));
  }
  accumulate(r.grad_x, scatter_groups(dx_parts, sg));
  return r;
}

// Named sections for the LSSP container. Config values are stored as a
// six-element "config" section: gn_groups, mode, G, kernel, GN placement, eps.
template <std::floating_point T>
std::vector<NamedTensor<T>> block_to_sections(const LssgBlockParams<T>& p,
                                              const std::string& prefix = "") {
  auto mat = [&](const std::string& name, const Matrix<T>& m) {
    return NamedTensor<T>{prefix + name, {m.rows(), m.cols()},
                          std::vector<T>(m.values().begin(), m.values().end())};
  };
  return {
      mat("attn.w_theta", p.attn.w_theta),
      mat("attn.w_phi", p.attn.w_phi),
      mat("attn.w_g", p.attn.w_g),
      mat("w_z", p.w_z),
      {prefix + "gn.gamma", {p.gn_gamma.size()}, p.gn_gamma},
      {prefix + "gn.beta", {p.gn_beta.size()}, p.gn_beta},
      {prefix + "config",
       {6},
       {T(p.gn_groups), T(int(p.grouping_mode)), T(p.group_count), T(int(p.kernel)),
        T(int(p.gn_placement)), p.eps}},
  };
}

template <std::floating_point T>
LssgBlockParams<T> block_from_sections(const std::vector<NamedTensor<T>>& sections,
                                       const std::string& prefix = "") {
  auto find = [&](const std::string& name) -> const NamedTensor<T>& {
    for (const auto& s : sections) {
      if (s.name == prefix + name) return s;
    }
    throw FormatError("LSSP: missing section '" + prefix + name + "'");
  };
  auto mat = [&](const std::string& name) {
    const auto& s = find(name);
    if (s.dims.size() != 2) throw FormatError("LSSP: '" + s.name + "' is not a matrix");
    return Matrix<T>(s.dims[0], s.dims[1], s.values);
  };
  LssgBlockParams<T> p;
  p.attn = {mat("attn.w_theta"), mat("attn.w_phi"), mat("attn.w_g")};
  p.w_z = mat("w_z");
  p.gn_gamma = find("gn.gamma").values;
  p.gn_beta = find("gn.beta").values;
  const auto& cfg = find("config").values;
  if (cfg.size() != 6) throw FormatError("LSSP: block config must have 6 entries");
  p.gn_groups = static_cast<std::size_t>(cfg[0]);
  p.grouping_mode = static_cast<GroupingMode>(int(cfg[1]));
  p.group_count = static_cast<std::size_t>(cfg[2]);
  p.kernel = static_cast<AttentionKernel>(int(cfg[3]));
  p.gn_placement = static_cast<GnPlacement>(int(cfg[4]));
  p.eps = cfg[5];
  p.validate();
  return p;
}

}  // namespace lssg
