#pragma once

// Ready-made finite-difference suites shared by the test binaries and the
// CLI. Each returns one report per parameter group. `corrupt` names a group
// whose analytic gradient is deliberately skewed before comparison, which
// gives the CLI a negative control.

#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "lssg/block.hpp"
#include "lssg/gradcheck.hpp"
#include "lssg/train.hpp"

namespace lssg {

inline constexpr double kOpGradTolerance = 1e-6;
inline constexpr double kNetGradTolerance = 1e-4;

namespace detail {

inline void fill_uniform(std::span<double> v, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& x : v) x = u(rng);
}

inline Volume<double> uniform_volume(Shape4 s, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  Volume<double> v(s);
  fill_uniform(v.values(), rng, lo, hi);
  return v;
}

inline Matrix<double> uniform_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  Matrix<double> m(r, c);
  fill_uniform(m.values(), rng, -1, 1);
  return m;
}

// Analytic gradients are copied so a corrupted group does not leak back.
struct OwnedTarget {
  std::string name;
  std::span<double> values;
  std::vector<double> analytic;
};

template <typename Loss>
std::vector<GradReport> run_gradcheck(std::vector<OwnedTarget> targets, Loss&& loss, const std::string& corrupt,
                                      double step = 1e-5, int refinements = 0) {
  std::vector<GradTarget<double>> views;
  for (auto& t : targets) {
    if (t.name == corrupt) {
      for (auto& v : t.analytic) v = v * 1.01 + 1e-3;
    }
    views.push_back({t.name, t.values, t.analytic});
  }
  return gradcheck<double>(views, loss, step, refinements);
}

template <std::floating_point T>
std::vector<double> copy(std::span<const T> s) {
  return {s.begin(), s.end()};
}

}  // namespace detail

// Grouped attention with loss <r, lssg_forward(x)>.
inline std::vector<GradReport> attention_gradcheck(Shape4 shape, GroupingMode mode, std::size_t groups,
                                                   AttentionKernel kernel, std::uint64_t seed,
                                                   const std::string& corrupt = "") {
  std::mt19937_64 rng(seed);
  auto x = detail::uniform_volume(shape, rng);
  AttentionWeights<double> w{detail::uniform_matrix(shape.c, shape.c, rng), detail::uniform_matrix(shape.c, shape.c, rng),
                             detail::uniform_matrix(shape.c, shape.c, rng)};
  const auto r = detail::uniform_volume(shape, rng);
  const auto sg = build_grouping(mode, shape.d, groups);
  const auto g = lssg_backward(x, w, sg, r, kernel);
  auto loss = [&] { return dot<double>(lssg_forward(x, w, sg, kernel).values(), r.values()); };
  return detail::run_gradcheck({{"x", x.values(), detail::copy<double>(g.grad_x.values())},
                                {"w_theta", w.w_theta.values(), detail::copy<double>(g.grad_w.w_theta.values())},
                                {"w_phi", w.w_phi.values(), detail::copy<double>(g.grad_w.w_phi.values())},
                                {"w_g", w.w_g.values(), detail::copy<double>(g.grad_w.w_g.values())}},
                               loss, corrupt);
}

inline std::vector<GradReport> group_norm_gradcheck(Shape4 shape, std::size_t gn_groups, std::uint64_t seed,
                                                    const std::string& corrupt = "") {
  std::mt19937_64 rng(seed);
  auto x = detail::uniform_volume(shape, rng, -2, 3);
  std::vector<double> gamma(shape.c), beta(shape.c);
  detail::fill_uniform(gamma, rng, 0.5, 1.5);
  detail::fill_uniform(beta, rng, -0.5, 0.5);
  const auto r = detail::uniform_volume(shape, rng);
  auto fwd = group_norm<double>(x, gamma, beta, gn_groups);
  auto g = group_norm_backward<double>(x, gamma, fwd.stats, r);
  auto loss = [&] { return dot<double>(group_norm<double>(x, gamma, beta, gn_groups).output.values(), r.values()); };
  return detail::run_gradcheck({{"gn.x", x.values(), detail::copy<double>(g.grad_x.values())},
                                {"gn.gamma", gamma, g.grad_gamma},
                                {"gn.beta", beta, g.grad_beta}},
                               loss, corrupt);
}

inline std::vector<GradReport> block_gradcheck(Shape4 shape, GroupingMode mode, std::size_t groups,
                                               AttentionKernel kernel, std::uint64_t seed,
                                               const std::string& corrupt = "") {
  std::mt19937_64 rng(seed);
  const std::size_t gn_groups = std::gcd<std::size_t>(kDefaultGnGroups, shape.c);
  auto p = LssgBlockParams<double>::zeros(shape.c, mode, groups, gn_groups);
  p.kernel = kernel;
  p.attn = {detail::uniform_matrix(shape.c, shape.c, rng), detail::uniform_matrix(shape.c, shape.c, rng),
            detail::uniform_matrix(shape.c, shape.c, rng)};
  p.w_z = detail::uniform_matrix(shape.c, shape.c, rng);
  detail::fill_uniform(p.gn_gamma, rng, 0.5, 1.5);
  detail::fill_uniform(p.gn_beta, rng, -0.5, 0.5);
  auto x = detail::uniform_volume(shape, rng);
  const auto r = detail::uniform_volume(shape, rng);
  auto fwd = lssg_block_forward(x, p);
  auto g = lssg_block_backward(x, p, fwd.stats, r);
  auto loss = [&] { return dot<double>(lssg_block_forward(x, p).output.values(), r.values()); };
  return detail::run_gradcheck(
      {{"block.x", x.values(), detail::copy<double>(g.grad_x.values())},
       {"block.w_theta", p.attn.w_theta.values(), detail::copy<double>(g.grad_p.attn.w_theta.values())},
       {"block.w_phi", p.attn.w_phi.values(), detail::copy<double>(g.grad_p.attn.w_phi.values())},
       {"block.w_g", p.attn.w_g.values(), detail::copy<double>(g.grad_p.attn.w_g.values())},
       {"block.w_z", p.w_z.values(), detail::copy<double>(g.grad_p.w_z.values())},
       {"block.gn_gamma", p.gn_gamma, g.grad_p.gn_gamma},
       {"block.gn_beta", p.gn_beta, g.grad_p.gn_beta}},
      loss, corrupt);
}

// Two channels, 8^3 patch, one SSG and one LSG block (G = 2 at depth 4).
inline LayoutConfig miniature_layout() {
  LayoutConfig l;
  l.block_sequence = {SlotKind::Ssg, SlotKind::Lsg, SlotKind::None, SlotKind::None, SlotKind::None};
  l.group_count = 2;
  l.widths = {2, 2, 2, 2};
  l.patch = {8, 8, 8};
  l.stem_stride = 1;
  l.gn_groups = 2;
  l.rpn_hidden = 4;
  l.anchor_sizes = {2, 4};
  l.fpr_hidden = 4;
  return l;
}

// Detection loss through backbone, decoder and RPN; FPR loss for the FPR
// layers. Every parameter tensor is one group.
inline std::vector<GradReport> network_gradcheck(std::uint64_t seed, const std::string& corrupt = "",
                                                 LayoutConfig layout = miniature_layout()) {
  auto p = build_network<double>(layout, seed);
  std::mt19937_64 rng(seed ^ 0x5eedULL);
  for (auto& [k, t] : p.tensors) {
    if (k.ends_with("gn.gamma")) detail::fill_uniform(t.values, rng, 0.5, 1.5);
    else if (k.ends_with(".b") || k.ends_with("gn.beta")) detail::fill_uniform(t.values, rng, -0.1, 0.1);
  }
  const auto x = detail::uniform_volume({1, layout.patch[0], layout.patch[1], layout.patch[2]}, rng, 0, 1);
  const std::vector<Box3D> gts{{4, 4, 4, 3, 3, 3}};
  const auto anchors = generate_anchors(layout.feature_dims(), layout.anchors());
  const LossConfig lcfg;
  InferenceConfig icfg;
  icfg.nms_iou = 0.5;

  // hard-negative selection is frozen at the base point
  auto grads = zeros_like(p.tensors);
  LossSelection sel;
  {
    auto f = network_forward(p, x);
    sel = select_anchors(f.rpn, anchors, gts, lcfg);
    auto loss = detection_loss_on(f.rpn, anchors, gts, sel);
    network_backward(p, f, loss.grad_logits, loss.grad_offsets, grads);
    fpr_train_sample(p, f, gts, icfg, grads, 1.0);
  }
  auto det_loss = [&] { return detection_loss_on(network_forward(p, x).rpn, anchors, gts, sel).total(); };
  std::vector<detail::OwnedTarget> det, fpr;
  for (auto& [k, t] : p.tensors) (k.starts_with("fpr.") ? fpr : det).push_back({k, t.values, grads.at(k).values});
  auto reports = detail::run_gradcheck(std::move(det), det_loss, corrupt, 1e-5, 3);

  // FPR sees detached features, so its FC layers are checked with the
  // backbone output held fixed.
  const auto fixed = network_forward(p, x);
  auto fpr_loss = [&] {
    auto scratch = zeros_like(p.tensors);
    return fpr_train_sample(p, fixed, gts, icfg, scratch, 1.0);
  };
  for (auto& r : detail::run_gradcheck(std::move(fpr), fpr_loss, corrupt)) reports.push_back(r);
  return reports;
}

inline double max_error(const std::vector<GradReport>& reports) {
  double m = 0;
  for (const auto& r : reports) m = std::max(m, r.rel_error);
  return m;
}

}  // namespace lssg
