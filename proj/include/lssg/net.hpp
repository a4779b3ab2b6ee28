#pragma once

// Toy encoder-decoder with slice-grouped attention blocks in stages 2 and 3.
//
//   stem     3x3x3 conv, stride `stem_stride`, 1 -> w0               (stage 1)
//   stage 1  1 residual unit                                          -> s1
//   stage 2  stride-2 conv w0 -> w1, unit, [slot 0], unit, [slot 1]   -> s2
//   stage 3  stride-2 conv w1 -> w2, unit, [slot 2], unit, [slot 3], [slot 4]
//                                                                     -> s3
//   stage 4  stride-2 conv w2 -> w3, unit                             -> s4
//   decoder  c3 = [relu(deconv(s4)), relu(1x1(s3))]
//            feature = [relu(deconv(c3)), relu(1x1(s2))]  (2 * w1 channels)
//   rpn      on `feature`, whose stride is 2 * stem_stride
//
// A residual unit is relu(x + conv_b(relu(conv_a(x)))). s1 is the shallow map
// handed to the FPR head. All parameters live in one registry keyed by path.

#include <array>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "lssg/block.hpp"
#include "lssg/heads.hpp"
#include "lssg/io.hpp"
#include "lssg/layers.hpp"

namespace lssg {

enum class SlotKind { None, Ssg, Lsg };

inline const char* to_string(SlotKind k) {
  switch (k) {
    case SlotKind::None: return "none";
    case SlotKind::Ssg: return "ssg";
    case SlotKind::Lsg: return "lsg";
  }
  return "?";
}

inline constexpr std::size_t kSlotCount = 5;
inline constexpr std::array<const char*, kSlotCount> kSlotNames{"stage2.slot0", "stage2.slot1", "stage3.slot0",
                                                               "stage3.slot1", "stage3.slot2"};

struct LayoutConfig {
  std::array<SlotKind, kSlotCount> block_sequence{};
  std::size_t group_count = 4;
  std::array<std::size_t, 4> widths{8, 16, 32, 64};
  std::array<std::size_t, 3> patch{32, 32, 32};
  std::size_t stem_stride = 2;
  AttentionKernel kernel = AttentionKernel::CompactNonLocal;
  std::size_t gn_groups = 4;
  std::size_t rpn_hidden = 32;
  std::vector<double> anchor_sizes{5, 10, 20, 30, 50};
  std::size_t fpr_hidden = 32;
  std::size_t fpr_pool = 2;

  std::size_t feature_stride() const { return 2 * stem_stride; }
  std::size_t shallow_stride() const { return stem_stride; }
  AnchorSet anchors() const { return {anchor_sizes, double(feature_stride())}; }
  std::size_t feature_channels() const { return 2 * widths[1]; }
  std::size_t fpr_inputs() const { return (widths[0] + feature_channels()) * fpr_pool * fpr_pool * fpr_pool; }

  // Spatial extent per stage (index 0 = stage 1).
  std::array<std::array<std::size_t, 3>, 4> stage_dims() const {
    std::array<std::array<std::size_t, 3>, 4> s{};
    for (int k = 0; k < 3; ++k) {
      std::size_t v = conv_out_extent(patch[k], stem_stride);
      for (int st = 0; st < 4; ++st) {
        s[st][k] = v;
        v = conv_out_extent(v, 2);
      }
    }
    return s;
  }

  std::array<std::size_t, 3> feature_dims() const { return stage_dims()[1]; }

  static std::size_t slot_stage(std::size_t slot) { return slot < 2 ? 1 : 2; }  // index into widths

  void validate() const {
    if (stem_stride != 1 && stem_stride != 2) throw ConfigError("layout: stem stride must be 1 or 2");
    for (std::size_t w : widths) {
      if (w == 0) throw ConfigError("layout: widths must be positive");
    }
    const std::size_t unit = stem_stride * 8;
    for (std::size_t v : patch) {
      if (v == 0 || v % unit != 0) {
        throw ConfigError("layout: patch extents must be multiples of " + std::to_string(unit));
      }
    }
    if (group_count == 0) throw ConfigError("layout: G must be >= 1");
    if (rpn_hidden == 0 || fpr_hidden == 0 || fpr_pool == 0) throw ConfigError("layout: head sizes must be positive");
    AnchorSet{anchor_sizes, 1.0}.validate();
    const auto dims = stage_dims();
    for (std::size_t s = 0; s < kSlotCount; ++s) {
      if (block_sequence[s] == SlotKind::None) continue;
      const std::size_t st = slot_stage(s);
      const std::size_t depth = dims[st][0];
      if (depth % group_count != 0) {
        throw ConfigError("layout: slot " + std::to_string(s) + " (" + kSlotNames[s] + ") has depth " +
                          std::to_string(depth) + ", not divisible by G=" + std::to_string(group_count));
      }
      if (widths[st] % gn_groups != 0) {
        throw ConfigError("layout: gn_groups=" + std::to_string(gn_groups) + " does not divide width " +
                          std::to_string(widths[st]) + " at slot " + std::to_string(s));
      }
    }
  }

  std::string layout_string() const {
    std::size_t a = 0, b = 0;
    for (auto k : block_sequence) {
      a += k == SlotKind::Ssg;
      b += k == SlotKind::Lsg;
    }
    return std::to_string(a) + "/" + std::to_string(b);
  }

  bool operator==(const LayoutConfig&) const = default;
};

// "A/B": A SSG and B LSG blocks, alternating from SSG; once one kind runs
// out the other fills in, and leftover slots stay empty. 2/3 gives
// stage 2 = [SSG, LSG], stage 3 = [SSG, LSG, LSG].
inline std::array<SlotKind, kSlotCount> parse_layout(const std::string& s) {
  const auto slash = s.find('/');
  std::size_t a = 0, b = 0;
  try {
    if (slash == std::string::npos) throw std::invalid_argument("no slash");
    if (s.find_first_not_of("0123456789/") != std::string::npos) throw std::invalid_argument("digits only");
    std::size_t pa = 0, pb = 0;
    a = std::stoul(s.substr(0, slash), &pa);
    b = std::stoul(s.substr(slash + 1), &pb);
    if (pa != slash || pb != s.size() - slash - 1) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw ConfigError("layout must be A/B, got '" + s + "'");
  }
  if (a + b > kSlotCount) throw ConfigError("layout " + s + " needs more than 5 slots");
  std::array<SlotKind, kSlotCount> seq{};
  bool want_ssg = true;
  const std::size_t total = a + b;
  for (std::size_t i = 0; i < total; ++i) {
    if ((want_ssg && a > 0) || b == 0) {
      seq[i] = SlotKind::Ssg;
      --a;
    } else {
      seq[i] = SlotKind::Lsg;
      --b;
    }
    want_ssg = seq[i] == SlotKind::Lsg;
  }
  return seq;
}

template <std::floating_point T>
struct ParamTensor {
  std::vector<std::size_t> dims;
  std::vector<T> values;
  bool operator==(const ParamTensor&) const = default;
};

template <std::floating_point T>
using ParamMap = std::map<std::string, ParamTensor<T>>;

template <std::floating_point T>
ParamMap<T> zeros_like(const ParamMap<T>& m) {
  ParamMap<T> out;
  for (const auto& [k, v] : m) out[k] = {v.dims, std::vector<T>(v.values.size(), T{0})};
  return out;
}

template <std::floating_point T>
struct ToyNetParams {
  LayoutConfig layout;
  ParamMap<T> tensors;

  std::span<const T> at(const std::string& key) const {
    auto it = tensors.find(key);
    if (it == tensors.end()) throw StateError("params: missing '" + key + "'");
    return it->second.values;
  }
  std::span<T> at(const std::string& key) {
    auto it = tensors.find(key);
    if (it == tensors.end()) throw StateError("params: missing '" + key + "'");
    return it->second.values;
  }
  bool operator==(const ToyNetParams&) const = default;
};

template <std::floating_point T>
std::span<T> grad_at(ParamMap<T>& g, const std::string& key) {
  auto it = g.find(key);
  if (it == g.end()) throw StateError("grads: missing '" + key + "'");
  return it->second.values;
}

namespace detail {

struct EncOp {
  enum Kind { Stem, Down, Unit, Block } kind;
  std::string name;
  std::size_t cin = 0, cout = 0, stride = 1;
  std::size_t slot = 0;
  int stage_end = -1;  // 0..3 when this op's output is s1..s4
};

inline std::vector<EncOp> encoder_ops(const LayoutConfig& l) {
  std::vector<EncOp> ops;
  const auto& w = l.widths;
  ops.push_back({EncOp::Stem, "stem", 1, w[0], l.stem_stride});
  ops.push_back({EncOp::Unit, "stage1.unit0", w[0], w[0], 1});
  ops.back().stage_end = 0;
  auto slot = [&](std::size_t s) {
    if (l.block_sequence[s] != SlotKind::None) ops.push_back({EncOp::Block, kSlotNames[s], 0, 0, 1, s});
  };
  ops.push_back({EncOp::Down, "stage2.down", w[0], w[1], 2});
  ops.push_back({EncOp::Unit, "stage2.unit0", w[1], w[1], 1});
  slot(0);
  ops.push_back({EncOp::Unit, "stage2.unit1", w[1], w[1], 1});
  slot(1);
  ops.back().stage_end = 1;
  ops.push_back({EncOp::Down, "stage3.down", w[1], w[2], 2});
  ops.push_back({EncOp::Unit, "stage3.unit0", w[2], w[2], 1});
  slot(2);
  ops.push_back({EncOp::Unit, "stage3.unit1", w[2], w[2], 1});
  slot(3);
  slot(4);
  ops.back().stage_end = 2;
  ops.push_back({EncOp::Down, "stage4.down", w[2], w[3], 2});
  ops.push_back({EncOp::Unit, "stage4.unit0", w[3], w[3], 1});
  ops.back().stage_end = 3;
  return ops;
}

}  // namespace detail

// Deterministic He-uniform initialisation. Attention blocks start with
// gamma = 0, so every block is the identity map until it is trained.
template <std::floating_point T>
ToyNetParams<T> build_network(const LayoutConfig& layout, std::uint64_t seed) {
  layout.validate();
  ToyNetParams<T> p{layout, {}};
  std::mt19937_64 rng(seed);
  auto add = [&](const std::string& key, std::vector<std::size_t> dims, std::size_t fan_in, double gain) {
    const std::size_t n = std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
    std::vector<T> v(n, T{0});
    if (fan_in > 0) {
      const double bound = gain * std::sqrt(6.0 / double(fan_in));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (auto& x : v) x = T(u(rng));
    }
    p.tensors[key] = {std::move(dims), std::move(v)};
  };
  auto fill = [&](const std::string& key, std::size_t n, T value) { p.tensors[key] = {{n}, std::vector<T>(n, value)}; };
  auto conv = [&](const std::string& name, std::size_t ci, std::size_t co, double gain = 1.0) {
    add(name + ".w", {co, ci, 3, 3, 3}, ci * 27, gain);
    fill(name + ".b", co, T{0});
  };
  auto pw = [&](const std::string& name, std::size_t ci, std::size_t co, double gain = 1.0) {
    add(name + ".w", {co, ci}, ci, gain);
    fill(name + ".b", co, T{0});
  };

  for (const auto& op : detail::encoder_ops(layout)) {
    switch (op.kind) {
      case detail::EncOp::Stem:
      case detail::EncOp::Down: conv(op.name, op.cin, op.cout); break;
      case detail::EncOp::Unit:
        conv(op.name + ".a", op.cin, op.cout);
        conv(op.name + ".b", op.cout, op.cout, 0.25);
        break;
      case detail::EncOp::Block: {
        const std::size_t c = layout.widths[LayoutConfig::slot_stage(op.slot)];
        for (const char* m : {"attn.w_theta", "attn.w_phi", "attn.w_g", "w_z"}) {
          add(op.name + "." + m, {c, c}, c, 1.0 / std::sqrt(3.0));
        }
        fill(op.name + ".gn.gamma", c, T{0});
        fill(op.name + ".gn.beta", c, T{0});
        break;
      }
    }
  }
  const auto& w = layout.widths;
  const std::size_t fc = layout.feature_channels(), a = layout.anchor_sizes.size();
  add("decoder.up1.w", {w[3], w[2], 2, 2, 2}, w[3] * 8, 1.0);
  fill("decoder.up1.b", w[2], T{0});
  pw("decoder.lat3", w[2], w[2]);
  add("decoder.up2.w", {2 * w[2], w[1], 2, 2, 2}, 2 * w[2] * 8, 1.0);
  fill("decoder.up2.b", w[1], T{0});
  pw("decoder.lat2", w[1], w[1]);
  conv("rpn.conv", fc, layout.rpn_hidden);
  pw("rpn.cls", layout.rpn_hidden, a, 0.1);
  pw("rpn.reg", layout.rpn_hidden, 6 * a, 0.1);
  add("fpr.fc1.w", {layout.fpr_hidden, layout.fpr_inputs()}, layout.fpr_inputs(), 1.0);
  fill("fpr.fc1.b", layout.fpr_hidden, T{0});
  add("fpr.fc2.w", {7, layout.fpr_hidden}, layout.fpr_hidden, 0.1);
  fill("fpr.fc2.b", 7, T{0});
  return p;
}

template <std::floating_point T>
LssgBlockParams<T> block_params(const ToyNetParams<T>& p, std::size_t slot) {
  const auto& l = p.layout;
  const std::string base = kSlotNames[slot];
  const std::size_t c = l.widths[LayoutConfig::slot_stage(slot)];
  auto mat = [&](const char* m) {
    auto v = p.at(base + "." + m);
    return Matrix<T>(c, c, std::vector<T>(v.begin(), v.end()));
  };
  LssgBlockParams<T> b;
  b.attn = {mat("attn.w_theta"), mat("attn.w_phi"), mat("attn.w_g")};
  b.w_z = mat("w_z");
  auto gamma = p.at(base + ".gn.gamma"), beta = p.at(base + ".gn.beta");
  b.gn_gamma.assign(gamma.begin(), gamma.end());
  b.gn_beta.assign(beta.begin(), beta.end());
  b.gn_groups = l.gn_groups;
  b.grouping_mode = l.block_sequence[slot] == SlotKind::Lsg ? GroupingMode::Long : GroupingMode::Short;
  b.group_count = l.group_count;
  b.kernel = l.kernel;
  return b;
}

template <std::floating_point T>
RpnParams<T> rpn_params(const ToyNetParams<T>& p) {
  return {p.at("rpn.conv.w"), p.at("rpn.conv.b"), p.at("rpn.cls.w"), p.at("rpn.cls.b"),
          p.at("rpn.reg.w"),  p.at("rpn.reg.b"),  p.layout.rpn_hidden, p.layout.anchor_sizes.size()};
}

template <std::floating_point T>
RpnGrads<T> rpn_grads(ParamMap<T>& g) {
  return {grad_at(g, "rpn.conv.w"), grad_at(g, "rpn.conv.b"), grad_at(g, "rpn.cls.w"),
          grad_at(g, "rpn.cls.b"),  grad_at(g, "rpn.reg.w"),  grad_at(g, "rpn.reg.b")};
}

template <std::floating_point T>
FprParams<T> fpr_params(const ToyNetParams<T>& p) {
  const auto& l = p.layout;
  return {p.at("fpr.fc1.w"), p.at("fpr.fc1.b"), p.at("fpr.fc2.w"), p.at("fpr.fc2.b"), l.fpr_hidden, l.fpr_pool,
          l.shallow_stride(), l.feature_stride()};
}

template <std::floating_point T>
FprGrads<T> fpr_grads(ParamMap<T>& g) {
  return {grad_at(g, "fpr.fc1.w"), grad_at(g, "fpr.fc1.b"), grad_at(g, "fpr.fc2.w"), grad_at(g, "fpr.fc2.b")};
}

template <std::floating_point T>
struct NetCache {
  struct Op {
    Volume<T> in, mid, out;  // mid: post-ReLU conv_a output of a residual unit
    BlockStats<T> stats;
  };
  std::vector<Op> ops;
  std::array<std::size_t, 4> stage_out{};  // index into ops
  Volume<T> up1, lat3, c3, up2, lat2;
};

template <std::floating_point T>
struct NetForward {
  Volume<T> shallow;  // s1
  Volume<T> feature;  // decoder output
  RpnOutput<T> rpn;
  NetCache<T> cache;
};

template <std::floating_point T>
NetForward<T> network_forward(const ToyNetParams<T>& p, const Volume<T>& input) {
  const auto& l = p.layout;
  if (input.channels() != 1 || input.depth() != l.patch[0] || input.height() != l.patch[1] ||
      input.width() != l.patch[2]) {
    throw ShapeError("network: input " + input.shape().str() + " does not match patch 1x" +
                     std::to_string(l.patch[0]) + "x" + std::to_string(l.patch[1]) + "x" + std::to_string(l.patch[2]));
  }
  NetForward<T> f;
  auto& cache = f.cache;
  Volume<T> x = input;
  for (const auto& op : detail::encoder_ops(l)) {
    typename NetCache<T>::Op c;
    c.in = x;
    switch (op.kind) {
      case detail::EncOp::Stem:
      case detail::EncOp::Down:
        x = conv3d<T>(x, p.at(op.name + ".w"), p.at(op.name + ".b"), op.cout, op.stride);
        relu_inplace(x);
        break;
      case detail::EncOp::Unit: {
        c.mid = conv3d<T>(x, p.at(op.name + ".a.w"), p.at(op.name + ".a.b"), op.cout, 1);
        relu_inplace(c.mid);
        x = add(x, conv3d<T>(c.mid, p.at(op.name + ".b.w"), p.at(op.name + ".b.b"), op.cout, 1));
        relu_inplace(x);
        break;
      }
      case detail::EncOp::Block: {
        auto r = lssg_block_forward(x, block_params(p, op.slot));
        x = std::move(r.output);
        c.stats = std::move(r.stats);
        break;
      }
    }
    c.out = x;
    if (op.stage_end >= 0) cache.stage_out[op.stage_end] = cache.ops.size();
    cache.ops.push_back(std::move(c));
  }
  const auto& w = l.widths;
  const Volume<T>& s2 = cache.ops[cache.stage_out[1]].out;
  const Volume<T>& s3 = cache.ops[cache.stage_out[2]].out;
  const Volume<T>& s4 = cache.ops[cache.stage_out[3]].out;
  cache.up1 = deconv2<T>(s4, p.at("decoder.up1.w"), p.at("decoder.up1.b"), w[2]);
  relu_inplace(cache.up1);
  cache.lat3 = conv1x1<T>(s3, p.at("decoder.lat3.w"), p.at("decoder.lat3.b"), w[2]);
  relu_inplace(cache.lat3);
  cache.c3 = concat_channels(cache.up1, cache.lat3);
  cache.up2 = deconv2<T>(cache.c3, p.at("decoder.up2.w"), p.at("decoder.up2.b"), w[1]);
  relu_inplace(cache.up2);
  cache.lat2 = conv1x1<T>(s2, p.at("decoder.lat2.w"), p.at("decoder.lat2.b"), w[1]);
  relu_inplace(cache.lat2);
  f.feature = concat_channels(cache.up2, cache.lat2);
  f.shallow = cache.ops[cache.stage_out[0]].out;
  f.rpn = rpn_head(f.feature, rpn_params(p));
  require_finite(f.rpn.logits, "network_forward");
  require_finite(f.rpn.offsets, "network_forward");
  return f;
}

// Accumulates parameter gradients for the backbone, decoder and RPN into g.
// The FPR path is trained separately on detached features.
template <std::floating_point T>
void network_backward(const ToyNetParams<T>& p, const NetForward<T>& f, const Volume<T>& grad_logits,
                      const Volume<T>& grad_offsets, ParamMap<T>& g) {
  const auto& l = p.layout;
  const auto& w = l.widths;
  const auto& cache = f.cache;
  Volume<T> d_feat = rpn_head_backward(f.feature, rpn_params(p), f.rpn, grad_logits, grad_offsets, rpn_grads(g));

  auto [d_up2, d_lat2] = split_channels(d_feat, w[1]);
  relu_backward_inplace(cache.up2, d_up2);
  relu_backward_inplace(cache.lat2, d_lat2);
  const Volume<T>& s2 = cache.ops[cache.stage_out[1]].out;
  const Volume<T>& s3 = cache.ops[cache.stage_out[2]].out;
  const Volume<T>& s4 = cache.ops[cache.stage_out[3]].out;
  Volume<T> d_s2 = conv1x1_backward<T>(s2, p.at("decoder.lat2.w"), d_lat2, grad_at(g, "decoder.lat2.w"),
                                       grad_at(g, "decoder.lat2.b"));
  Volume<T> d_c3 = deconv2_backward<T>(cache.c3, p.at("decoder.up2.w"), d_up2, grad_at(g, "decoder.up2.w"),
                                       grad_at(g, "decoder.up2.b"));
  auto [d_up1, d_lat3] = split_channels(d_c3, w[2]);
  relu_backward_inplace(cache.up1, d_up1);
  relu_backward_inplace(cache.lat3, d_lat3);
  Volume<T> d_s3 = conv1x1_backward<T>(s3, p.at("decoder.lat3.w"), d_lat3, grad_at(g, "decoder.lat3.w"),
                                       grad_at(g, "decoder.lat3.b"));
  Volume<T> d_s4 = deconv2_backward<T>(s4, p.at("decoder.up1.w"), d_up1, grad_at(g, "decoder.up1.w"),
                                       grad_at(g, "decoder.up1.b"));

  const auto ops = detail::encoder_ops(l);
  Volume<T> d = std::move(d_s4);
  for (std::size_t i = ops.size(); i-- > 0;) {
    const auto& op = ops[i];
    const auto& c = cache.ops[i];
    if (i == cache.stage_out[2]) accumulate(d, d_s3);
    if (i == cache.stage_out[1]) accumulate(d, d_s2);
    switch (op.kind) {
      case detail::EncOp::Stem:
      case detail::EncOp::Down:
        relu_backward_inplace(c.out, d);
        d = conv3d_backward<T>(c.in, p.at(op.name + ".w"), op.stride, d, grad_at(g, op.name + ".w"),
                               grad_at(g, op.name + ".b"), op.kind == detail::EncOp::Down);
        break;
      case detail::EncOp::Unit: {
        relu_backward_inplace(c.out, d);
        Volume<T> d_mid = conv3d_backward<T>(c.mid, p.at(op.name + ".b.w"), 1, d, grad_at(g, op.name + ".b.w"),
                                             grad_at(g, op.name + ".b.b"));
        relu_backward_inplace(c.mid, d_mid);
        accumulate(d, conv3d_backward<T>(c.in, p.at(op.name + ".a.w"), 1, d_mid, grad_at(g, op.name + ".a.w"),
                                         grad_at(g, op.name + ".a.b")));
        break;
      }
      case detail::EncOp::Block: {
        const auto bp = block_params(p, op.slot);
        auto bg = lssg_block_backward(c.in, bp, c.stats, d);
        auto add_to = [&](const char* m, std::span<const T> v) {
          auto dst = grad_at(g, op.name + "." + m);
          for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += v[k];
        };
        add_to("attn.w_theta", bg.grad_p.attn.w_theta.values());
        add_to("attn.w_phi", bg.grad_p.attn.w_phi.values());
        add_to("attn.w_g", bg.grad_p.attn.w_g.values());
        add_to("w_z", bg.grad_p.w_z.values());
        add_to("gn.gamma", bg.grad_p.gn_gamma);
        add_to("gn.beta", bg.grad_p.gn_beta);
        d = std::move(bg.grad_x);
        break;
      }
    }
  }
}

// ---- checkpoints ----

// Layout is stored as a numeric "layout" section: 5 slot kinds, G, 4 widths,
// 3 patch extents, stem stride, kernel, gn_groups, rpn_hidden, fpr_hidden,
// fpr_pool, then the anchor sizes.
template <std::floating_point T>
std::string encode_checkpoint(const ToyNetParams<T>& p) {
  const auto& l = p.layout;
  std::vector<NamedTensor<double>> sections;
  std::vector<double> cfg;
  for (auto k : l.block_sequence) cfg.push_back(double(int(k)));
  cfg.push_back(double(l.group_count));
  for (auto v : l.widths) cfg.push_back(double(v));
  for (auto v : l.patch) cfg.push_back(double(v));
  cfg.push_back(double(l.stem_stride));
  cfg.push_back(double(int(l.kernel)));
  cfg.push_back(double(l.gn_groups));
  cfg.push_back(double(l.rpn_hidden));
  cfg.push_back(double(l.fpr_hidden));
  cfg.push_back(double(l.fpr_pool));
  cfg.insert(cfg.end(), l.anchor_sizes.begin(), l.anchor_sizes.end());
  sections.push_back({"layout", {cfg.size()}, cfg});
  for (const auto& [k, v] : p.tensors) sections.push_back({k, v.dims, std::vector<double>(v.values.begin(), v.values.end())});
  return encode_lssp(sections, sizeof(T));
}

template <std::floating_point T>
ToyNetParams<T> decode_checkpoint(const std::string& bytes) {
  auto sections = decode_lssp<double>(bytes);
  if (sections.empty() || sections[0].name != "layout") throw FormatError("checkpoint: missing layout section");
  const auto& c = sections[0].values;
  if (c.size() < 21) throw FormatError("checkpoint: layout section too short");
  LayoutConfig l;
  std::size_t i = 0;
  for (auto& k : l.block_sequence) k = static_cast<SlotKind>(int(c[i++]));
  l.group_count = std::size_t(c[i++]);
  for (auto& v : l.widths) v = std::size_t(c[i++]);
  for (auto& v : l.patch) v = std::size_t(c[i++]);
  l.stem_stride = std::size_t(c[i++]);
  l.kernel = static_cast<AttentionKernel>(int(c[i++]));
  l.gn_groups = std::size_t(c[i++]);
  l.rpn_hidden = std::size_t(c[i++]);
  l.fpr_hidden = std::size_t(c[i++]);
  l.fpr_pool = std::size_t(c[i++]);
  l.anchor_sizes.assign(c.begin() + std::ptrdiff_t(i), c.end());
  ToyNetParams<T> p = build_network<T>(l, 0);
  for (std::size_t s = 1; s < sections.size(); ++s) {
    auto it = p.tensors.find(sections[s].name);
    if (it == p.tensors.end()) throw FormatError("checkpoint: unexpected section '" + sections[s].name + "'");
    if (it->second.dims != sections[s].dims) throw FormatError("checkpoint: shape mismatch for '" + sections[s].name + "'");
    it->second.values.assign(sections[s].values.begin(), sections[s].values.end());
  }
  if (sections.size() != p.tensors.size() + 1) throw FormatError("checkpoint: missing parameter sections");
  return p;
}

}  // namespace lssg
