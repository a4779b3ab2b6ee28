#pragma once

// Detection heads.
//
// RPN: 3x3x3 conv + ReLU, then two parallel 1x1x1 convs giving one logit
// and six box offsets per anchor per cell. Channel a of the logit map and
// channels 6a..6a+5 of the offset map belong to anchor size a, so the flat
// anchor index ((d * H + h) * W + w) * A + a lines up with generate_anchors.
//
// FPR: crop the shallow map and the nearest-neighbour upsampled deep map at
// each candidate box, concatenate channels, adaptive max-pool to a fixed
// grid, then FC + ReLU + FC to one logit and six refinement offsets.

#include <cmath>
#include <iostream>
#include <span>
#include <vector>

#include "lssg/detect.hpp"
#include "lssg/layers.hpp"

namespace lssg {

template <std::floating_point T>
T sigmoid(T v) {
  return v >= 0 ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
}

template <std::floating_point T>
struct RpnParams {
  std::span<const T> conv_w, conv_b;  // hidden x C x 27, hidden
  std::span<const T> cls_w, cls_b;    // A x hidden, A
  std::span<const T> reg_w, reg_b;    // 6A x hidden, 6A
  std::size_t hidden = 0;
  std::size_t anchors = 0;
};

template <std::floating_point T>
struct RpnGrads {
  std::span<T> conv_w, conv_b, cls_w, cls_b, reg_w, reg_b;
};

template <std::floating_point T>
struct RpnOutput {
  Volume<T> hidden;  // post-ReLU, kept for backward
  Volume<T> logits;  // A channels
  Volume<T> offsets;  // 6A channels

  Volume<T> scores() const {
    Volume<T> s = logits;
    for (auto& v : s.values()) v = sigmoid(v);
    return s;
  }
};

template <std::floating_point T>
RpnOutput<T> rpn_head(const Volume<T>& feature, const RpnParams<T>& p) {
  if (p.conv_w.size() != p.hidden * feature.channels() * 27) {
    throw ShapeError("rpn_head: feature has " + std::to_string(feature.channels()) +
                     " channels, parameters expect " + std::to_string(p.conv_w.size() / 27 / std::max<std::size_t>(p.hidden, 1)));
  }
  RpnOutput<T> out;
  out.hidden = conv3d<T>(feature, p.conv_w, p.conv_b, p.hidden, 1);
  relu_inplace(out.hidden);
  out.logits = conv1x1<T>(out.hidden, p.cls_w, p.cls_b, p.anchors);
  out.offsets = conv1x1<T>(out.hidden, p.reg_w, p.reg_b, 6 * p.anchors);
  return out;
}

// Returns dL/dfeature; parameter gradients are accumulated into g.
template <std::floating_point T>
Volume<T> rpn_head_backward(const Volume<T>& feature, const RpnParams<T>& p, const RpnOutput<T>& out,
                            const Volume<T>& grad_logits, const Volume<T>& grad_offsets, const RpnGrads<T>& g) {
  Volume<T> dh = conv1x1_backward<T>(out.hidden, p.cls_w, grad_logits, g.cls_w, g.cls_b);
  accumulate(dh, conv1x1_backward<T>(out.hidden, p.reg_w, grad_offsets, g.reg_w, g.reg_b));
  relu_backward_inplace(out.hidden, dh);
  return conv3d_backward<T>(feature, p.conv_w, 1, dh, g.conv_w, g.conv_b);
}

// ---- false positive reduction ----

template <std::floating_point T>
struct FprParams {
  std::span<const T> fc1_w, fc1_b;  // hidden x in, hidden
  std::span<const T> fc2_w, fc2_b;  // 7 x hidden, 7
  std::size_t hidden = 0;
  std::size_t pool = 2;             // pooled grid is pool^3
  std::size_t shallow_stride = 2;
  std::size_t deep_stride = 4;
};

template <std::floating_point T>
struct FprGrads {
  std::span<T> fc1_w, fc1_b, fc2_w, fc2_b;
};

// Voxel range [lo, hi) of a box in a feature map with the given stride,
// clipped to the map. Empty when the box covers less than one cell.
struct CropRange {
  std::array<std::size_t, 3> lo{}, hi{};
  bool empty() const { return hi[0] <= lo[0] || hi[1] <= lo[1] || hi[2] <= lo[2]; }
};

inline CropRange crop_range(const Box3D& box, std::size_t stride, const std::array<std::size_t, 3>& dims) {
  CropRange r;
  const auto l = box.lo(), u = box.hi();
  for (int k = 0; k < 3; ++k) {
    const double a = std::clamp(l[k] / double(stride), 0.0, double(dims[k]));
    const double b = std::clamp(u[k] / double(stride), 0.0, double(dims[k]));
    if (b - a < 1.0) return CropRange{};  // sub-voxel at this resolution
    r.lo[k] = std::size_t(std::floor(a));
    r.hi[k] = std::min(dims[k], std::size_t(std::ceil(b)));
  }
  return r;
}

// Adaptive max pooling of x restricted to `crop`; bin b of an extent n spans
// [floor(b n / P), ceil((b + 1) n / P)). Output is C * P^3, channel-major.
template <std::floating_point T>
std::vector<T> crop_max_pool(const Volume<T>& x, const CropRange& crop, std::size_t pool) {
  std::vector<T> out;
  out.reserve(x.channels() * pool * pool * pool);
  std::array<std::size_t, 3> n{};
  for (int k = 0; k < 3; ++k) n[k] = crop.hi[k] - crop.lo[k];
  auto bin = [&](int k, std::size_t b) {
    return std::array<std::size_t, 2>{crop.lo[k] + b * n[k] / pool, crop.lo[k] + ((b + 1) * n[k] + pool - 1) / pool};
  };
  for (std::size_t c = 0; c < x.channels(); ++c)
    for (std::size_t bd = 0; bd < pool; ++bd)
      for (std::size_t bh = 0; bh < pool; ++bh)
        for (std::size_t bw = 0; bw < pool; ++bw) {
          const auto rd = bin(0, bd), rh = bin(1, bh), rw = bin(2, bw);
          T m = -std::numeric_limits<T>::infinity();
          for (std::size_t d = rd[0]; d < rd[1]; ++d)
            for (std::size_t h = rh[0]; h < rh[1]; ++h)
              for (std::size_t w = rw[0]; w < rw[1]; ++w) m = std::max(m, x.at(c, d, h, w));
          out.push_back(m);
        }
  return out;
}

// Nearest-neighbour upsampling by an integer factor.
template <std::floating_point T>
Volume<T> upsample_nearest(const Volume<T>& x, std::size_t factor, const std::array<std::size_t, 3>& dims) {
  Volume<T> y({x.channels(), dims[0], dims[1], dims[2]});
  for (std::size_t c = 0; c < x.channels(); ++c)
    for (std::size_t d = 0; d < dims[0]; ++d)
      for (std::size_t h = 0; h < dims[1]; ++h)
        for (std::size_t w = 0; w < dims[2]; ++w) {
          y.at(c, d, h, w) = x.at(c, std::min(d / factor, x.depth() - 1), std::min(h / factor, x.height() - 1),
                                  std::min(w / factor, x.width() - 1));
        }
  return y;
}

// Concatenation of the shallow map and the deep map brought to its grid.
template <std::floating_point T>
Volume<T> fpr_feature_map(const Volume<T>& shallow, const Volume<T>& deep, const FprParams<T>& p) {
  if (p.deep_stride % p.shallow_stride != 0) throw ConfigError("fpr: deep stride must be a multiple of the shallow one");
  return concat_channels(shallow, upsample_nearest(deep, p.deep_stride / p.shallow_stride,
                                                   {shallow.depth(), shallow.height(), shallow.width()}));
}

template <std::floating_point T>
struct FprForward {
  std::vector<T> pooled;  // fc input
  std::vector<T> hidden;  // post-ReLU
  std::array<T, 7> out{};  // logit, 6 offsets
};

template <std::floating_point T>
FprForward<T> fpr_fc_forward(std::vector<T> pooled, const FprParams<T>& p) {
  const std::size_t in = pooled.size();
  if (p.fc1_w.size() != p.hidden * in || p.fc2_w.size() != 7 * p.hidden) throw ShapeError("fpr: fc sizes");
  FprForward<T> f;
  f.pooled = std::move(pooled);
  f.hidden.resize(p.hidden);
  for (std::size_t j = 0; j < p.hidden; ++j) {
    const T v = p.fc1_b[j] + detail::dot4(p.fc1_w.data() + j * in, f.pooled.data(), in);
    f.hidden[j] = v > 0 ? v : T{0};
  }
  for (std::size_t k = 0; k < 7; ++k) f.out[k] = p.fc2_b[k] + detail::dot4(p.fc2_w.data() + k * p.hidden, f.hidden.data(), p.hidden);
  return f;
}

// Gradients of the FC layers only; the pooled features are treated as constants.
template <std::floating_point T>
void fpr_fc_backward(const FprForward<T>& f, const FprParams<T>& p, const std::array<T, 7>& grad_out,
                     const FprGrads<T>& g) {
  const std::size_t in = f.pooled.size();
  std::vector<T> dh(p.hidden, T{0});
  for (std::size_t k = 0; k < 7; ++k) {
    g.fc2_b[k] += grad_out[k];
    for (std::size_t j = 0; j < p.hidden; ++j) {
      g.fc2_w[k * p.hidden + j] += grad_out[k] * f.hidden[j];
      dh[j] += grad_out[k] * p.fc2_w[k * p.hidden + j];
    }
  }
  for (std::size_t j = 0; j < p.hidden; ++j) {
    if (!(f.hidden[j] > 0)) continue;
    g.fc1_b[j] += dh[j];
    for (std::size_t i = 0; i < in; ++i) g.fc1_w[j * in + i] += dh[j] * f.pooled[i];
  }
}

struct FprCandidate {
  std::size_t index = 0;  // position in the input candidate list
  CropRange crop;
};

// Candidates whose crop is non-empty, in input order; the rest are reported on `warn`.
inline std::vector<FprCandidate> fpr_select(const std::vector<Detection>& candidates, std::size_t shallow_stride,
                                            const std::array<std::size_t, 3>& shallow_dims,
                                            std::ostream* warn = &std::cerr) {
  std::vector<FprCandidate> out;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    CropRange r = crop_range(candidates[i].box, shallow_stride, shallow_dims);
    if (r.empty()) {
      if (warn) *warn << "fpr: dropping candidate " << i << " (crop smaller than one voxel)\n";
      continue;
    }
    out.push_back({i, r});
  }
  return out;
}

// Rescored and refined detections for every candidate with a usable crop.
template <std::floating_point T>
std::vector<Detection> fpr_head(const std::vector<Detection>& candidates, const Volume<T>& shallow,
                                const Volume<T>& deep, const FprParams<T>& p, std::ostream* warn = &std::cerr) {
  const Volume<T> fmap = fpr_feature_map(shallow, deep, p);
  std::vector<Detection> out;
  for (const auto& c : fpr_select(candidates, p.shallow_stride, {fmap.depth(), fmap.height(), fmap.width()}, warn)) {
    auto f = fpr_fc_forward<T>(crop_max_pool(fmap, c.crop, p.pool), p);
    BoxOffsets t{};
    for (int k = 0; k < 6; ++k) t[k] = double(f.out[k + 1]);
    out.push_back({decode_box(candidates[c.index].box, t), double(sigmoid(f.out[0]))});
  }
  return out;
}

}  // namespace lssg
