#pragma once

// Axis-aligned 3-D box geometry for the detector.
//
// Coordinates are continuous input-volume voxel units where voxel j spans
// [j, j + 1). A feature cell i at stride s therefore has its center at
// (i + 0.5) * s.

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "lssg/common.hpp"

namespace lssg {

struct Box3D {
  double cz = 0, cy = 0, cx = 0;
  double d = 1, h = 1, w = 1;

  double volume() const { return d * h * w; }
  std::array<double, 3> center() const { return {cz, cy, cx}; }
  std::array<double, 3> extent() const { return {d, h, w}; }
  std::array<double, 3> lo() const { return {cz - d / 2, cy - h / 2, cx - w / 2}; }
  std::array<double, 3> hi() const { return {cz + d / 2, cy + h / 2, cx + w / 2}; }
  bool valid() const {
    for (double v : {cz, cy, cx, d, h, w}) {
      if (!std::isfinite(v)) return false;
    }
    return d > 0 && h > 0 && w > 0;
  }
  bool contains(const std::array<double, 3>& p) const {
    const auto l = lo(), u = hi();
    for (int k = 0; k < 3; ++k) {
      if (p[k] < l[k] || p[k] > u[k]) return false;
    }
    return true;
  }
  bool operator==(const Box3D&) const = default;
};

struct Detection {
  Box3D box;
  double score = 0;
  bool operator==(const Detection&) const = default;
};

using BoxOffsets = std::array<double, 6>;  // dz, dy, dx, log-ratio d, h, w

struct AnchorSet {
  std::vector<double> sizes{5, 10, 20, 30, 50};
  double stride = 4;

  void validate() const {
    if (sizes.empty()) throw ConfigError("anchors: no sizes");
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      if (!(sizes[i] > 0)) throw ConfigError("anchors: sizes must be positive");
      if (i > 0 && !(sizes[i] > sizes[i - 1])) throw ConfigError("anchors: sizes must be strictly increasing");
    }
    if (!(stride > 0)) throw ConfigError("anchors: stride must be positive");
  }
};

// Order: depth, height, width, then size (size varies fastest).
inline std::vector<Box3D> generate_anchors(const std::array<std::size_t, 3>& feature_dims,
                                           const AnchorSet& anchors) {
  anchors.validate();
  for (std::size_t v : feature_dims) {
    if (v < 1) throw ConfigError("anchors: feature dims must be >= 1");
  }
  std::vector<Box3D> out;
  out.reserve(feature_dims[0] * feature_dims[1] * feature_dims[2] * anchors.sizes.size());
  const double s = anchors.stride;
  for (std::size_t d = 0; d < feature_dims[0]; ++d)
    for (std::size_t h = 0; h < feature_dims[1]; ++h)
      for (std::size_t w = 0; w < feature_dims[2]; ++w)
        for (double side : anchors.sizes) out.push_back({(d + 0.5) * s, (h + 0.5) * s, (w + 0.5) * s, side, side, side});
  return out;
}

inline double iou3d(const Box3D& a, const Box3D& b) {
  const auto al = a.lo(), ah = a.hi(), bl = b.lo(), bh = b.hi();
  double inter = 1.0;
  for (int k = 0; k < 3; ++k) {
    const double overlap = std::min(ah[k], bh[k]) - std::max(al[k], bl[k]);
    if (overlap <= 0) return 0.0;
    inter *= overlap;
  }
  const double uni = a.volume() + b.volume() - inter;
  return uni > 0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

inline BoxOffsets encode_box(const Box3D& anchor, const Box3D& gt) {
  if (!anchor.valid() || !gt.valid()) throw InputError("encode_box: invalid box");
  return {(gt.cz - anchor.cz) / anchor.d, (gt.cy - anchor.cy) / anchor.h, (gt.cx - anchor.cx) / anchor.w,
          std::log(gt.d / anchor.d),      std::log(gt.h / anchor.h),      std::log(gt.w / anchor.w)};
}

inline Box3D decode_box(const Box3D& anchor, const BoxOffsets& t) {
  return {anchor.cz + t[0] * anchor.d, anchor.cy + t[1] * anchor.h, anchor.cx + t[2] * anchor.w,
          anchor.d * std::exp(t[3]),   anchor.h * std::exp(t[4]),   anchor.w * std::exp(t[5])};
}

// Intersect with [0, dims) per axis. Returns a box with zero extent on an axis
// if it lies entirely outside.
inline Box3D clip_box(const Box3D& b, const std::array<std::size_t, 3>& dims) {
  auto l = b.lo(), u = b.hi();
  std::array<double, 3> c{}, e{};
  for (int k = 0; k < 3; ++k) {
    const double lo = std::clamp(l[k], 0.0, double(dims[k]));
    const double hi = std::clamp(u[k], 0.0, double(dims[k]));
    c[k] = (lo + hi) / 2;
    e[k] = std::max(0.0, hi - lo);
  }
  return {c[0], c[1], c[2], e[0], e[1], e[2]};
}

// Greedy NMS: highest score first, ties by input order. Survivors keep that order.
inline std::vector<Detection> nms3d(const std::vector<Detection>& dets, double iou_threshold) {
  if (!(iou_threshold > 0 && iou_threshold < 1)) throw ConfigError("nms3d: threshold must be in (0,1)");
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  std::vector<Detection> keep;
  for (std::size_t i : order) {
    bool suppressed = false;
    for (const auto& k : keep) {
      if (iou3d(k.box, dets[i].box) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) keep.push_back(dets[i]);
  }
  return keep;
}

}  // namespace lssg
