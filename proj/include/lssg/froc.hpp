#pragma once

// FROC evaluation at seven false-positive-per-scan operating points.
//
// Detections from all scans are pooled and walked in descending score
// order (ties: scan id, then index within the scan's list). Each detection
// claims the best still-unmatched GT in its scan that satisfies the
// criterion; anything else, including a second hit on an already claimed
// GT, is a false positive. After the last detection of each distinct score
// one curve point is emitted. Operating points are read off as a step
// function: the largest sensitivity whose FP/scan is <= the point.

#include <algorithm>
#include <array>
#include <cstdio>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "lssg/csv.hpp"
#include "lssg/detect.hpp"

namespace lssg {

inline constexpr std::array<double, 7> kFrocPoints{0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0};

struct MatchCriterion {
  enum class Kind { CenterInBox, IouAtLeast };
  Kind kind = Kind::CenterInBox;
  double threshold = 0.0;

  static MatchCriterion center() { return {}; }
  static MatchCriterion iou(double t) {
    if (!(t > 0 && t < 1)) throw ConfigError("criterion: iou threshold must be in (0,1)");
    return {Kind::IouAtLeast, t};
  }

  bool hits(const Box3D& det, const Box3D& gt) const {
    if (kind == Kind::CenterInBox) return gt.contains(det.center());
    return iou3d(det, gt) >= threshold;
  }

  std::string str() const {
    return kind == Kind::CenterInBox ? "center" : "iou:" + format_number(threshold);
  }
};

// "center" or "iou:T".
inline MatchCriterion parse_criterion(const std::string& s) {
  if (s == "center") return MatchCriterion::center();
  if (s.rfind("iou:", 0) == 0) {
    double t = 0;
    const std::string num = s.substr(4);
    auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), t);
    if (ec != std::errc() || ptr != num.data() + num.size() || num.empty()) {
      throw ConfigError("criterion: bad iou threshold '" + num + "'");
    }
    return MatchCriterion::iou(t);
  }
  throw ConfigError("criterion: expected 'center' or 'iou:T', got '" + s + "'");
}

struct FrocPoint {
  double fp_per_scan = 0;
  double sensitivity = 0;
  double threshold = 0;
  bool operator==(const FrocPoint&) const = default;
};

struct FrocResult {
  std::array<double, 7> operating_points = kFrocPoints;
  std::array<double, 7> sensitivities{};
  double average = 0;
  std::vector<FrocPoint> curve;
  bool operator==(const FrocResult&) const = default;
};

inline FrocResult evaluate_froc(const DetectionsByScan& detections, const GroundTruthByScan& ground_truths,
                                const MatchCriterion& criterion) {
  std::size_t total_gt = 0;
  for (const auto& [scan, list] : ground_truths) total_gt += list.size();
  if (total_gt == 0) throw InputError("froc: no ground-truth boxes, sensitivity undefined");

  struct Entry {
    double score;
    const std::string* scan;
    std::size_t index;
    const Box3D* box;
  };
  std::vector<Entry> pooled;
  for (const auto& [scan, list] : detections) {
    if (!ground_truths.contains(scan)) throw InputError("froc: detections for unknown scan '" + scan + "'");
    for (std::size_t i = 0; i < list.size(); ++i) {
      const double s = list[i].score;
      if (!(s >= 0 && s <= 1)) throw InputError("froc: score outside [0,1] in scan '" + scan + "'");
      pooled.push_back({s, &scan, i, &list[i].box});
    }
  }
  std::sort(pooled.begin(), pooled.end(), [](const Entry& a, const Entry& b) {
    return std::forward_as_tuple(b.score, *a.scan, a.index) < std::forward_as_tuple(a.score, *b.scan, b.index);
  });

  std::map<std::string, std::vector<bool>> claimed;
  for (const auto& [scan, list] : ground_truths) claimed[scan].assign(list.size(), false);

  const double n_scans = double(ground_truths.size());
  FrocResult r;
  std::size_t tp = 0, fp = 0;
  for (std::size_t k = 0; k < pooled.size(); ++k) {
    const Entry& e = pooled[k];
    const auto& gts = ground_truths.at(*e.scan);
    auto& used = claimed[*e.scan];
    std::size_t best = gts.size();
    double best_iou = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g] || !criterion.hits(*e.box, gts[g])) continue;
      const double v = iou3d(*e.box, gts[g]);
      if (v > best_iou) {
        best_iou = v;
        best = g;
      }
    }
    if (best < gts.size()) {
      used[best] = true;
      ++tp;
    } else {
      ++fp;
    }
    if (k + 1 == pooled.size() || pooled[k + 1].score != e.score) {
      r.curve.push_back({double(fp) / n_scans, double(tp) / double(total_gt), e.score});
    }
  }

  double sum = 0;
  for (std::size_t i = 0; i < kFrocPoints.size(); ++i) {
    double best = 0;
    for (const auto& p : r.curve) {
      if (p.fp_per_scan <= kFrocPoints[i]) best = std::max(best, p.sensitivity);
    }
    r.sensitivities[i] = best;
    sum += best;
  }
  r.average = sum / double(kFrocPoints.size());
  return r;
}

inline std::string format_froc_header() {
  std::string out = "Method";
  for (double p : kFrocPoints) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), " %g%s", p, p == double(long(p)) ? ".0" : "");
    out += buf;
  }
  return out + " | Avg\n";
}

// One row: "<name> s1 ... s7 | avg", percentages with two decimals. The
// printed average is the result's stored average, not recomputed.
inline std::string format_froc_row(const std::string& name, const FrocResult& r) {
  std::string out = name;
  char buf[32];
  for (double s : r.sensitivities) {
    std::snprintf(buf, sizeof(buf), " %.2f", s * 100.0);
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), " | %.2f\n", r.average * 100.0);
  return out + buf;
}

inline std::string format_froc_table(const std::vector<std::pair<std::string, FrocResult>>& results) {
  std::string out = format_froc_header();
  for (const auto& [name, r] : results) out += format_froc_row(name, r);
  return out;
}

inline std::string froc_curve_csv(const FrocResult& r) {
  std::string out = "threshold,fp_per_scan,sensitivity\n";
  for (const auto& p : r.curve) {
    out += format_number(p.threshold) + "," + format_number(p.fp_per_scan) + "," + format_number(p.sensitivity) +
           "\n";
  }
  return out;
}

inline std::string froc_summary_csv(const FrocResult& r) {
  std::string out = "fp_per_scan,sensitivity\n";
  for (std::size_t i = 0; i < kFrocPoints.size(); ++i) {
    out += format_number(kFrocPoints[i]) + "," + format_number(r.sensitivities[i]) + "\n";
  }
  return out + "average," + format_number(r.average) + "\n";
}

}  // namespace lssg
