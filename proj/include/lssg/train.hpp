#pragma once

// Detection loss, SGD with momentum, the training loop and inference.
//
// Loss (a stand-in for the cited multi-task objective):
//   anchors with IoU >= 0.5 to some GT are positive, < 0.02 negative, the
//   rest ignored; each GT's best anchor is forced positive.
//   classification: binary cross-entropy over positives plus the
//     3 * max(npos, 1) hardest negatives, averaged over the selected anchors.
//   regression: smooth-L1 on encoded offsets, summed over the 6 coordinates,
//     averaged over positives.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "lssg/csv.hpp"
#include "lssg/net.hpp"
#include "lssg/phantom.hpp"

namespace lssg {

struct LossConfig {
  double pos_iou = 0.5;
  double neg_iou = 0.02;
  std::size_t neg_ratio = 3;
};

struct TrainConfig {
  double learning_rate = 0.001;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t batch_size = 16;
  std::size_t epochs = 1;
  std::uint64_t seed = 0;
  bool augment = false;  // random axis flips
  bool train_fpr = true;
  double clip_norm = 0;  // global gradient L2 cap, 0 = off
  LossConfig loss;

  void validate() const {
    if (!(learning_rate >= 0) || !std::isfinite(learning_rate)) throw ConfigError("train: lr must be >= 0");
    if (!(momentum >= 0 && momentum < 1)) throw ConfigError("train: momentum must be in [0,1)");
    if (!(weight_decay >= 0)) throw ConfigError("train: weight decay must be >= 0");
    if (batch_size == 0) throw ConfigError("train: batch size must be >= 1");
    if (!(clip_norm >= 0)) throw ConfigError("train: clip_norm must be >= 0");
  }
};

// ---- anchor assignment and loss ----

struct AnchorTargets {
  std::vector<int> label;        // 1 positive, 0 negative, -1 ignored
  std::vector<std::size_t> gt;   // matched GT for positives
  std::size_t positives = 0;
};

inline AnchorTargets assign_anchors(const std::vector<Box3D>& anchors, const std::vector<Box3D>& gts,
                                    const LossConfig& cfg) {
  AnchorTargets t;
  t.label.assign(anchors.size(), 0);
  t.gt.assign(anchors.size(), 0);
  if (gts.empty()) return t;
  std::vector<std::size_t> best_anchor(gts.size(), 0);
  std::vector<double> best_iou(gts.size(), -1.0);
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    double m = 0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = iou3d(anchors[i], gts[g]);
      if (v > m) {
        m = v;
        t.gt[i] = g;
      }
      if (v > best_iou[g]) {
        best_iou[g] = v;
        best_anchor[g] = i;
      }
    }
    t.label[i] = m >= cfg.pos_iou ? 1 : (m < cfg.neg_iou ? 0 : -1);
  }
  for (std::size_t g = 0; g < gts.size(); ++g) {
    t.label[best_anchor[g]] = 1;
    t.gt[best_anchor[g]] = g;
  }
  for (int l : t.label) t.positives += l == 1;
  return t;
}

template <std::floating_point T>
struct DetectionLoss {
  double cls = 0;
  double reg = 0;
  double total() const { return cls + reg; }
  Volume<T> grad_logits;
  Volume<T> grad_offsets;
};

inline double bce_with_logits(double z, double y) {
  return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
}

// Anchors entering the classification term: all positives plus the hardest
// negatives. The choice depends on the logits, so the loss is only piecewise
// smooth; gradients are those of the piece picked here.
struct LossSelection {
  AnchorTargets targets;
  std::vector<std::size_t> selected;
};

template <std::floating_point T>
LossSelection select_anchors(const RpnOutput<T>& rpn, const std::vector<Box3D>& anchors, const std::vector<Box3D>& gts,
                             const LossConfig& cfg) {
  const std::size_t a_n = rpn.logits.channels(), cells = rpn.logits.spatial();
  if (anchors.size() != a_n * cells) throw ShapeError("detection_loss: anchor count does not match the map");
  LossSelection s{assign_anchors(anchors, gts, cfg), {}};
  auto logit = [&](std::size_t i) { return double(rpn.logits.values()[(i % a_n) * cells + i / a_n]); };
  std::vector<std::size_t> negatives;
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    if (s.targets.label[i] == 1) s.selected.push_back(i);
    if (s.targets.label[i] == 0) negatives.push_back(i);
  }
  const std::size_t k = std::min(negatives.size(), cfg.neg_ratio * std::max<std::size_t>(s.targets.positives, 1));
  std::stable_sort(negatives.begin(), negatives.end(),
                   [&](std::size_t a, std::size_t b) { return bce_with_logits(logit(a), 0) > bce_with_logits(logit(b), 0); });
  s.selected.insert(s.selected.end(), negatives.begin(), negatives.begin() + std::ptrdiff_t(k));
  return s;
}

template <std::floating_point T>
DetectionLoss<T> detection_loss_on(const RpnOutput<T>& rpn, const std::vector<Box3D>& anchors,
                                   const std::vector<Box3D>& gts, const LossSelection& sel) {
  const std::size_t a_n = rpn.logits.channels(), cells = rpn.logits.spatial();
  if (anchors.size() != a_n * cells || sel.targets.label.size() != anchors.size()) {
    throw ShapeError("detection_loss: anchor count does not match the map");
  }
  const auto& t = sel.targets;
  const auto& selected = sel.selected;
  DetectionLoss<T> out{0, 0, Volume<T>(rpn.logits.shape()), Volume<T>(rpn.offsets.shape())};
  auto logit = [&](std::size_t i) { return double(rpn.logits.values()[(i % a_n) * cells + i / a_n]); };
  auto glogit = [&](std::size_t i) -> T& { return out.grad_logits.values()[(i % a_n) * cells + i / a_n]; };
  if (!selected.empty()) {
    const double inv = 1.0 / double(selected.size());
    for (std::size_t i : selected) {
      const double y = t.label[i] == 1 ? 1.0 : 0.0, z = logit(i);
      out.cls += bce_with_logits(z, y) * inv;
      glogit(i) = T((sigmoid(z) - y) * inv);
    }
  }
  if (t.positives > 0) {
    const double inv = 1.0 / double(t.positives);
    for (std::size_t i = 0; i < anchors.size(); ++i) {
      if (t.label[i] != 1) continue;
      const auto target = encode_box(anchors[i], gts[t.gt[i]]);
      for (std::size_t c = 0; c < 6; ++c) {
        const std::size_t idx = ((i % a_n) * 6 + c) * cells + i / a_n;
        const double diff = double(rpn.offsets.values()[idx]) - target[c];
        const double ad = std::abs(diff);
        out.reg += (ad < 1 ? 0.5 * diff * diff : ad - 0.5) * inv;
        out.grad_offsets.values()[idx] = T((ad < 1 ? diff : (diff > 0 ? 1.0 : -1.0)) * inv);
      }
    }
  }
  return out;
}

template <std::floating_point T>
DetectionLoss<T> detection_loss(const RpnOutput<T>& rpn, const std::vector<Box3D>& anchors,
                                const std::vector<Box3D>& gts, const LossConfig& cfg) {
  return detection_loss_on(rpn, anchors, gts, select_anchors(rpn, anchors, gts, cfg));
}

// ---- optimiser ----

// v <- momentum * v + (g + weight_decay * p);  p <- p - lr * v
template <std::floating_point T>
void sgd_step(ParamMap<T>& params, const ParamMap<T>& grads, const TrainConfig& cfg, ParamMap<T>& velocity) {
  if (velocity.empty()) velocity = zeros_like(params);
  if (grads.size() != params.size() || velocity.size() != params.size()) throw StateError("sgd: registry size mismatch");
  for (auto& [key, p] : params) {
    auto g = grads.find(key);
    auto v = velocity.find(key);
    if (g == grads.end() || v == velocity.end() || g->second.values.size() != p.values.size() ||
        v->second.values.size() != p.values.size()) {
      throw StateError("sgd: registry mismatch at '" + key + "'");
    }
    const T mu = T(cfg.momentum), wd = T(cfg.weight_decay), lr = T(cfg.learning_rate);
    for (std::size_t i = 0; i < p.values.size(); ++i) {
      T& vi = v->second.values[i];
      vi = mu * vi + (g->second.values[i] + wd * p.values[i]);
      p.values[i] -= lr * vi;
    }
  }
}

// Rescales all gradients together when their joint L2 norm exceeds max_norm.
// Returns the norm before clipping.
template <std::floating_point T>
double clip_gradients(ParamMap<T>& grads, double max_norm) {
  double sq = 0;
  for (const auto& [k, g] : grads)
    for (T v : g.values) sq += double(v) * double(v);
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const T s = T(max_norm / norm);
    for (auto& [k, g] : grads)
      for (T& v : g.values) v *= s;
  }
  return norm;
}

// ---- inference ----

struct InferenceConfig {
  std::size_t pre_nms = 300;
  std::size_t post_nms = 40;
  double nms_iou = 0.1;
  std::size_t fpr_candidates = 40;
};

// Top-scoring anchors, decoded, clipped, then NMS. Ties keep anchor order.
template <std::floating_point T>
std::vector<Detection> rpn_detections(const RpnOutput<T>& rpn, const std::vector<Box3D>& anchors,
                                      const std::array<std::size_t, 3>& volume_dims, const InferenceConfig& cfg) {
  const std::size_t a_n = rpn.logits.channels(), cells = rpn.logits.spatial();
  std::vector<std::size_t> order(anchors.size());
  std::iota(order.begin(), order.end(), 0);
  auto logit = [&](std::size_t i) { return rpn.logits.values()[(i % a_n) * cells + i / a_n]; };
  const std::size_t k = std::min(cfg.pre_nms, order.size());
  std::partial_sort(order.begin(), order.begin() + std::ptrdiff_t(k), order.end(), [&](std::size_t a, std::size_t b) {
    return logit(a) != logit(b) ? logit(a) > logit(b) : a < b;
  });
  std::vector<Detection> dets;
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t i = order[j];
    BoxOffsets t{};
    for (std::size_t c = 0; c < 6; ++c) {
      t[c] = std::clamp(double(rpn.offsets.values()[((i % a_n) * 6 + c) * cells + i / a_n]), -4.0, 4.0);
    }
    Box3D b = clip_box(decode_box(anchors[i], t), volume_dims);
    if (!b.valid()) continue;
    dets.push_back({b, double(sigmoid(logit(i)))});
  }
  auto kept = nms3d(dets, cfg.nms_iou);
  if (kept.size() > cfg.post_nms) kept.resize(cfg.post_nms);
  return kept;
}

template <std::floating_point T>
std::vector<Detection> detect(const ToyNetParams<T>& p, const Volume<T>& volume, const InferenceConfig& cfg,
                              bool use_fpr, std::ostream* warn = nullptr) {
  const auto& l = p.layout;
  auto f = network_forward(p, volume);
  const auto anchors = generate_anchors(l.feature_dims(), l.anchors());
  auto dets = rpn_detections(f.rpn, anchors, l.patch, cfg);
  if (!use_fpr) return dets;
  if (dets.size() > cfg.fpr_candidates) dets.resize(cfg.fpr_candidates);
  auto refined = fpr_head(dets, f.shallow, f.feature, fpr_params(p), warn);
  for (auto& d : refined) d.box = clip_box(d.box, l.patch);
  std::erase_if(refined, [](const Detection& d) { return !d.box.valid(); });
  std::stable_sort(refined.begin(), refined.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
  return nms3d(refined, cfg.nms_iou);
}

// ---- training ----

struct TrainLogRow {
  std::size_t step = 0;
  double loss_cls = 0, loss_reg = 0, loss_total = 0;
};

inline std::string train_log_csv(const std::vector<TrainLogRow>& rows) {
  std::string out = "step,loss_cls,loss_reg,loss_total\n";
  for (const auto& r : rows) {
    out += std::to_string(r.step) + "," + format_number(r.loss_cls) + "," + format_number(r.loss_reg) + "," +
           format_number(r.loss_total) + "\n";
  }
  return out;
}

template <std::floating_point T>
struct TrainResult {
  ToyNetParams<T> params;
  std::vector<TrainLogRow> log;
};

// Flip the volume and its boxes along the axes whose bit is set in `mask`.
template <std::floating_point T>
PhantomSample<T> flip_sample(const PhantomSample<T>& s, unsigned mask) {
  if (mask == 0) return s;
  const auto& v = s.volume;
  Volume<T> out(v.shape());
  const std::size_t D = v.depth(), H = v.height(), W = v.width();
  for (std::size_t c = 0; c < v.channels(); ++c)
    for (std::size_t d = 0; d < D; ++d)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w) {
          out.at(c, (mask & 1) ? D - 1 - d : d, (mask & 2) ? H - 1 - h : h, (mask & 4) ? W - 1 - w : w) = v.at(c, d, h, w);
        }
  PhantomSample<T> r{s.id, std::move(out), s.gt_boxes};
  for (auto& b : r.gt_boxes) {
    if (mask & 1) b.cz = double(D) - b.cz;
    if (mask & 2) b.cy = double(H) - b.cy;
    if (mask & 4) b.cx = double(W) - b.cx;
  }
  return r;
}

// FPR targets for one sample: the RPN's candidates labelled by whether their
// centre falls inside a GT box, refined towards that GT.
template <std::floating_point T>
double fpr_train_sample(const ToyNetParams<T>& p, const NetForward<T>& f, const std::vector<Box3D>& gts,
                        const InferenceConfig& icfg, ParamMap<T>& g, double scale) {
  const auto& l = p.layout;
  const auto anchors = generate_anchors(l.feature_dims(), l.anchors());
  auto cands = rpn_detections(f.rpn, anchors, l.patch, icfg);
  if (cands.size() > icfg.fpr_candidates) cands.resize(icfg.fpr_candidates);
  const auto fp = fpr_params(p);
  const auto fg = fpr_grads(g);
  const Volume<T> fmap = fpr_feature_map(f.shallow, f.feature, fp);
  const auto sel = fpr_select(cands, fp.shallow_stride, {fmap.depth(), fmap.height(), fmap.width()}, nullptr);
  if (sel.empty()) return 0.0;
  double loss = 0;
  const double inv = scale / double(sel.size());
  for (const auto& c : sel) {
    const Box3D& box = cands[c.index].box;
    std::size_t hit = gts.size();
    for (std::size_t k = 0; k < gts.size() && hit == gts.size(); ++k) {
      if (gts[k].contains(box.center())) hit = k;
    }
    auto fw = fpr_fc_forward<T>(crop_max_pool(fmap, c.crop, fp.pool), fp);
    const double y = hit < gts.size() ? 1.0 : 0.0;
    std::array<T, 7> grad{};
    loss += bce_with_logits(double(fw.out[0]), y) * inv;
    grad[0] = T((sigmoid(double(fw.out[0])) - y) * inv);
    if (hit < gts.size()) {
      const auto target = encode_box(box, gts[hit]);
      for (int k = 0; k < 6; ++k) {
        const double diff = double(fw.out[k + 1]) - target[k], ad = std::abs(diff);
        loss += (ad < 1 ? 0.5 * diff * diff : ad - 0.5) * inv;
        grad[k + 1] = T((ad < 1 ? diff : (diff > 0 ? 1.0 : -1.0)) * inv);
      }
    }
    fpr_fc_backward<T>(fw, fp, grad, fg);
  }
  return loss;
}

// Runs cfg.epochs passes over the dataset in a seeded order. Each step
// averages the gradients of batch_size samples. `on_step` may be empty.
template <std::floating_point T>
TrainResult<T> train_toy(ToyNetParams<T> params, const std::vector<PhantomSample<T>>& dataset, const TrainConfig& cfg,
                         const InferenceConfig& icfg = {},
                         const std::function<void(const TrainLogRow&)>& on_step = {}) {
  cfg.validate();
  if (dataset.empty()) throw InputError("train: empty dataset");
  const auto& l = params.layout;
  const auto anchors = generate_anchors(l.feature_dims(), l.anchors());
  std::mt19937_64 rng(cfg.seed);
  ParamMap<T> velocity = zeros_like(params.tensors);
  TrainResult<T> result;
  std::size_t step = 0;
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const double scale = 1.0 / double(end - start);
      ParamMap<T> grads = zeros_like(params.tensors);
      TrainLogRow row{step, 0, 0, 0};
      for (std::size_t j = start; j < end; ++j) {
        const auto& raw = dataset[order[j]];
        const unsigned mask = cfg.augment ? unsigned(rng() & 7u) : 0u;
        const PhantomSample<T> s = flip_sample(raw, mask);
        auto f = network_forward(params, s.volume);
        auto loss = detection_loss(f.rpn, anchors, s.gt_boxes, cfg.loss);
        if (!std::isfinite(loss.total())) {
          throw NumericError("train: non-finite loss at step " + std::to_string(step) + " on " + s.id);
        }
        for (auto& v : loss.grad_logits.values()) v = T(double(v) * scale);
        for (auto& v : loss.grad_offsets.values()) v = T(double(v) * scale);
        network_backward(params, f, loss.grad_logits, loss.grad_offsets, grads);
        if (cfg.train_fpr) fpr_train_sample(params, f, s.gt_boxes, icfg, grads, scale);
        row.loss_cls += loss.cls * scale;
        row.loss_reg += loss.reg * scale;
      }
      row.loss_total = row.loss_cls + row.loss_reg;
      for (const auto& [k, g] : grads) {
        if (!all_finite<T>(g.values)) throw NumericError("train: non-finite gradient for '" + k + "' at step " + std::to_string(step));
      }
      if (cfg.clip_norm > 0) clip_gradients(grads, cfg.clip_norm);
      sgd_step(params.tensors, grads, cfg, velocity);
      result.log.push_back(row);
      if (on_step) on_step(row);
      ++step;
    }
  }
  result.params = std::move(params);
  return result;
}

// ---- key-value config files ----

// "key = value" per line; '#' starts a comment; blank lines ignored.
inline std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r"), b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  while (std::getline(in, line)) {
    ++n;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(n) + ": expected key = value");
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

namespace detail {

inline double kv_number(const std::string& key, const std::string& v) {
  double out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError("config: '" + key + "' is not a number: '" + v + "'");
  }
  return out;
}

inline std::size_t kv_count(const std::string& key, const std::string& v) {
  const double d = kv_number(key, v);
  if (d < 0 || d != std::floor(d)) throw ConfigError("config: '" + key + "' must be a non-negative integer");
  return std::size_t(d);
}

inline std::vector<std::size_t> kv_list(const std::string& key, const std::string& v, char sep) {
  std::vector<std::size_t> out;
  std::string part;
  std::istringstream in(v);
  while (std::getline(in, part, sep)) out.push_back(kv_count(key, part));
  return out;
}

}  // namespace detail

inline TrainConfig train_config_from(const std::map<std::string, std::string>& kv, TrainConfig cfg = {}) {
  for (const auto& [k, v] : kv) {
    if (k == "learning_rate") cfg.learning_rate = detail::kv_number(k, v);
    else if (k == "momentum") cfg.momentum = detail::kv_number(k, v);
    else if (k == "weight_decay") cfg.weight_decay = detail::kv_number(k, v);
    else if (k == "batch_size") cfg.batch_size = detail::kv_count(k, v);
    else if (k == "epochs") cfg.epochs = detail::kv_count(k, v);
    else if (k == "seed") cfg.seed = detail::kv_count(k, v);
    else if (k == "augment") cfg.augment = detail::kv_count(k, v) != 0;
    else if (k == "train_fpr") cfg.train_fpr = detail::kv_count(k, v) != 0;
    else if (k == "clip_norm") cfg.clip_norm = detail::kv_number(k, v);
    else throw ConfigError("train config: unknown key '" + k + "'");
  }
  cfg.validate();
  return cfg;
}

inline LayoutConfig layout_config_from(const std::map<std::string, std::string>& kv, LayoutConfig l = {}) {
  for (const auto& [k, v] : kv) {
    if (k == "layout") l.block_sequence = parse_layout(v);
    else if (k == "groups") l.group_count = detail::kv_count(k, v);
    else if (k == "kernel") l.kernel = parse_kernel(v);
    else if (k == "stem_stride") l.stem_stride = detail::kv_count(k, v);
    else if (k == "gn_groups") l.gn_groups = detail::kv_count(k, v);
    else if (k == "rpn_hidden") l.rpn_hidden = detail::kv_count(k, v);
    else if (k == "fpr_hidden") l.fpr_hidden = detail::kv_count(k, v);
    else if (k == "widths" || k == "patch") {
      const auto list = detail::kv_list(k, v, k == "widths" ? ',' : 'x');
      if (k == "widths") {
        if (list.size() != 4) throw ConfigError("layout config: widths needs 4 values");
        std::copy(list.begin(), list.end(), l.widths.begin());
      } else {
        if (list.size() != 3) throw ConfigError("layout config: patch needs DxHxW");
        std::copy(list.begin(), list.end(), l.patch.begin());
      }
    } else {
      throw ConfigError("layout config: unknown key '" + k + "'");
    }
  }
  l.validate();
  return l;
}

}  // namespace lssg
