#pragma once

// Toy detection experiment: train on one phantom set, detect on another,
// score with FROC. The RPN stage is the scored output; the FPR stage is
// reported alongside.

#include <string>
#include <vector>

#include "lssg/froc.hpp"
#include "lssg/train.hpp"

namespace lssg {

// Settings used for the layout comparison at 32^3. Small batches give enough
// SGD steps on 100 samples; clipping tames GroupNorm's 1/sqrt(eps) gradient
// when an attention scale passes through zero.
inline TrainConfig toy_train_config(std::uint64_t seed) {
  TrainConfig c;
  c.learning_rate = 0.01;
  c.momentum = 0.9;
  c.weight_decay = 1e-4;
  c.batch_size = 2;
  c.epochs = 10;
  c.seed = seed;
  c.augment = true;
  c.clip_norm = 5.0;
  return c;
}

inline constexpr std::uint64_t kToyTrainDataSeed = 1000;
inline constexpr std::uint64_t kToyEvalDataSeed = 2000;
inline constexpr std::size_t kToyTrainSize = 100;
inline constexpr std::size_t kToyEvalSize = 50;

struct ExperimentResult {
  FrocResult rpn;
  FrocResult fpr;
  DetectionsByScan rpn_detections;
  DetectionsByScan fpr_detections;
  std::vector<TrainLogRow> log;
  ToyNetParams<double> params;
};

// The layout's patch is taken from the data; every volume must share it.
inline LayoutConfig fit_patch(LayoutConfig layout, const std::vector<PhantomSample<double>>& data) {
  if (data.empty()) throw InputError("experiment: empty dataset");
  const auto& v = data.front().volume;
  layout.patch = {v.depth(), v.height(), v.width()};
  for (const auto& s : data) {
    if (s.volume.shape() != v.shape()) throw InputError("experiment: " + s.id + " has shape " + s.volume.shape().str());
  }
  layout.validate();
  return layout;
}

inline ExperimentResult run_experiment(const LayoutConfig& layout_in, const std::vector<PhantomSample<double>>& train,
                                       const std::vector<PhantomSample<double>>& eval, const TrainConfig& cfg,
                                       const MatchCriterion& criterion, const InferenceConfig& icfg = {},
                                       const std::function<void(const TrainLogRow&)>& on_step = {}) {
  const LayoutConfig layout = fit_patch(layout_in, train);
  fit_patch(layout, eval);
  ExperimentResult r;
  auto trained = train_toy(build_network<double>(layout, cfg.seed), train, cfg, icfg, on_step);
  r.params = std::move(trained.params);
  r.log = std::move(trained.log);
  GroundTruthByScan gts;
  for (const auto& s : eval) {
    gts[s.id] = s.gt_boxes;
    r.rpn_detections[s.id] = detect(r.params, s.volume, icfg, false);
    r.fpr_detections[s.id] = detect(r.params, s.volume, icfg, true);
  }
  r.rpn = evaluate_froc(r.rpn_detections, gts, criterion);
  r.fpr = evaluate_froc(r.fpr_detections, gts, criterion);
  return r;
}

}  // namespace lssg
