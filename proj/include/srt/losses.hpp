#pragma once

#include <cstdint>
#include <vector>

#include "srt/common.hpp"
#include "srt/field.hpp"

namespace srt {

/// K landmark coordinates for one (view, frame) slot.
struct LandmarkSet {
  std::vector<Point2> coords;
  int view = 0;
  int frame = 0;

  size_t size() const { return coords.size(); }
};

/// K per-landmark heatmaps sharing one resolution.
struct HeatmapSet {
  std::vector<ScalarField> maps;

  HeatmapSet() = default;
  explicit HeatmapSet(std::vector<ScalarField> m);
  size_t size() const { return maps.size(); }
};

/// Per-landmark reliability flags: sbr from the forward-backward rule,
/// sbt from the reprojection-distance rule.
struct ReliabilityMask {
  std::vector<std::uint8_t> sbr_flags;
  std::vector<std::uint8_t> sbt_flags;

  static ReliabilityMask all_on(size_t k) { return {std::vector<std::uint8_t>(k, 1), std::vector<std::uint8_t>(k, 1)}; }
};

struct LossWeights {
  double w_sbr = 0.0;
  double w_sbt = 0.0;
};

/// Distance thresholds as fractions of sqrt(bbox area).
struct Thresholds {
  double t_fb_frac = 0.01;
  double t_d_frac = 0.01;
  double t_tri_frac = 0.01;
};

struct RegressionLossResult {
  double loss = 0.0;
  std::vector<Disp2> grad_pred;
};

struct HeatmapLossResult {
  double loss = 0.0;
  std::vector<ScalarField> grad_pred;
};

struct SbrCoordLossResult {
  double loss = 0.0;
  std::vector<Disp2> grad_det;
  std::vector<Disp2> grad_tracked;
};

struct SbrMapLossResult {
  double loss = 0.0;
  std::vector<ScalarField> grad_maps;
  std::vector<ScalarField> grad_warped;
};

struct SbtCoordLossResult {
  double loss = 0.0;
  std::vector<Disp2> grad_det;
  std::vector<Disp2> grad_reproj;
};

struct SbtMapLossResult {
  double loss = 0.0;
  std::vector<ScalarField> grad_maps;
  std::vector<Disp2> grad_det;
  std::vector<Disp2> grad_reproj;
};

/// Sum_k |pred_k - gt_k|_1. Subgradient 0 at exact ties.
RegressionLossResult detection_loss_regression(const LandmarkSet& pred,
                                               const LandmarkSet& gt);

/// Sum_k ||pred_k - gt_k||_F (norms, not squares); zero-residual maps get
/// zero gradient.
HeatmapLossResult detection_loss_heatmap(const HeatmapSet& pred,
                                         const HeatmapSet& gt);

/// Sum_k sbr_k |det_k - tracked_k|_1, with gradients to both sides.
SbrCoordLossResult sbr_loss_coords(const LandmarkSet& det_curr,
                                   const LandmarkSet& tracked,
                                   const ReliabilityMask& mask);

/// Sum_k sbr_k ||maps_k - warped_prev_k||_F.
SbrMapLossResult sbr_loss_heatmap(const HeatmapSet& maps_curr,
                                  const HeatmapSet& warped_prev,
                                  const ReliabilityMask& mask);

/// sbt_k = 0 iff ||reproj_k - det_k||_2 > t_tri_frac * bbox_scale.
std::vector<std::uint8_t> sbt_reliability(const LandmarkSet& det,
                                          const LandmarkSet& reproj,
                                          double bbox_scale,
                                          const Thresholds& th = {});

/// Sum_k sbt_k |det_k - reproj_k|_1.
SbtCoordLossResult sbt_loss_coords(const LandmarkSet& det,
                                   const LandmarkSet& reproj,
                                   const ReliabilityMask& mask);

/// Sum_k sbt_k ||maps_k - shift(maps_k, reproj_k - det_k)||_F where shift
/// translates a map by the displacement with bilinear resampling
/// (out-of-range sources read as 0). Gradients go to the maps and, through
/// the displacement, to both coordinate sets.
SbtMapLossResult sbt_loss_heatmap(const HeatmapSet& maps, const LandmarkSet& det,
                                  const LandmarkSet& reproj,
                                  const ReliabilityMask& mask);

/// Bilinear translation of a field by d: out(x) = field(x - d), OOB -> 0.
ScalarField translate_field(const ScalarField& field, Disp2 d);

struct TranslateFieldGrad {
  ScalarField grad_field;
  Disp2 grad_disp;
};

/// Adjoint of translate_field: given d(loss)/d(translated output), returns
/// d(loss)/d(field) and d(loss)/d(displacement).
TranslateFieldGrad translate_field_adjoint(const ScalarField& field, Disp2 d,
                                           const ScalarField& grad_out);

double total_loss(double det_loss, double sbr_loss, double sbt_loss,
                  const LossWeights& w);

}  // namespace srt
