#include "srt/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>

#include "json.hpp"
#include "srt/io.hpp"

namespace srt {

namespace {

Disp2 transpose_apply(const AffineTransform& t, Disp2 g) {
  return {t.a00 * g.dx + t.a10 * g.dy, t.a01 * g.dx + t.a11 * g.dy};
}

Disp2 transpose_apply(const Mat22& m, Disp2 g) {
  return {m.a00 * g.dx + m.a10 * g.dy, m.a01 * g.dx + m.a11 * g.dy};
}

Point2 clamp_into(Point2 p, int height, int width) {
  return {std::clamp(p.x, 0.0, width - 1.0), std::clamp(p.y, 0.0, height - 1.0)};
}

/// Forward pass plus gradient accumulators for one detector invocation.
struct FramePass {
  ForwardCache cache;
  HeatmapSet maps;                      // heatmap mode
  std::vector<SoftArgmaxResult> argmax; // heatmap mode
  std::vector<Point2> input_coords;
  std::vector<Point2> frame_coords;
  AffineTransform input_from_frame;
  AffineTransform frame_from_input;
  std::vector<Disp2> grad_input;
  std::vector<ScalarField> grad_maps;
  bool touched = false;
};

void forward_pass(const DetectorParams& params, const ScalarField& input,
                  FramePass& pass) {
  const DetectorConfig& cfg = params.config;
  const size_t k = static_cast<size_t>(cfg.landmarks);
  if (cfg.mode == DetectorMode::regression) {
    RegressionForward fwd = forward_regression(input, params);
    pass.input_coords = fwd.coords.coords;
    pass.cache = std::move(fwd.cache);
  } else {
    HeatmapForward fwd = forward_heatmap(input, params);
    pass.input_coords.reserve(k);
    for (const ScalarField& m : fwd.maps.maps) {
      pass.argmax.push_back(soft_argmax(m, cfg.temperature));
      const Point2 hm = pass.argmax.back().point;
      pass.input_coords.push_back({2.0 * hm.x, 2.0 * hm.y});
    }
    pass.maps = std::move(fwd.maps);
    pass.cache = std::move(fwd.cache);
    const int f = cfg.feature_size();
    pass.grad_maps.assign(k, ScalarField(f, f));
  }
  pass.grad_input.assign(k, Disp2{});
  pass.frame_coords.reserve(k);
  for (const Point2& p : pass.input_coords) {
    pass.frame_coords.push_back(pass.frame_from_input.apply(p));
  }
}

/// Identity-draw crop around the bbox, resized to the detector input.
FramePass frame_pass(const DetectorParams& params, const ScalarField& frame,
                     const Rect& bbox) {
  FramePass pass;
  const AugmentResult crop = crop_for_eval(frame, bbox, {});
  const int side = params.config.input_size;
  const ResizeResult rz = resize_to(crop.image, side, side);
  pass.input_from_frame = rz.out_from_in.composed_with(crop.crop_from_frame);
  pass.frame_from_input = pass.input_from_frame.inverse();
  forward_pass(params, rz.image, pass);
  return pass;
}

FramePass labeled_pass(const DetectorParams& params, const ScalarField& crop) {
  FramePass pass;
  forward_pass(params, crop, pass);
  return pass;
}

void add_coord_grad(FramePass& pass, size_t k, Disp2 g) {
  pass.grad_input[k].dx += g.dx;
  pass.grad_input[k].dy += g.dy;
  pass.touched = true;
}

void add_map_grad(FramePass& pass, size_t k, const ScalarField& g, double scale) {
  ScalarField& acc = pass.grad_maps[k];
  for (int r = 0; r < acc.height(); ++r) {
    for (int c = 0; c < acc.width(); ++c) acc.at(r, c) += scale * g.at(r, c);
  }
  pass.touched = true;
}

/// Folds coordinate gradients through soft-argmax (heatmap mode) and runs
/// the parameter backward pass.
void finish_pass(const DetectorParams& params, FramePass& pass,
                 std::vector<double>& grad) {
  if (!pass.touched) return;
  if (params.config.mode == DetectorMode::regression) {
    backward_regression(params, pass.cache, pass.grad_input, grad);
    return;
  }
  for (size_t k = 0; k < pass.grad_input.size(); ++k) {
    // input coordinate = 2 * heatmap coordinate
    const Disp2 g_hm{2.0 * pass.grad_input[k].dx, 2.0 * pass.grad_input[k].dy};
    if (g_hm.dx == 0.0 && g_hm.dy == 0.0) continue;
    const SoftArgmaxResult& sa = pass.argmax[k];
    ScalarField& acc = pass.grad_maps[k];
    for (int r = 0; r < acc.height(); ++r) {
      for (int c = 0; c < acc.width(); ++c) {
        acc.at(r, c) += sa.jac_x.at(r, c) * g_hm.dx + sa.jac_y.at(r, c) * g_hm.dy;
      }
    }
  }
  backward_heatmap(params, pass.cache, pass.grad_maps, grad);
}

LandmarkSet as_set(const std::vector<Point2>& coords) {
  LandmarkSet s;
  s.coords = coords;
  return s;
}

}  // namespace

void VideoData::validate() const {
  if (cameras.empty()) throw ConfigError("video data needs at least one view");
  if (frames.size() != cameras.size() || bboxes.size() != cameras.size()) {
    throw ConfigError("video data views are inconsistent");
  }
  const size_t t = frames[0].size();
  if (t == 0) throw ConfigError("video data needs at least one frame");
  for (size_t m = 0; m < frames.size(); ++m) {
    if (frames[m].size() != t || bboxes[m].size() != t) {
      throw ConfigError("video data frame counts differ between views");
    }
    cameras[m].validate();
  }
}

void TrainConfig::validate() const {
  detector.validate();
  patch.validate();
  if (!(adam.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (adam.beta1 < 0.0 || adam.beta1 >= 1.0 || adam.beta2 < 0.0 || adam.beta2 >= 1.0) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
  if (!(adam.eps > 0.0)) throw ConfigError("adam eps must be positive");
  if (stage1_epochs < 0 || stage2_epochs < 0) throw ConfigError("epoch counts must be nonnegative");
  if (steps_per_epoch < 0) throw ConfigError("steps per epoch must be nonnegative");
  if (batch.n_labeled < 1) throw ConfigError("batches need at least one labeled sample");
  if (batch.n_triplets < 0 || batch.n_quadruplets < 0) {
    throw ConfigError("batch composition counts must be nonnegative");
  }
  if (weights.w_sbr < 0.0 || weights.w_sbt < 0.0) {
    throw ConfigError("loss weights must be nonnegative");
  }
  if (!(thresholds.t_fb_frac > 0.0) || !(thresholds.t_d_frac > 0.0) ||
      !(thresholds.t_tri_frac > 0.0)) {
    throw ConfigError("thresholds must be positive");
  }
  if (run_length < 2) throw ConfigError("track runs need at least two frames");
}

EpochSampler::EpochSampler(size_t n) : order_(n) {
  std::iota(order_.begin(), order_.end(), size_t{0});
  cursor_ = n;  // first next() shuffles
}

size_t EpochSampler::next(Rng& rng) {
  if (order_.empty()) throw ConfigError("sampling from an empty pool");
  if (cursor_ >= order_.size()) {
    rng.shuffle(order_);
    cursor_ = 0;
  }
  return order_[cursor_++];
}

VideoData video_from_scene(const Scene& scene) {
  if (!scene.config.render_images) {
    throw ConfigError("video data needs rendered images");
  }
  VideoData video;
  video.cameras = scene.cameras;
  video.frames = scene.images;
  video.bboxes = scene.bboxes;
  return video;
}

std::vector<TrackRun> enumerate_runs(const VideoData& video, int length) {
  if (length < 2) throw ConfigError("track runs need at least two frames");
  std::vector<TrackRun> runs;
  for (int m = 0; m < video.views(); ++m) {
    for (int t0 = 0; t0 + length <= video.frame_count(); ++t0) {
      runs.push_back({m, t0, length});
    }
  }
  return runs;
}

Batch assemble_batch(const std::vector<LabeledSample>& labeled_pool,
                     const std::vector<TrackRun>& video_pool,
                     const VideoData* multiview_pool, const BatchConfig& config,
                     EpochSampler& labeled_state, EpochSampler& run_state,
                     EpochSampler& frame_state, Rng& rng) {
  if (config.n_labeled < 0 || config.n_triplets < 0 || config.n_quadruplets < 0) {
    throw ConfigError("batch composition counts must be nonnegative");
  }
  Batch batch;
  if (config.n_labeled > 0) {
    if (labeled_pool.empty()) throw ConfigError("labeled pool is empty");
    for (int i = 0; i < config.n_labeled; ++i) {
      batch.labeled.push_back(labeled_state.next(rng));
    }
  }
  if (config.n_triplets > 0) {
    if (video_pool.empty()) throw ConfigError("video pool is empty");
    for (int i = 0; i < config.n_triplets; ++i) {
      batch.runs.push_back(video_pool[run_state.next(rng)]);
    }
  }
  if (config.n_quadruplets > 0) {
    if (multiview_pool == nullptr || multiview_pool->frame_count() == 0) {
      throw ConfigError("multi-view pool is empty");
    }
    const int m = multiview_pool->views();
    if (m < 4) throw ConfigError("quadruplets need at least four views");
    for (int i = 0; i < config.n_quadruplets; ++i) {
      MultiviewItem item;
      item.frame = static_cast<int>(frame_state.next(rng));
      const int anchor = static_cast<int>(rng.below(static_cast<std::uint64_t>(m)));
      item.views[0] = anchor;
      std::vector<int> others;
      others.reserve(static_cast<size_t>(m) - 1);
      for (int v = 0; v < m; ++v) {
        if (v != anchor) others.push_back(v);
      }
      for (int j = 0; j < 3; ++j) {
        const size_t pick = static_cast<size_t>(rng.below(others.size()));
        item.views[j + 1] = others[pick];
        others.erase(others.begin() + static_cast<std::ptrdiff_t>(pick));
      }
      batch.quads.push_back(item);
    }
  }
  return batch;
}

namespace {

void run_sbr_item(const DetectorParams& params, const VideoData& video,
                  const TrackRun& run, const TrainConfig& config, double w_scale,
                  StepStats& stats, std::vector<double>& grad) {
  const DetectorConfig& dc = params.config;
  const int last = run.start + run.length - 1;
  if (run.view < 0 || run.view >= video.views() || run.start < 0 ||
      last >= video.frame_count()) {
    throw ConfigError("track run indexes outside the video");
  }
  const Rect bbox = video.bboxes[static_cast<size_t>(run.view)][static_cast<size_t>(run.start)];
  const double bbox_scale = std::sqrt(bbox.area());
  const FbCheckThresholds fb{config.thresholds.t_fb_frac, config.thresholds.t_d_frac};
  const size_t kk = static_cast<size_t>(dc.landmarks);

  std::vector<FramePass> passes;
  passes.reserve(static_cast<size_t>(run.length));
  for (int i = 0; i < run.length; ++i) {
    passes.push_back(frame_pass(params, video.frames[static_cast<size_t>(run.view)]
                                            [static_cast<size_t>(run.start + i)],
                                bbox));
  }

  for (int i = 1; i < run.length; ++i) {
    const ScalarField& prev_frame =
        video.frames[static_cast<size_t>(run.view)][static_cast<size_t>(run.start + i - 1)];
    const ScalarField& cur_frame =
        video.frames[static_cast<size_t>(run.view)][static_cast<size_t>(run.start + i)];
    FramePass& prev = passes[static_cast<size_t>(i - 1)];
    FramePass& cur = passes[static_cast<size_t>(i)];

    ReliabilityMask mask = ReliabilityMask::all_on(kk);
    std::vector<TrackResult> tracks(kk);
    for (size_t k = 0; k < kk; ++k) {
      tracks[k] = track_landmark_lk(prev_frame, cur_frame, prev.frame_coords[k],
                                    config.patch);
      const bool ok = tracks[k].valid && tracks[k].converged &&
                      forward_backward_check(prev_frame, cur_frame,
                                             prev.frame_coords[k], tracks[k].point,
                                             cur.frame_coords[k], bbox_scale,
                                             config.patch, bbox, fb);
      mask.sbr_flags[k] = ok ? 1 : 0;
      stats.beta_sbr_total += 1;
      if (!ok) stats.beta_sbr_zero += 1;
    }

    if (dc.mode == DetectorMode::regression) {
      std::vector<Point2> tracked_input(kk);
      for (size_t k = 0; k < kk; ++k) {
        tracked_input[k] = cur.input_from_frame.apply(tracks[k].point);
      }
      const SbrCoordLossResult res = sbr_loss_coords(
          as_set(cur.input_coords), as_set(tracked_input), mask);
      stats.l_sbr += res.loss;
      if (w_scale == 0.0) continue;
      for (size_t k = 0; k < kk; ++k) {
        if (!mask.sbr_flags[k]) continue;
        add_coord_grad(cur, k, {w_scale * res.grad_det[k].dx, w_scale * res.grad_det[k].dy});
        if (config.stop_tracked_gradient) continue;
        const Disp2 g_frame = transpose_apply(cur.input_from_frame, res.grad_tracked[k]);
        const Mat22 g_of = track_gradient_lk(prev_frame, cur_frame,
                                             prev.frame_coords[k], config.patch);
        const Disp2 g_start = transpose_apply(g_of, g_frame);
        const Disp2 g_prev = transpose_apply(prev.frame_from_input, g_start);
        add_coord_grad(prev, k, {w_scale * g_prev.dx, w_scale * g_prev.dy});
      }
    } else {
      const int f = dc.feature_size();
      std::vector<Disp2> disp(kk);
      std::vector<ScalarField> warped(kk, ScalarField(f, f));
      for (size_t k = 0; k < kk; ++k) {
        if (!mask.sbr_flags[k]) continue;
        const Disp2 d_frame = tracks[k].point - prev.frame_coords[k];
        const Disp2 d_input = cur.input_from_frame.apply_vector(d_frame);
        disp[k] = {0.5 * d_input.dx, 0.5 * d_input.dy};
        warped[k] = translate_field(prev.maps.maps[k], disp[k]);
      }
      const SbrMapLossResult res =
          sbr_loss_heatmap(cur.maps, HeatmapSet(warped), mask);
      stats.l_sbr += res.loss;
      if (w_scale == 0.0) continue;
      for (size_t k = 0; k < kk; ++k) {
        if (!mask.sbr_flags[k]) continue;
        add_map_grad(cur, k, res.grad_maps[k], w_scale);
        const TranslateFieldGrad adj =
            translate_field_adjoint(prev.maps.maps[k], disp[k], res.grad_warped[k]);
        add_map_grad(prev, k, adj.grad_field, w_scale);
        // displacement = 0.5 * A (tracked - prev_coords), A = input-from-frame
        const Disp2 g_frame_vec{
            0.5 * transpose_apply(cur.input_from_frame, adj.grad_disp).dx,
            0.5 * transpose_apply(cur.input_from_frame, adj.grad_disp).dy};
        Disp2 g_prev_frame{-g_frame_vec.dx, -g_frame_vec.dy};
        if (!config.stop_tracked_gradient) {
          const Mat22 g_of = track_gradient_lk(prev_frame, cur_frame,
                                               prev.frame_coords[k], config.patch);
          const Disp2 through = transpose_apply(g_of, g_frame_vec);
          g_prev_frame.dx += through.dx;
          g_prev_frame.dy += through.dy;
        }
        const Disp2 g_prev = transpose_apply(prev.frame_from_input, g_prev_frame);
        add_coord_grad(prev, k, {w_scale * g_prev.dx, w_scale * g_prev.dy});
      }
    }
  }

  for (FramePass& pass : passes) finish_pass(params, pass, grad);
}

void run_sbt_item(const DetectorParams& params, const VideoData& video,
                  const MultiviewItem& item, const TrainConfig& config,
                  double w_scale, StepStats& stats, std::vector<double>& grad) {
  const DetectorConfig& dc = params.config;
  const size_t kk = static_cast<size_t>(dc.landmarks);
  for (int v : item.views) {
    if (v < 0 || v >= video.views()) throw ConfigError("quadruplet view out of range");
  }
  if (item.frame < 0 || item.frame >= video.frame_count()) {
    throw ConfigError("quadruplet frame out of range");
  }

  std::array<FramePass, 4> passes;
  std::array<const CameraMatrix*, 4> cams{};
  for (size_t m = 0; m < 4; ++m) {
    const size_t v = static_cast<size_t>(item.views[m]);
    cams[m] = &video.cameras[v];
    passes[m] = frame_pass(params, video.frames[v][static_cast<size_t>(item.frame)],
                           video.bboxes[v][static_cast<size_t>(item.frame)]);
  }

  std::vector<Landmark3D> points(kk);
  std::vector<std::vector<Mat32>> jac(kk);
  std::vector<std::array<Point2, 4>> reproj(kk);
  std::vector<char> tri_ok(kk, 1);
  for (size_t k = 0; k < kk; ++k) {
    ViewObservationSet obs;
    for (size_t m = 0; m < 4; ++m) {
      obs.cameras.push_back(*cams[m]);
      obs.points.push_back(passes[m].frame_coords[k]);
    }
    try {
      points[k] = triangulate_dlt(obs);
      jac[k] = triangulation_jacobian(obs);
      for (size_t m = 0; m < 4; ++m) {
        reproj[k][m] = project(*cams[m], points[k]);
      }
    } catch (const DegenerateGeometry&) {
      tri_ok[k] = 0;
    } catch (const PointAtInfinity&) {
      tri_ok[k] = 0;
    }
    if (!tri_ok[k]) {
      for (size_t m = 0; m < 4; ++m) reproj[k][m] = passes[m].frame_coords[k];
    }
  }

  for (size_t m = 0; m < 4; ++m) {
    FramePass& pass = passes[m];
    const Rect& bbox = video.bboxes[static_cast<size_t>(item.views[m])]
                                   [static_cast<size_t>(item.frame)];
    std::vector<Point2> reproj_frame(kk);
    for (size_t k = 0; k < kk; ++k) reproj_frame[k] = reproj[k][m];

    ReliabilityMask mask = ReliabilityMask::all_on(kk);
    mask.sbt_flags = sbt_reliability(as_set(pass.frame_coords), as_set(reproj_frame),
                                     std::sqrt(bbox.area()), config.thresholds);
    for (size_t k = 0; k < kk; ++k) {
      if (!tri_ok[k]) mask.sbt_flags[k] = 0;
      stats.beta_sbt_total += 1;
      if (!mask.sbt_flags[k]) stats.beta_sbt_zero += 1;
    }

    // Everything below is in input units of this view's crop; heatmap mode
    // halves once more.
    const double unit = dc.mode == DetectorMode::regression ? 1.0 : 0.5;
    std::vector<Point2> det_u(kk), reproj_u(kk);
    for (size_t k = 0; k < kk; ++k) {
      const Point2 di = pass.input_coords[k];
      const Point2 ri = pass.input_from_frame.apply(reproj_frame[k]);
      det_u[k] = {unit * di.x, unit * di.y};
      reproj_u[k] = {unit * ri.x, unit * ri.y};
    }

    double item_loss = 0.0;
    std::vector<Disp2> grad_det(kk), grad_reproj(kk);
    if (dc.mode == DetectorMode::regression) {
      const SbtCoordLossResult res =
          sbt_loss_coords(as_set(det_u), as_set(reproj_u), mask);
      item_loss = res.loss;
      grad_det = res.grad_det;
      grad_reproj = res.grad_reproj;
    } else {
      const SbtMapLossResult res =
          sbt_loss_heatmap(pass.maps, as_set(det_u), as_set(reproj_u), mask);
      item_loss = res.loss;
      grad_det = res.grad_det;
      grad_reproj = res.grad_reproj;
      if (w_scale != 0.0) {
        for (size_t k = 0; k < kk; ++k) {
          if (mask.sbt_flags[k]) add_map_grad(pass, k, res.grad_maps[k], w_scale);
        }
      }
    }
    stats.l_sbt += item_loss;
    if (w_scale == 0.0) continue;

    for (size_t k = 0; k < kk; ++k) {
      if (!mask.sbt_flags[k]) continue;
      // direct term on this view's detection
      add_coord_grad(pass, k,
                     {w_scale * unit * grad_det[k].dx, w_scale * unit * grad_det[k].dy});
      // reprojection chain: units -> input -> frame -> 3D -> every view
      const Disp2 g_ri{unit * grad_reproj[k].dx, unit * grad_reproj[k].dy};
      const Disp2 g_rf = transpose_apply(pass.input_from_frame, g_ri);
      const Mat23 pj = project_jacobian(*cams[m], points[k]);
      const std::array<double, 3> g_x{
          pj.m[0][0] * g_rf.dx + pj.m[1][0] * g_rf.dy,
          pj.m[0][1] * g_rf.dx + pj.m[1][1] * g_rf.dy,
          pj.m[0][2] * g_rf.dx + pj.m[1][2] * g_rf.dy};
      for (size_t n = 0; n < 4; ++n) {
        const Mat32& jn = jac[k][n];
        const Disp2 g_pn{
            jn.m[0][0] * g_x[0] + jn.m[1][0] * g_x[1] + jn.m[2][0] * g_x[2],
            jn.m[0][1] * g_x[0] + jn.m[1][1] * g_x[1] + jn.m[2][1] * g_x[2]};
        const Disp2 g_in = transpose_apply(passes[n].frame_from_input, g_pn);
        add_coord_grad(passes[n], k, {w_scale * g_in.dx, w_scale * g_in.dy});
      }
    }
  }

  for (FramePass& pass : passes) finish_pass(params, pass, grad);
}

void run_labeled_item(const DetectorParams& params, const LabeledSample& sample,
                      double scale, StepStats& stats, std::vector<double>& grad) {
  const DetectorConfig& dc = params.config;
  if (sample.gt.size() != static_cast<size_t>(dc.landmarks)) {
    throw ConfigError("labeled sample landmark count mismatch");
  }
  if (sample.image.height() != dc.input_size || sample.image.width() != dc.input_size) {
    throw ConfigError("labeled sample is not at detector input resolution");
  }
  FramePass pass = labeled_pass(params, sample.image);

  if (dc.mode == DetectorMode::regression) {
    const RegressionLossResult res =
        detection_loss_regression(as_set(pass.input_coords), as_set(sample.gt));
    stats.l_det += res.loss;
    for (size_t k = 0; k < sample.gt.size(); ++k) {
      add_coord_grad(pass, k, {scale * res.grad_pred[k].dx, scale * res.grad_pred[k].dy});
    }
  } else {
    const int f = dc.feature_size();
    std::vector<ScalarField> target;
    target.reserve(sample.gt.size());
    for (const Point2& g : sample.gt) {
      const Point2 hm = clamp_into({0.5 * g.x, 0.5 * g.y}, f, f);
      target.push_back(gt_heatmap(hm, dc.sigma_gt, f, f));
    }
    const HeatmapLossResult res =
        detection_loss_heatmap(pass.maps, HeatmapSet(std::move(target)));
    stats.l_det += res.loss;
    for (size_t k = 0; k < sample.gt.size(); ++k) {
      add_map_grad(pass, k, res.grad_pred[k], scale);
    }
  }

  stats.nme_sum += nme(pass.input_coords, sample.gt, dc.input_size);
  stats.nme_count += 1;
  finish_pass(params, pass, grad);
}

}  // namespace

StepStats evaluate_batch(const DetectorParams& params, const TrainDataset& data,
                         const Batch& batch, const TrainConfig& config,
                         const LossWeights& weights) {
  if (params.values.size() != params.config.param_count()) {
    throw ConfigError("parameter vector does not match the architecture");
  }
  if ((!batch.runs.empty() || !batch.quads.empty()) && !data.video.has_value()) {
    throw ConfigError("batch references video data the dataset does not have");
  }
  StepStats stats;
  stats.grad.assign(params.values.size(), 0.0);

  const double det_scale = batch.labeled.empty() ? 0.0 : 1.0 / static_cast<double>(batch.labeled.size());
  for (size_t idx : batch.labeled) {
    if (idx >= data.labeled.size()) throw ConfigError("labeled index out of range");
    run_labeled_item(params, data.labeled[idx], det_scale, stats, stats.grad);
  }
  if (!batch.labeled.empty()) stats.l_det /= static_cast<double>(batch.labeled.size());

  const double sbr_scale = batch.runs.empty() ? 0.0 : weights.w_sbr / static_cast<double>(batch.runs.size());
  for (const TrackRun& run : batch.runs) {
    run_sbr_item(params, *data.video, run, config, sbr_scale, stats, stats.grad);
  }
  if (!batch.runs.empty()) stats.l_sbr /= static_cast<double>(batch.runs.size());

  const double sbt_scale = batch.quads.empty() ? 0.0 : weights.w_sbt / static_cast<double>(batch.quads.size());
  for (const MultiviewItem& item : batch.quads) {
    run_sbt_item(params, *data.video, item, config, sbt_scale, stats, stats.grad);
  }
  if (!batch.quads.empty()) stats.l_sbt /= static_cast<double>(batch.quads.size());

  stats.loss = total_loss(stats.l_det, stats.l_sbr, stats.l_sbt, weights);
  return stats;
}

TrainResult train(const TrainDataset& data, const TrainConfig& config) {
  config.validate();
  Rng init_rng = Rng(config.seed).fork("init");
  DetectorParams params = DetectorParams::init(config.detector, init_rng);
  const AdamState adam = AdamState::zeros(params.values.size());
  return resume_training(data, config, params, adam, 0);
}

TrainResult resume_training(const TrainDataset& data, const TrainConfig& config,
                            const DetectorParams& params, const AdamState& adam,
                            int start_epoch) {
  config.validate();
  if (params.values.size() != config.detector.param_count()) {
    throw ConfigError("checkpoint parameters do not match the architecture");
  }
  if (adam.m.size() != params.values.size() || adam.v.size() != params.values.size()) {
    throw ConfigError("optimizer state does not match the parameter count");
  }
  const int total_epochs = config.stage1_epochs + config.stage2_epochs;
  if (start_epoch < 0 || start_epoch > total_epochs) {
    throw ConfigError("resume epoch outside the configured schedule");
  }
  if (data.labeled.empty()) throw ConfigError("training needs labeled samples");

  const bool joint_needs_video =
      config.stage2_epochs > 0 &&
      ((config.weights.w_sbr > 0.0 && config.batch.n_triplets > 0) ||
       (config.weights.w_sbt > 0.0 && config.batch.n_quadruplets > 0));
  std::vector<TrackRun> run_pool;
  if (data.video.has_value()) {
    data.video->validate();
    run_pool = enumerate_runs(*data.video, config.run_length);
  }
  if (joint_needs_video) {
    if (!data.video.has_value()) {
      throw ConfigError("joint stage needs unlabeled video data");
    }
    if (config.weights.w_sbr > 0.0 && config.batch.n_triplets > 0 && run_pool.empty()) {
      throw ConfigError("video is too short for the configured track runs");
    }
    if (config.weights.w_sbt > 0.0 && config.batch.n_quadruplets > 0 &&
        data.video->views() < 4) {
      throw ConfigError("quadruplets need at least four views");
    }
  }

  const int steps = config.steps_per_epoch > 0
                        ? config.steps_per_epoch
                        : static_cast<int>((data.labeled.size() +
                                            static_cast<size_t>(config.batch.n_labeled) - 1) /
                                           static_cast<size_t>(config.batch.n_labeled));

  TrainResult result;
  result.params = params;
  result.adam = adam;
  const Rng root(config.seed);

  for (int epoch = start_epoch; epoch < total_epochs; ++epoch) {
    const bool joint = epoch >= config.stage1_epochs;
    const LossWeights eff_w = joint ? config.weights : LossWeights{};
    BatchConfig eff_batch = config.batch;
    if (eff_w.w_sbr == 0.0) eff_batch.n_triplets = 0;
    if (eff_w.w_sbt == 0.0) eff_batch.n_quadruplets = 0;

    Rng batch_rng = root.fork("batch").fork(static_cast<std::uint64_t>(epoch));
    EpochSampler labeled_state(data.labeled.size());
    EpochSampler run_state(run_pool.size());
    EpochSampler frame_state(
        data.video.has_value() ? static_cast<size_t>(data.video->frame_count()) : 0);

    EpochMetrics em;
    em.epoch = epoch;
    double nme_sum = 0.0;
    long nme_count = 0, sbr_zero = 0, sbr_total = 0, sbt_zero = 0, sbt_total = 0;
    for (int step = 0; step < steps; ++step) {
      const Batch batch = assemble_batch(
          data.labeled, run_pool, data.video.has_value() ? &*data.video : nullptr,
          eff_batch, labeled_state, run_state, frame_state, batch_rng);
      const StepStats st = evaluate_batch(result.params, data, batch, config, eff_w);
      adam_step(result.params.values, st.grad, result.adam, config.adam);
      em.l_det += st.l_det;
      em.l_sbr += st.l_sbr;
      em.l_sbt += st.l_sbt;
      nme_sum += st.nme_sum;
      nme_count += st.nme_count;
      sbr_zero += st.beta_sbr_zero;
      sbr_total += st.beta_sbr_total;
      sbt_zero += st.beta_sbt_zero;
      sbt_total += st.beta_sbt_total;
    }
    em.l_det /= steps;
    em.l_sbr /= steps;
    em.l_sbt /= steps;
    em.nme = nme_count > 0 ? nme_sum / static_cast<double>(nme_count) : 0.0;
    em.beta_sbr_zero_frac =
        sbr_total > 0 ? static_cast<double>(sbr_zero) / static_cast<double>(sbr_total) : 0.0;
    em.beta_sbt_zero_frac =
        sbt_total > 0 ? static_cast<double>(sbt_zero) / static_cast<double>(sbt_total) : 0.0;
    if (data.probe.has_value()) {
      Rng elt_rng = root.fork("elt").fork(static_cast<std::uint64_t>(epoch));
      em.p_error = p_error(crop_detector_fn(result.params), data.probe->frame,
                           data.probe->bbox, data.probe->n_pairs, elt_rng);
    }
    result.log.push_back(em);
  }
  return result;
}

std::vector<Point2> detect_in_frame(const DetectorParams& params,
                                    const ScalarField& frame, const Rect& bbox) {
  FramePass pass = frame_pass(params, frame, bbox);
  return pass.frame_coords;
}

LabeledSample make_labeled_sample(const ScalarField& frame, const Rect& bbox,
                                  const std::vector<Point2>& labels,
                                  int input_size, Rng* rng) {
  if (labels.empty()) throw ConfigError("labeled samples need landmarks");
  const AugmentResult crop = rng != nullptr ? augment(frame, bbox, labels, *rng)
                                            : crop_for_eval(frame, bbox, labels);
  const ResizeResult rz = resize_to(crop.image, input_size, input_size);
  LabeledSample sample;
  sample.image = rz.image;
  sample.gt.reserve(labels.size());
  for (const Point2& p : crop.labels) sample.gt.push_back(rz.out_from_in.apply(p));
  return sample;
}

DetectorFn crop_detector_fn(const DetectorParams& params) {
  return [params](const ScalarField& crop, const AffineTransform&) {
    FramePass pass;
    const int side = params.config.input_size;
    const ResizeResult rz = resize_to(crop, side, side);
    pass.input_from_frame = rz.out_from_in;
    pass.frame_from_input = rz.out_from_in.inverse();
    forward_pass(params, rz.image, pass);
    return pass.frame_coords;
  };
}

namespace {

void write_values(std::ostream& out, const std::vector<double>& values) {
  for (double v : values) out << format_g17(v) << "\n";
}

std::vector<double> read_values(std::istream& in, size_t count,
                                const std::string& what) {
  std::vector<double> values;
  values.reserve(count);
  std::string line;
  for (size_t i = 0; i < count; ++i) {
    if (!std::getline(in, line)) throw ConfigError("checkpoint truncated in " + what);
    try {
      values.push_back(std::stod(line));
    } catch (const std::exception&) {
      throw ConfigError("checkpoint holds a malformed number in " + what);
    }
  }
  return values;
}

std::string expect_key(std::istream& in, const std::string& key) {
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("checkpoint missing field " + key);
  if (line.rfind(key + " ", 0) != 0) {
    throw ConfigError("checkpoint field out of order: expected " + key);
  }
  return line.substr(key.size() + 1);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const DetectorConfig& dc = ckpt.params.config;
  if (ckpt.params.values.size() != dc.param_count() ||
      ckpt.adam.m.size() != ckpt.params.values.size() ||
      ckpt.adam.v.size() != ckpt.params.values.size()) {
    throw ConfigError("checkpoint tensors do not match the architecture");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write checkpoint: " + path.string());
  out << "srt-checkpoint 1\n";
  out << "mode " << (dc.mode == DetectorMode::regression ? "regression" : "heatmap") << "\n";
  out << "input_size " << dc.input_size << "\n";
  out << "landmarks " << dc.landmarks << "\n";
  out << "conv1_channels " << dc.conv1_channels << "\n";
  out << "conv2_channels " << dc.conv2_channels << "\n";
  out << "temperature " << format_g17(dc.temperature) << "\n";
  out << "sigma_gt " << format_g17(dc.sigma_gt) << "\n";
  out << "seed " << ckpt.seed << "\n";
  out << "next_epoch " << ckpt.next_epoch << "\n";
  out << "adam_step " << ckpt.adam.step << "\n";
  out << "params " << ckpt.params.values.size() << "\n";
  write_values(out, ckpt.params.values);
  out << "adam_m " << ckpt.adam.m.size() << "\n";
  write_values(out, ckpt.adam.m);
  out << "adam_v " << ckpt.adam.v.size() << "\n";
  write_values(out, ckpt.adam.v);
  if (!out) throw ConfigError("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read checkpoint: " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "srt-checkpoint 1") {
    throw ConfigError("not a checkpoint file: " + path.string());
  }
  Checkpoint ckpt;
  DetectorConfig dc;
  const std::string mode = expect_key(in, "mode");
  if (mode == "regression") {
    dc.mode = DetectorMode::regression;
  } else if (mode == "heatmap") {
    dc.mode = DetectorMode::heatmap;
  } else {
    throw ConfigError("unknown detector mode: " + mode);
  }
  size_t n = 0;
  try {
    dc.input_size = std::stoi(expect_key(in, "input_size"));
    dc.landmarks = std::stoi(expect_key(in, "landmarks"));
    dc.conv1_channels = std::stoi(expect_key(in, "conv1_channels"));
    dc.conv2_channels = std::stoi(expect_key(in, "conv2_channels"));
    dc.temperature = std::stod(expect_key(in, "temperature"));
    dc.sigma_gt = std::stod(expect_key(in, "sigma_gt"));
    dc.validate();
    ckpt.seed = std::stoull(expect_key(in, "seed"));
    ckpt.next_epoch = std::stoi(expect_key(in, "next_epoch"));
    ckpt.adam.step = std::stol(expect_key(in, "adam_step"));
    n = std::stoull(expect_key(in, "params"));
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    throw ConfigError("checkpoint header is malformed: " + path.string());
  }
  if (n != dc.param_count()) {
    throw ConfigError("checkpoint parameter count does not match the architecture");
  }
  ckpt.params.config = dc;
  ckpt.params.values = read_values(in, n, "params");
  if (std::stoull(expect_key(in, "adam_m")) != n) {
    throw ConfigError("checkpoint optimizer state count mismatch");
  }
  ckpt.adam.m = read_values(in, n, "adam_m");
  if (std::stoull(expect_key(in, "adam_v")) != n) {
    throw ConfigError("checkpoint optimizer state count mismatch");
  }
  ckpt.adam.v = read_values(in, n, "adam_v");
  return ckpt;
}

void write_metrics_jsonl(const std::filesystem::path& path,
                         const std::vector<EpochMetrics>& log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write metrics log: " + path.string());
  for (const EpochMetrics& em : log) {
    nlohmann::json j;
    j["epoch"] = em.epoch;
    j["l_det"] = em.l_det;
    j["l_sbr"] = em.l_sbr;
    j["l_sbt"] = em.l_sbt;
    j["beta_sbr_zero_frac"] = em.beta_sbr_zero_frac;
    j["beta_sbt_zero_frac"] = em.beta_sbt_zero_frac;
    j["nme"] = em.nme;
    if (std::isfinite(em.p_error)) {
      j["p_error"] = em.p_error;
    } else {
      j["p_error"] = nullptr;
    }
    out << j.dump() << "\n";
  }
  if (!out) throw ConfigError("failed writing metrics log: " + path.string());
}

std::vector<EpochMetrics> read_metrics_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read metrics log: " + path.string());
  std::vector<EpochMetrics> log;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line);
    EpochMetrics em;
    em.epoch = j.at("epoch").get<int>();
    em.l_det = j.at("l_det").get<double>();
    em.l_sbr = j.at("l_sbr").get<double>();
    em.l_sbt = j.at("l_sbt").get<double>();
    em.beta_sbr_zero_frac = j.at("beta_sbr_zero_frac").get<double>();
    em.beta_sbt_zero_frac = j.at("beta_sbt_zero_frac").get<double>();
    em.nme = j.at("nme").get<double>();
    em.p_error = j.at("p_error").is_null()
                     ? std::numeric_limits<double>::quiet_NaN()
                     : j.at("p_error").get<double>();
    log.push_back(em);
  }
  return log;
}

}  // namespace srt
