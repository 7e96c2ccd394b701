#pragma once

#include <optional>
#include <vector>

#include "srt/common.hpp"
#include "srt/field.hpp"

namespace srt {

/// Patch and iteration settings for the inverse-compositional tracker.
struct PatchSpec {
  int side = 13;                  // odd, >= 3
  double sigma = 13.0 / 4.0;      // gaussian weight scale for the patch
  int max_iterations = 20;
  double convergence_eps = 1e-6;  // stop when |delta p| falls below this
  double hessian_eps = 1e-8;      // added to the Hessian diagonal

  /// Spec with the default sigma = side / 4 for a given patch size.
  static PatchSpec for_side(int side) {
    PatchSpec s;
    s.side = side;
    s.sigma = side / 4.0;
    return s;
  }

  void validate() const;
};

/// Per-pixel displacement field, frame t-1 -> t.
struct FlowField {
  ScalarField u;
  ScalarField v;

  FlowField() = default;
  FlowField(ScalarField u_, ScalarField v_);

  int height() const { return u.height(); }
  int width() const { return u.width(); }
};

struct TrackResult {
  Point2 point{};        // x + p
  bool converged = false;
  int iterations = 0;
  bool valid = false;    // false if the patch left the image bounds
};

/// Template data precomputed once per track: weighted patch values, patch
/// gradients (the stacked Jacobian), and the regularized 2x2 Hessian.
struct Template {
  Point2 center{};
  int side = 0;
  int channels = 0;
  std::vector<double> values;   // C * side * side, channel-major
  std::vector<double> gx;       // same layout; Jacobian column 1
  std::vector<double> gy;       // Jacobian column 2
  std::vector<double> weights;  // side * side gaussian weights
  Mat22 hessian{};              // J^T A J + hessian_eps * I
  Mat22 hessian_inv{};
};

/// Alg. steps 1-3: extract the template patch, its gradients, and H.
/// Returns nullopt when the patch (with a 1-pixel margin for gradients)
/// does not fit inside the frame.
std::optional<Template> precompute_template(ChannelView prev, Point2 center,
                                            const PatchSpec& spec);

/// One Gauss-Newton step: delta_p = H^-1 sum J^T alpha (F_curr(x+d+p) - T(d)).
/// Returns nullopt when the warped patch leaves the frame.
std::optional<Disp2> solve_delta_p(const Template& tmpl, ChannelView curr,
                                   Disp2 p);

/// Full inverse-compositional track of one point from prev to curr.
TrackResult track_landmark_lk(ChannelView prev, ChannelView curr, Point2 start,
                              const PatchSpec& spec);

/// Flow-field tracker: start + bilinear flow at start.
std::optional<Point2> track_landmark_interp(const FlowField& flow,
                                            Point2 start);

/// d(tracked)/d(start) for the converged LK track, from the implicit
/// function of the final Gauss-Newton solve. Throws std::runtime_error if
/// the track does not converge.
Mat22 track_gradient_lk(ChannelView prev, ChannelView curr, Point2 start,
                        const PatchSpec& spec);

/// d(tracked)/d(start) for the interpolation tracker: I + d(flow)/d(start).
Mat22 track_gradient_interp(const FlowField& flow, Point2 start);

/// Backward warp: out(x) = field(x - flow(x)), bilinear, out-of-range
/// sources read as 0. Field and flow must share dimensions.
ScalarField warp_field_by_flow(const ScalarField& field, const FlowField& flow);

/// Three-part track reliability rule. Returns the SBR flag (1 = reliable):
///   0 if the backward track of `tracked` misses `prev_point` by more than
///     t_fb_frac * bbox_scale, or if |tracked - detected| exceeds
///     t_d_frac * bbox_scale, or if the detection or track leaves the
///     bounding box / image. All tracker failures also map to 0.
struct FbCheckThresholds {
  double t_fb_frac = 0.01;
  double t_d_frac = 0.01;
};

bool forward_backward_check(ChannelView prev, ChannelView curr,
                            Point2 prev_point, Point2 tracked,
                            Point2 detected_curr, double bbox_scale,
                            const PatchSpec& spec,
                            const std::optional<Rect>& bbox = std::nullopt,
                            const FbCheckThresholds& th = {});

/// Same rule for the interpolation tracker: the backward leg samples a
/// backward flow field (t -> t-1) instead of running LK.
bool forward_backward_check_interp(const FlowField& backward_flow,
                                   Point2 prev_point, Point2 tracked,
                                   Point2 detected_curr, double bbox_scale,
                                   int image_width, int image_height,
                                   const std::optional<Rect>& bbox = std::nullopt,
                                   const FbCheckThresholds& th = {});

/// Dense flow computed by tracking every `stride`-th pixel with LK and
/// bilinearly upsampling; the "computed" alternative to ground-truth flow.
FlowField dense_flow_lk(const ScalarField& prev, const ScalarField& curr,
                        const PatchSpec& spec, int stride = 4);

}  // namespace srt
