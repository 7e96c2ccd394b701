#include "srt/lk.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace srt {

void PatchSpec::validate() const {
  if (side < 3 || side % 2 == 0) {
    throw std::invalid_argument("patch side must be odd and >= 3");
  }
  if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be > 0");
  if (max_iterations < 1) throw std::invalid_argument("max_iterations >= 1");
  if (!(convergence_eps > 0.0) || !(hessian_eps > 0.0)) {
    throw std::invalid_argument("eps values must be > 0");
  }
}

FlowField::FlowField(ScalarField u_, ScalarField v_)
    : u(std::move(u_)), v(std::move(v_)) {
  if (!u.same_shape(v)) throw std::invalid_argument("flow u/v shape mismatch");
}

namespace {

/// Patch positions need their 1-pixel gradient neighborhood inside the
/// bilinear domain [0, w-1] x [0, h-1].
bool patch_fits_with_margin(const ChannelView& f, Point2 center, int half) {
  return center.x - half - 1 >= 0.0 && center.y - half - 1 >= 0.0 &&
         center.x + half + 1 <= f.width() - 1.0 &&
         center.y + half + 1 <= f.height() - 1.0;
}

bool patch_fits(const ChannelView& f, Point2 center, int half) {
  return center.x - half >= 0.0 && center.y - half >= 0.0 &&
         center.x + half <= f.width() - 1.0 &&
         center.y + half <= f.height() - 1.0;
}

/// Central difference of the bilinear interpolant, +-1 px. The caller has
/// already checked the margin, so samples cannot fail.
Grad2 sampled_gradient(const ScalarField& f, Point2 p) {
  const double gx = 0.5 * (*bilinear_sample(f, {p.x + 1.0, p.y}) -
                           *bilinear_sample(f, {p.x - 1.0, p.y}));
  const double gy = 0.5 * (*bilinear_sample(f, {p.x, p.y + 1.0}) -
                           *bilinear_sample(f, {p.x, p.y - 1.0}));
  return {gx, gy};
}

/// d(sampled_gradient)/dp: central differences of the exact interpolant
/// jacobian, +-1 px. Needs a 2-pixel margin. Row = gradient component,
/// column = differentiation direction.
Mat22 smoothed_gradient_jacobian(const ScalarField& f, Point2 p) {
  const Grad2 jxp = bilinear_sample_jacobian(f, {p.x + 1.0, p.y});
  const Grad2 jxm = bilinear_sample_jacobian(f, {p.x - 1.0, p.y});
  const Grad2 jyp = bilinear_sample_jacobian(f, {p.x, p.y + 1.0});
  const Grad2 jym = bilinear_sample_jacobian(f, {p.x, p.y - 1.0});
  return {0.5 * (jxp.ddx - jxm.ddx), 0.5 * (jxp.ddy - jxm.ddy),
          0.5 * (jyp.ddx - jym.ddx), 0.5 * (jyp.ddy - jym.ddy)};
}

}  // namespace

std::optional<Template> precompute_template(ChannelView prev, Point2 center,
                                            const PatchSpec& spec) {
  spec.validate();
  if (!is_finite(center)) return std::nullopt;
  const int half = spec.side / 2;
  if (!patch_fits_with_margin(prev, center, half)) return std::nullopt;

  Template t;
  t.center = center;
  t.side = spec.side;
  t.channels = static_cast<int>(prev.channels());
  const int n = spec.side * spec.side;
  t.values.resize(static_cast<size_t>(t.channels) * n);
  t.gx.resize(t.values.size());
  t.gy.resize(t.values.size());
  t.weights.resize(static_cast<size_t>(n));

  const double inv_two_sigma2 = 1.0 / (2.0 * spec.sigma * spec.sigma);
  for (int i = 0; i < spec.side; ++i) {
    for (int j = 0; j < spec.side; ++j) {
      const double dy = i - half, dx = j - half;
      t.weights[static_cast<size_t>(i) * spec.side + j] =
          std::exp(-(dx * dx + dy * dy) * inv_two_sigma2);
    }
  }

  Mat22 H{};
  for (int c = 0; c < t.channels; ++c) {
    const ScalarField& ch = prev.plane(c);
    for (int i = 0; i < spec.side; ++i) {
      for (int j = 0; j < spec.side; ++j) {
        const Point2 p{center.x + (j - half), center.y + (i - half)};
        const size_t at = (static_cast<size_t>(c) * spec.side + i) * spec.side + j;
        t.values[at] = *bilinear_sample(ch, p);
        const Grad2 g = sampled_gradient(ch, p);
        t.gx[at] = g.ddx;
        t.gy[at] = g.ddy;
        const double a = t.weights[static_cast<size_t>(i) * spec.side + j];
        H.a00 += a * g.ddx * g.ddx;
        H.a01 += a * g.ddx * g.ddy;
        H.a11 += a * g.ddy * g.ddy;
      }
    }
  }
  H.a10 = H.a01;
  H.a00 += spec.hessian_eps;
  H.a11 += spec.hessian_eps;
  t.hessian = H;
  t.hessian_inv = inverse(H);
  return t;
}

std::optional<Disp2> solve_delta_p(const Template& tmpl, ChannelView curr,
                                   Disp2 p) {
  const int half = tmpl.side / 2;
  const Point2 warped_center = tmpl.center + p;
  if (!is_finite(warped_center) || !patch_fits(curr, warped_center, half)) {
    return std::nullopt;
  }

  double bx = 0.0, by = 0.0;
  for (int c = 0; c < tmpl.channels; ++c) {
    const ScalarField& ch = curr.plane(c);
    for (int i = 0; i < tmpl.side; ++i) {
      for (int j = 0; j < tmpl.side; ++j) {
        const Point2 q{warped_center.x + (j - half), warped_center.y + (i - half)};
        const size_t at = (static_cast<size_t>(c) * tmpl.side + i) * tmpl.side + j;
        const double r = *bilinear_sample(ch, q) - tmpl.values[at];
        const double a = tmpl.weights[static_cast<size_t>(i) * tmpl.side + j];
        bx += a * tmpl.gx[at] * r;
        by += a * tmpl.gy[at] * r;
      }
    }
  }
  return apply(tmpl.hessian_inv, Disp2{bx, by});
}

TrackResult track_landmark_lk(ChannelView prev, ChannelView curr, Point2 start,
                              const PatchSpec& spec) {
  TrackResult res;
  res.point = start;
  const auto tmpl = precompute_template(prev, start, spec);
  if (!tmpl) return res;

  Disp2 p{};
  for (int it = 1; it <= spec.max_iterations; ++it) {
    const auto dp = solve_delta_p(*tmpl, curr, p);
    if (!dp) {
      res.point = start + p;
      res.iterations = it;
      return res;
    }
    p.dx -= dp->dx;
    p.dy -= dp->dy;
    res.iterations = it;
    if (norm2(*dp) < spec.convergence_eps) {
      res.converged = true;
      break;
    }
  }
  res.point = start + p;
  res.valid = true;
  return res;
}

std::optional<Point2> track_landmark_interp(const FlowField& flow,
                                            Point2 start) {
  const auto du = bilinear_sample(flow.u, start);
  const auto dv = bilinear_sample(flow.v, start);
  if (!du || !dv) return std::nullopt;
  return start + Disp2{*du, *dv};
}

Mat22 track_gradient_lk(ChannelView prev, ChannelView curr, Point2 start,
                        const PatchSpec& spec) {
  const TrackResult res = track_landmark_lk(prev, curr, start, spec);
  if (!res.valid || !res.converged) {
    throw std::runtime_error("track did not converge; no gradient");
  }
  const auto tmpl = precompute_template(prev, start, spec);
  const int half = spec.side / 2;
  if (!patch_fits_with_margin(curr, res.point, half)) {
    throw std::runtime_error("converged patch too close to the border");
  }

  // Implicit differentiation of the converged solve Phi(start, p) = 0 with
  // Phi = sum a J (C(q) - T(s)). The template J uses smoothed gradients, so
  // its own position dependence enters through their derivative G, while
  // the residual differentiates through the exact interpolant jacobians:
  //   M_p = sum a J dC(q)^T,  M_t = sum a J dT(s)^T,  Hr = sum a G r,
  //   d(out)/d(start) = M_p^-1 (M_t - Hr).
  // Hr needs one more pixel of margin; without it that term is dropped.
  const bool curvature = patch_fits_with_margin(prev, start, half + 1);
  Mat22 Mt{}, Mp{}, Hr{};
  for (int c = 0; c < tmpl->channels; ++c) {
    const ScalarField& pch = prev.plane(c);
    const ScalarField& ch = curr.plane(c);
    for (int i = 0; i < spec.side; ++i) {
      for (int j = 0; j < spec.side; ++j) {
        const size_t at = (static_cast<size_t>(c) * spec.side + i) * spec.side + j;
        const double a = tmpl->weights[static_cast<size_t>(i) * spec.side + j];
        const double tx = tmpl->gx[at], ty = tmpl->gy[at];
        const Point2 s{start.x + (j - half), start.y + (i - half)};
        const Point2 q{res.point.x + (j - half), res.point.y + (i - half)};
        const Grad2 dT = bilinear_sample_jacobian(pch, s);
        const Grad2 dC = bilinear_sample_jacobian(ch, q);
        Mt.a00 += a * tx * dT.ddx;
        Mt.a01 += a * tx * dT.ddy;
        Mt.a10 += a * ty * dT.ddx;
        Mt.a11 += a * ty * dT.ddy;
        Mp.a00 += a * tx * dC.ddx;
        Mp.a01 += a * tx * dC.ddy;
        Mp.a10 += a * ty * dC.ddx;
        Mp.a11 += a * ty * dC.ddy;
        if (curvature) {
          const double r = *bilinear_sample(ch, q) - tmpl->values[at];
          const Mat22 G = smoothed_gradient_jacobian(pch, s);
          Hr.a00 += a * G.a00 * r;
          Hr.a01 += a * G.a01 * r;
          Hr.a10 += a * G.a10 * r;
          Hr.a11 += a * G.a11 * r;
        }
      }
    }
  }
  Mp.a00 += spec.hessian_eps;
  Mp.a11 += spec.hessian_eps;
  const Mat22 MpInv = inverse(Mp);
  return matmul(MpInv, {Mt.a00 - Hr.a00, Mt.a01 - Hr.a01, Mt.a10 - Hr.a10,
                        Mt.a11 - Hr.a11});
}

Mat22 track_gradient_interp(const FlowField& flow, Point2 start) {
  const Grad2 gu = bilinear_sample_jacobian(flow.u, start);
  const Grad2 gv = bilinear_sample_jacobian(flow.v, start);
  return {1.0 + gu.ddx, gu.ddy, gv.ddx, 1.0 + gv.ddy};
}

ScalarField warp_field_by_flow(const ScalarField& field, const FlowField& flow) {
  if (!field.same_shape(flow.u)) {
    throw std::invalid_argument("field/flow dimension mismatch");
  }
  ScalarField out(field.height(), field.width());
  for (int r = 0; r < field.height(); ++r) {
    for (int c = 0; c < field.width(); ++c) {
      const Point2 src{c - flow.u.at(r, c), r - flow.v.at(r, c)};
      const auto s = bilinear_sample(field, src);
      out.at(r, c) = s ? *s : 0.0;
    }
  }
  return out;
}

namespace {

bool inside_image(Point2 p, int w, int h) {
  return p.x >= 0.0 && p.x <= w - 1.0 && p.y >= 0.0 && p.y <= h - 1.0;
}

bool passes_static_rules(Point2 tracked, Point2 detected_curr,
                         double bbox_scale, int w, int h,
                         const std::optional<Rect>& bbox,
                         const FbCheckThresholds& th) {
  if (!is_finite(tracked) || !is_finite(detected_curr)) return false;
  if (norm2(tracked - detected_curr) > th.t_d_frac * bbox_scale) return false;
  if (!inside_image(tracked, w, h) || !inside_image(detected_curr, w, h)) {
    return false;
  }
  if (bbox && (!bbox->contains(tracked) || !bbox->contains(detected_curr))) {
    return false;
  }
  return true;
}

}  // namespace

bool forward_backward_check(ChannelView prev, ChannelView curr,
                            Point2 prev_point, Point2 tracked,
                            Point2 detected_curr, double bbox_scale,
                            const PatchSpec& spec,
                            const std::optional<Rect>& bbox,
                            const FbCheckThresholds& th) {
  if (!(bbox_scale > 0.0) || !is_finite(prev_point)) return false;
  if (!passes_static_rules(tracked, detected_curr, bbox_scale, curr.width(),
                           curr.height(), bbox, th)) {
    return false;
  }
  const TrackResult back = track_landmark_lk(curr, prev, tracked, spec);
  if (!back.valid || !back.converged) return false;
  return norm2(back.point - prev_point) <= th.t_fb_frac * bbox_scale;
}

bool forward_backward_check_interp(const FlowField& backward_flow,
                                   Point2 prev_point, Point2 tracked,
                                   Point2 detected_curr, double bbox_scale,
                                   int image_width, int image_height,
                                   const std::optional<Rect>& bbox,
                                   const FbCheckThresholds& th) {
  if (!(bbox_scale > 0.0) || !is_finite(prev_point)) return false;
  if (!passes_static_rules(tracked, detected_curr, bbox_scale, image_width,
                           image_height, bbox, th)) {
    return false;
  }
  const auto back = track_landmark_interp(backward_flow, tracked);
  if (!back) return false;
  return norm2(*back - prev_point) <= th.t_fb_frac * bbox_scale;
}

FlowField dense_flow_lk(const ScalarField& prev, const ScalarField& curr,
                        const PatchSpec& spec, int stride) {
  if (!prev.same_shape(curr)) {
    throw std::invalid_argument("frame dimension mismatch");
  }
  if (stride < 1) throw std::invalid_argument("stride must be >= 1");
  const int w = prev.width(), h = prev.height();
  const int half = spec.side / 2;
  const double lo = half + 1;
  const double hix = w - 2.0 - half, hiy = h - 2.0 - half;
  if (lo > hix || lo > hiy) {
    throw std::invalid_argument("frames too small for the patch size");
  }

  const int gw = (w + stride - 1) / stride + 1;
  const int gh = (h + stride - 1) / stride + 1;
  ScalarField gu(gh, gw), gv(gh, gw);
  for (int gr = 0; gr < gh; ++gr) {
    for (int gc = 0; gc < gw; ++gc) {
      const double px = std::min<double>(gc * stride, w - 1.0);
      const double py = std::min<double>(gr * stride, h - 1.0);
      // Border nodes track from the nearest feasible interior start.
      const Point2 start{std::clamp(px, lo, hix), std::clamp(py, lo, hiy)};
      const TrackResult res = track_landmark_lk(prev, curr, start, spec);
      const Disp2 d = (res.valid && res.converged) ? res.point - start : Disp2{};
      gu.at(gr, gc) = d.dx;
      gv.at(gr, gc) = d.dy;
    }
  }

  ScalarField u(h, w), v(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const Point2 g{static_cast<double>(c) / stride, static_cast<double>(r) / stride};
      u.at(r, c) = *bilinear_sample(gu, g);
      v.at(r, c) = *bilinear_sample(gv, g);
    }
  }
  return FlowField(std::move(u), std::move(v));
}

}  // namespace srt
