#include "srt/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace srt {

namespace {

double sign0(double v) { return v > 0.0 ? 1.0 : v < 0.0 ? -1.0 : 0.0; }

void require_same_k(size_t a, size_t b) {
  if (a != b) throw std::invalid_argument("landmark count mismatch");
  if (a == 0) throw std::invalid_argument("empty landmark set");
}

void require_same_maps(const HeatmapSet& a, const HeatmapSet& b) {
  require_same_k(a.size(), b.size());
  for (size_t k = 0; k < a.size(); ++k) {
    if (!a.maps[k].same_shape(b.maps[k])) {
      throw std::invalid_argument("heatmap shape mismatch");
    }
  }
}

double frobenius(const ScalarField& a, const ScalarField& b) {
  double s = 0.0;
  for (int r = 0; r < a.height(); ++r) {
    for (int c = 0; c < a.width(); ++c) {
      const double d = a.at(r, c) - b.at(r, c);
      s += d * d;
    }
  }
  return std::sqrt(s);
}

}  // namespace

HeatmapSet::HeatmapSet(std::vector<ScalarField> m) : maps(std::move(m)) {
  if (maps.empty()) throw std::invalid_argument("empty heatmap set");
  for (const auto& f : maps) {
    if (!f.same_shape(maps.front())) {
      throw std::invalid_argument("heatmap dimensions differ");
    }
  }
}

RegressionLossResult detection_loss_regression(const LandmarkSet& pred,
                                               const LandmarkSet& gt) {
  require_same_k(pred.size(), gt.size());
  RegressionLossResult out;
  out.grad_pred.resize(pred.size());
  for (size_t k = 0; k < pred.size(); ++k) {
    const Disp2 d = pred.coords[k] - gt.coords[k];
    out.loss += std::abs(d.dx) + std::abs(d.dy);
    out.grad_pred[k] = {sign0(d.dx), sign0(d.dy)};
  }
  return out;
}

HeatmapLossResult detection_loss_heatmap(const HeatmapSet& pred,
                                         const HeatmapSet& gt) {
  require_same_maps(pred, gt);
  HeatmapLossResult out;
  for (size_t k = 0; k < pred.size(); ++k) {
    const ScalarField& a = pred.maps[k];
    const ScalarField& b = gt.maps[k];
    const double norm = frobenius(a, b);
    out.loss += norm;
    ScalarField g(a.height(), a.width());
    if (norm > 0.0) {
      for (int r = 0; r < a.height(); ++r) {
        for (int c = 0; c < a.width(); ++c) {
          g.at(r, c) = (a.at(r, c) - b.at(r, c)) / norm;
        }
      }
    }
    out.grad_pred.push_back(std::move(g));
  }
  return out;
}

SbrCoordLossResult sbr_loss_coords(const LandmarkSet& det_curr,
                                   const LandmarkSet& tracked,
                                   const ReliabilityMask& mask) {
  require_same_k(det_curr.size(), tracked.size());
  require_same_k(det_curr.size(), mask.sbr_flags.size());
  SbrCoordLossResult out;
  out.grad_det.resize(det_curr.size());
  out.grad_tracked.resize(det_curr.size());
  for (size_t k = 0; k < det_curr.size(); ++k) {
    if (!mask.sbr_flags[k]) continue;
    const Disp2 d = det_curr.coords[k] - tracked.coords[k];
    out.loss += std::abs(d.dx) + std::abs(d.dy);
    out.grad_det[k] = {sign0(d.dx), sign0(d.dy)};
    out.grad_tracked[k] = {-sign0(d.dx), -sign0(d.dy)};
  }
  return out;
}

SbrMapLossResult sbr_loss_heatmap(const HeatmapSet& maps_curr,
                                  const HeatmapSet& warped_prev,
                                  const ReliabilityMask& mask) {
  require_same_maps(maps_curr, warped_prev);
  require_same_k(maps_curr.size(), mask.sbr_flags.size());
  SbrMapLossResult out;
  for (size_t k = 0; k < maps_curr.size(); ++k) {
    const ScalarField& a = maps_curr.maps[k];
    const ScalarField& b = warped_prev.maps[k];
    ScalarField ga(a.height(), a.width());
    ScalarField gb(a.height(), a.width());
    if (mask.sbr_flags[k]) {
      const double norm = frobenius(a, b);
      out.loss += norm;
      if (norm > 0.0) {
        for (int r = 0; r < a.height(); ++r) {
          for (int c = 0; c < a.width(); ++c) {
            const double g = (a.at(r, c) - b.at(r, c)) / norm;
            ga.at(r, c) = g;
            gb.at(r, c) = -g;
          }
        }
      }
    }
    out.grad_maps.push_back(std::move(ga));
    out.grad_warped.push_back(std::move(gb));
  }
  return out;
}

std::vector<std::uint8_t> sbt_reliability(const LandmarkSet& det,
                                          const LandmarkSet& reproj,
                                          double bbox_scale,
                                          const Thresholds& th) {
  require_same_k(det.size(), reproj.size());
  if (!(bbox_scale > 0.0)) throw std::invalid_argument("bbox_scale must be > 0");
  std::vector<std::uint8_t> flags(det.size(), 1);
  for (size_t k = 0; k < det.size(); ++k) {
    if (norm2(reproj.coords[k] - det.coords[k]) > th.t_tri_frac * bbox_scale) {
      flags[k] = 0;
    }
  }
  return flags;
}

SbtCoordLossResult sbt_loss_coords(const LandmarkSet& det,
                                   const LandmarkSet& reproj,
                                   const ReliabilityMask& mask) {
  require_same_k(det.size(), reproj.size());
  require_same_k(det.size(), mask.sbt_flags.size());
  SbtCoordLossResult out;
  out.grad_det.resize(det.size());
  out.grad_reproj.resize(det.size());
  for (size_t k = 0; k < det.size(); ++k) {
    if (!mask.sbt_flags[k]) continue;
    const Disp2 d = det.coords[k] - reproj.coords[k];
    out.loss += std::abs(d.dx) + std::abs(d.dy);
    out.grad_det[k] = {sign0(d.dx), sign0(d.dy)};
    out.grad_reproj[k] = {-sign0(d.dx), -sign0(d.dy)};
  }
  return out;
}

ScalarField translate_field(const ScalarField& field, Disp2 d) {
  ScalarField out(field.height(), field.width());
  for (int r = 0; r < field.height(); ++r) {
    for (int c = 0; c < field.width(); ++c) {
      const auto s = bilinear_sample(field, {c - d.dx, r - d.dy});
      out.at(r, c) = s ? *s : 0.0;
    }
  }
  return out;
}

TranslateFieldGrad translate_field_adjoint(const ScalarField& field, Disp2 d,
                                           const ScalarField& grad_out) {
  if (!field.same_shape(grad_out)) {
    throw std::invalid_argument("translate adjoint shape mismatch");
  }
  const int h = field.height(), w = field.width();
  TranslateFieldGrad out{ScalarField(h, w), {}};
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const double g = grad_out.at(r, c);
      if (g == 0.0) continue;
      const double sx = c - d.dx, sy = r - d.dy;
      if (sx < 0.0 || sy < 0.0 || sx > w - 1.0 || sy > h - 1.0) continue;
      int x0 = static_cast<int>(std::floor(sx));
      int y0 = static_cast<int>(std::floor(sy));
      if (x0 > w - 2) x0 = w - 2;
      if (y0 > h - 2) y0 = h - 2;
      const double fx = sx - x0, fy = sy - y0;
      out.grad_field.at(y0, x0) += g * (1 - fx) * (1 - fy);
      out.grad_field.at(y0, x0 + 1) += g * fx * (1 - fy);
      out.grad_field.at(y0 + 1, x0) += g * (1 - fx) * fy;
      out.grad_field.at(y0 + 1, x0 + 1) += g * fx * fy;
      const double v00 = field.at(y0, x0), v10 = field.at(y0, x0 + 1);
      const double v01 = field.at(y0 + 1, x0), v11 = field.at(y0 + 1, x0 + 1);
      out.grad_disp.dx -= g * ((1 - fy) * (v10 - v00) + fy * (v11 - v01));
      out.grad_disp.dy -= g * ((1 - fx) * (v01 - v00) + fx * (v11 - v10));
    }
  }
  return out;
}

SbtMapLossResult sbt_loss_heatmap(const HeatmapSet& maps, const LandmarkSet& det,
                                  const LandmarkSet& reproj,
                                  const ReliabilityMask& mask) {
  require_same_k(maps.size(), det.size());
  require_same_k(det.size(), reproj.size());
  require_same_k(det.size(), mask.sbt_flags.size());
  SbtMapLossResult out;
  out.grad_det.resize(det.size());
  out.grad_reproj.resize(det.size());
  for (size_t k = 0; k < maps.size(); ++k) {
    const ScalarField& m = maps.maps[k];
    const int h = m.height(), w = m.width();
    ScalarField gm(h, w);
    if (!mask.sbt_flags[k]) {
      out.grad_maps.push_back(std::move(gm));
      continue;
    }
    const Disp2 d = reproj.coords[k] - det.coords[k];
    const ScalarField shifted = translate_field(m, d);
    const double norm = frobenius(m, shifted);
    out.loss += norm;
    if (norm == 0.0) {
      out.grad_maps.push_back(std::move(gm));
      continue;
    }

    // W = (M - shift(M)) / norm. Gradients:
    //   maps: +W minus the adjoint of the bilinear shift applied to W;
    //   displacement: sum_x W(x) * dM(x - d), with four-corner weights.
    Disp2 gd{};
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        const double wv = (m.at(r, c) - shifted.at(r, c)) / norm;
        gm.at(r, c) += wv;
        if (wv == 0.0) continue;
        const double sx = c - d.dx, sy = r - d.dy;
        if (sx < 0.0 || sy < 0.0 || sx > w - 1.0 || sy > h - 1.0) continue;
        int x0 = static_cast<int>(std::floor(sx));
        int y0 = static_cast<int>(std::floor(sy));
        if (x0 > w - 2) x0 = w - 2;
        if (y0 > h - 2) y0 = h - 2;
        const double fx = sx - x0, fy = sy - y0;
        const double c00 = (1 - fx) * (1 - fy), c10 = fx * (1 - fy);
        const double c01 = (1 - fx) * fy, c11 = fx * fy;
        gm.at(y0, x0) -= wv * c00;
        gm.at(y0, x0 + 1) -= wv * c10;
        gm.at(y0 + 1, x0) -= wv * c01;
        gm.at(y0 + 1, x0 + 1) -= wv * c11;
        // d(shift)/d(d) = -dM(x - d); residual carries another minus.
        const double v00 = m.at(y0, x0), v10 = m.at(y0, x0 + 1);
        const double v01 = m.at(y0 + 1, x0), v11 = m.at(y0 + 1, x0 + 1);
        const double ddx = (1 - fy) * (v10 - v00) + fy * (v11 - v01);
        const double ddy = (1 - fx) * (v01 - v00) + fx * (v11 - v10);
        gd.dx += wv * ddx;
        gd.dy += wv * ddy;
      }
    }
    out.grad_maps.push_back(std::move(gm));
    out.grad_reproj[k] = gd;
    out.grad_det[k] = {-gd.dx, -gd.dy};
  }
  return out;
}

double total_loss(double det_loss, double sbr_loss, double sbt_loss,
                  const LossWeights& w) {
  if (!std::isfinite(det_loss) || !std::isfinite(sbr_loss) ||
      !std::isfinite(sbt_loss)) {
    throw std::invalid_argument("loss components must be finite");
  }
  if (w.w_sbr < 0.0 || w.w_sbt < 0.0) {
    throw std::invalid_argument("loss weights must be nonnegative");
  }
  return det_loss + w.w_sbr * sbr_loss + w.w_sbt * sbt_loss;
}

}  // namespace srt
