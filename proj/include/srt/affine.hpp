#pragma once

#include <cmath>

#include "srt/common.hpp"

namespace srt {

/// 2x3 affine map: p -> A p + t.
struct AffineTransform {
  double a00 = 1.0, a01 = 0.0, a10 = 0.0, a11 = 1.0;
  double tx = 0.0, ty = 0.0;

  Point2 apply(Point2 p) const {
    return {a00 * p.x + a01 * p.y + tx, a10 * p.x + a11 * p.y + ty};
  }
  Disp2 apply_vector(Disp2 d) const {
    return {a00 * d.dx + a01 * d.dy, a10 * d.dx + a11 * d.dy};
  }

  double linear_det() const { return a00 * a11 - a01 * a10; }

  /// Composition: (after.then_applied_to(this))(p) = after(this(p)).
  AffineTransform composed_with(const AffineTransform& inner) const {
    return {a00 * inner.a00 + a01 * inner.a10, a00 * inner.a01 + a01 * inner.a11,
            a10 * inner.a00 + a11 * inner.a10, a10 * inner.a01 + a11 * inner.a11,
            a00 * inner.tx + a01 * inner.ty + tx,
            a10 * inner.tx + a11 * inner.ty + ty};
  }

  AffineTransform inverse() const {
    const double d = linear_det();
    if (d == 0.0 || !std::isfinite(d))
      throw ConfigError("affine transform is not invertible");
    const double i00 = a11 / d, i01 = -a01 / d, i10 = -a10 / d, i11 = a00 / d;
    return {i00, i01, i10, i11, -(i00 * tx + i01 * ty), -(i10 * tx + i11 * ty)};
  }

  static AffineTransform identity() { return {}; }

  static AffineTransform translation(double dx, double dy) {
    return {1.0, 0.0, 0.0, 1.0, dx, dy};
  }

  /// Rotation by radians about a fixed point, then uniform scale about it.
  static AffineTransform similarity_about(Point2 center, double radians,
                                          double scale) {
    const double c = scale * std::cos(radians);
    const double s = scale * std::sin(radians);
    return {c, -s, s, c, center.x - (c * center.x - s * center.y),
            center.y - (s * center.x + c * center.y)};
  }
};

}  // namespace srt
