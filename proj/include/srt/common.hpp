#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

namespace srt {

/// 2D point in pixel coordinates. x = column, y = row; the origin is the
/// center of pixel (0,0). All modules share this convention.
struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

/// 2D displacement in pixels.
struct Disp2 {
  double dx = 0.0;
  double dy = 0.0;
};

inline Point2 operator+(Point2 p, Disp2 d) { return {p.x + d.dx, p.y + d.dy}; }
inline Disp2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
inline double norm2(Disp2 d) { return std::sqrt(d.dx * d.dx + d.dy * d.dy); }
inline double norm1(Disp2 d) { return std::abs(d.dx) + std::abs(d.dy); }

/// Axis-aligned rectangle, inclusive of x0/y0, exclusive semantics are not
/// used anywhere: containment tests are closed on all sides.
struct Rect {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const { return width() * height(); }
  Point2 center() const { return {0.5 * (x0 + x1), 0.5 * (y0 + y1)}; }
  bool contains(Point2 p) const {
    return p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1;
  }
  Rect expanded(double frac_w, double frac_h) const {
    const double ex = 0.5 * frac_w * width(), ey = 0.5 * frac_h * height();
    return {x0 - ex, y0 - ey, x1 + ex, y1 + ey};
  }
};

struct Mat22 {
  double a00 = 0, a01 = 0, a10 = 0, a11 = 0;

  static Mat22 identity() { return {1.0, 0.0, 0.0, 1.0}; }
};

inline double det(const Mat22& m) { return m.a00 * m.a11 - m.a01 * m.a10; }

inline Mat22 inverse(const Mat22& m) {
  const double d = det(m);
  if (d == 0.0 || !std::isfinite(d)) {
    throw std::runtime_error("singular 2x2 matrix");
  }
  return {m.a11 / d, -m.a01 / d, -m.a10 / d, m.a00 / d};
}

inline Mat22 matmul(const Mat22& a, const Mat22& b) {
  return {a.a00 * b.a00 + a.a01 * b.a10, a.a00 * b.a01 + a.a01 * b.a11,
          a.a10 * b.a00 + a.a11 * b.a10, a.a10 * b.a01 + a.a11 * b.a11};
}

inline Disp2 apply(const Mat22& m, Disp2 d) {
  return {m.a00 * d.dx + m.a01 * d.dy, m.a10 * d.dx + m.a11 * d.dy};
}

/// 3x2 Jacobian block: rows index the 3D output, columns the 2D input.
struct Mat32 {
  std::array<std::array<double, 2>, 3> m{};
};

/// 2x3 Jacobian block: rows index the 2D output, columns the 3D input.
struct Mat23 {
  std::array<std::array<double, 3>, 2> m{};
};

/// User/config-level error: the CLI maps this family to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Triangulation cannot be performed (parallel rays, duplicated cameras...).
class DegenerateGeometry : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Projection of a point lying on (or numerically at) the principal plane.
class PointAtInfinity : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline bool is_finite(Point2 p) { return std::isfinite(p.x) && std::isfinite(p.y); }

}  // namespace srt
