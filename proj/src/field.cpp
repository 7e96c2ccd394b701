#include "srt/field.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace srt {

ScalarField::ScalarField(int height, int width, double fill)
    : height_(height), width_(width) {
  if (height < 1 || width < 1)
    throw std::invalid_argument("ScalarField: dimensions must be >= 1");
  samples_.assign(static_cast<std::size_t>(height) * width, fill);
}

ScalarField::ScalarField(int height, int width, std::vector<double> samples)
    : height_(height), width_(width), samples_(std::move(samples)) {
  if (height < 1 || width < 1)
    throw std::invalid_argument("ScalarField: dimensions must be >= 1");
  if (samples_.size() != static_cast<std::size_t>(height) * width)
    throw std::invalid_argument("ScalarField: sample count mismatch");
  if (!all_finite())
    throw std::invalid_argument("ScalarField: samples must be finite");
}

bool ScalarField::all_finite() const {
  return std::all_of(samples_.begin(), samples_.end(),
                     [](double v) { return std::isfinite(v); });
}

MultiChannelField::MultiChannelField(std::vector<ScalarField> p)
    : planes(std::move(p)) {
  if (planes.empty())
    throw std::invalid_argument("MultiChannelField: needs at least 1 plane");
  for (const auto& plane : planes)
    if (!plane.same_shape(planes[0]))
      throw std::invalid_argument("MultiChannelField: plane shape mismatch");
}

std::optional<double> bilinear_sample(const ScalarField& field, Point2 p) {
  if (!field.contains(p)) return std::nullopt;
  // Anchor cell: clamp so the right/bottom edges read the last full cell.
  int x0 = static_cast<int>(std::floor(p.x));
  int y0 = static_cast<int>(std::floor(p.y));
  x0 = std::min(x0, field.width() - 2);
  y0 = std::min(y0, field.height() - 2);
  if (field.width() == 1) x0 = 0;
  if (field.height() == 1) y0 = 0;
  const int x1 = std::min(x0 + 1, field.width() - 1);
  const int y1 = std::min(y0 + 1, field.height() - 1);
  const double fx = p.x - x0;
  const double fy = p.y - y0;
  const double v00 = field.at(y0, x0), v01 = field.at(y0, x1);
  const double v10 = field.at(y1, x0), v11 = field.at(y1, x1);
  return (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) +
         fy * ((1.0 - fx) * v10 + fx * v11);
}

Grad2 bilinear_sample_jacobian(const ScalarField& field, Point2 p) {
  const bool interior = p.x > 0.0 && p.x < field.width() - 1.0 && p.y > 0.0 &&
                        p.y < field.height() - 1.0;
  if (!interior)
    throw std::domain_error("bilinear_sample_jacobian: point not interior");
  constexpr double kNudge = 1e-9;
  int x0 = static_cast<int>(std::floor(p.x + kNudge));
  int y0 = static_cast<int>(std::floor(p.y + kNudge));
  x0 = std::min(x0, field.width() - 2);
  y0 = std::min(y0, field.height() - 2);
  const double fx = p.x - x0;
  const double fy = p.y - y0;
  const double v00 = field.at(y0, x0), v01 = field.at(y0, x0 + 1);
  const double v10 = field.at(y0 + 1, x0), v11 = field.at(y0 + 1, x0 + 1);
  Grad2 g;
  g.ddx = (1.0 - fy) * (v01 - v00) + fy * (v11 - v10);
  g.ddy = (1.0 - fx) * (v10 - v00) + fx * (v11 - v01);
  return g;
}

std::pair<ScalarField, ScalarField> spatial_gradient(const ScalarField& field) {
  const int h = field.height(), w = field.width();
  if (h < 3 || w < 3)
    throw std::invalid_argument("spatial_gradient: field must be >= 3x3");
  ScalarField gx(h, w), gy(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const int cl = std::max(c - 1, 0), cr = std::min(c + 1, w - 1);
      const int ru = std::max(r - 1, 0), rd = std::min(r + 1, h - 1);
      gx.at(r, c) = 0.5 * (field.at(r, cr) - field.at(r, cl));
      gy.at(r, c) = 0.5 * (field.at(rd, c) - field.at(ru, c));
    }
  }
  return {std::move(gx), std::move(gy)};
}

}  // namespace srt
