#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "srt/common.hpp"

namespace srt {

/// Dense 2D grid of doubles, row-major. Indexing is (row, col) = (y, x).
class ScalarField {
 public:
  ScalarField() = default;
  ScalarField(int height, int width, double fill = 0.0);
  ScalarField(int height, int width, std::vector<double> samples);

  int height() const { return height_; }
  int width() const { return width_; }

  double at(int row, int col) const { return samples_[idx(row, col)]; }
  double& at(int row, int col) { return samples_[idx(row, col)]; }

  const std::vector<double>& samples() const { return samples_; }
  std::vector<double>& samples() { return samples_; }

  /// True if p lies in the sampling domain [0, w-1] x [0, h-1].
  bool contains(Point2 p) const {
    return p.x >= 0.0 && p.x <= width_ - 1.0 && p.y >= 0.0 &&
           p.y <= height_ - 1.0;
  }

  bool same_shape(const ScalarField& o) const {
    return height_ == o.height_ && width_ == o.width_;
  }

  /// All samples finite; enforced by constructors taking data, re-checkable
  /// after in-place edits.
  bool all_finite() const;

 private:
  std::size_t idx(int row, int col) const {
    return static_cast<std::size_t>(row) * width_ + col;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<double> samples_;
};

/// Stack of equally sized planes (C >= 1).
struct MultiChannelField {
  std::vector<ScalarField> planes;

  MultiChannelField() = default;
  explicit MultiChannelField(std::vector<ScalarField> p);

  int channels() const { return static_cast<int>(planes.size()); }
  int height() const { return planes.empty() ? 0 : planes[0].height(); }
  int width() const { return planes.empty() ? 0 : planes[0].width(); }
};

/// Non-owning view over one or more channel planes; lets the patch-tracking
/// code accept either a bare ScalarField or a MultiChannelField.
class ChannelView {
 public:
  ChannelView(const ScalarField& f) : single_(&f), count_(1) {}  // NOLINT
  ChannelView(const MultiChannelField& f)                        // NOLINT
      : planes_(f.planes.data()), count_(f.planes.size()) {}

  std::size_t channels() const { return count_; }
  const ScalarField& plane(std::size_t c) const {
    return single_ ? *single_ : planes_[c];
  }
  int height() const { return plane(0).height(); }
  int width() const { return plane(0).width(); }

 private:
  const ScalarField* single_ = nullptr;
  const ScalarField* planes_ = nullptr;
  std::size_t count_ = 0;
};

/// Bilinear interpolation of the four neighboring samples. Exact at integer
/// coordinates. Returns nullopt when p is outside the sampling domain; the
/// caller decides whether that means clamp, zero, or invalid.
std::optional<double> bilinear_sample(const ScalarField& field, Point2 p);

struct Grad2 {
  double ddx = 0.0;
  double ddy = 0.0;
};

/// Analytic partials of bilinear_sample w.r.t. p. The bilinear surface has
/// derivative jumps on cell boundaries; there the cell containing p nudged
/// by +1e-9 is used, which keeps the value deterministic.
/// Throws std::domain_error unless p is strictly inside the grid interior.
Grad2 bilinear_sample_jacobian(const ScalarField& field, Point2 p);

/// Central differences in the interior, replicate-border stencil at edges
/// (which degenerates to a half-weight one-sided difference there).
/// Requires width >= 3 and height >= 3.
std::pair<ScalarField, ScalarField> spatial_gradient(const ScalarField& field);

}  // namespace srt
