#pragma once

#include <array>
#include <vector>

#include "srt/common.hpp"

namespace srt {

/// 3x4 projection matrix, row-major.
struct CameraMatrix {
  std::array<double, 12> m{};

  double at(int r, int c) const { return m[static_cast<size_t>(r) * 4 + c]; }
  double& at(int r, int c) { return m[static_cast<size_t>(r) * 4 + c]; }

  /// Finite entries and a non-singular left 3x3 block (|det| > 1e-12).
  void validate() const;
};

struct Landmark3D {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

/// One landmark seen from M calibrated views.
struct ViewObservationSet {
  std::vector<CameraMatrix> cameras;
  std::vector<Point2> points;

  size_t size() const { return cameras.size(); }
  void validate() const;  // lengths match, M >= 2
};

/// Homogeneous depth q[2] of X in the camera (the projective divisor).
double projection_depth(const CameraMatrix& camera, const Landmark3D& X);

/// Pinhole projection (q0/q2, q1/q2); throws PointAtInfinity when
/// |q2| <= 1e-12.
Point2 project(const CameraMatrix& camera, const Landmark3D& X);

/// d(project)/dX, 2x3.
Mat23 project_jacobian(const CameraMatrix& camera, const Landmark3D& X);

/// Linear triangulation: stacks per-view rows
///   u_m = M_m[0,:] - M_m[2,:] * x_m,   v_m = M_m[1,:] - M_m[2,:] * y_m
/// into B (all u rows, then all v rows) and returns the normal-equation
/// solution (B3^T B3)^-1 B3^T (-B[:,3]). Throws DegenerateGeometry when the
/// normal matrix has condition number > 1e12 or is not positive definite.
/// If cheirality_warning is non-null it is set to true when the solution
/// lies at non-positive depth in any contributing view.
Landmark3D triangulate_dlt(const ViewObservationSet& obs,
                           bool* cheirality_warning = nullptr);

/// d(triangulate_dlt)/d(point_m) for every view, each 3x2 (columns: d/dx_m,
/// d/dy_m), from closed-form differentiation of the normal equations.
std::vector<Mat32> triangulation_jacobian(const ViewObservationSet& obs);

/// triangulate_dlt followed by project into every view.
std::vector<Point2> reproject_all(const ViewObservationSet& obs,
                                  bool* cheirality_warning = nullptr);

}  // namespace srt
