#include "srt/camera.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

namespace srt {

namespace {

Eigen::Matrix<double, 3, 4> as_eigen(const CameraMatrix& cam) {
  Eigen::Matrix<double, 3, 4> M;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) M(r, c) = cam.at(r, c);
  return M;
}

/// B per Eqs. above: u rows for all views, then v rows.
Eigen::MatrixXd constraint_matrix(const ViewObservationSet& obs) {
  const int m_count = static_cast<int>(obs.size());
  Eigen::MatrixXd B(2 * m_count, 4);
  for (int m = 0; m < m_count; ++m) {
    const auto M = as_eigen(obs.cameras[m]);
    B.row(m) = M.row(0) - M.row(2) * obs.points[m].x;
    B.row(m_count + m) = M.row(1) - M.row(2) * obs.points[m].y;
  }
  return B;
}

struct NormalSolve {
  Eigen::Matrix3d N;
  Eigen::LDLT<Eigen::Matrix3d> ldlt;
  Eigen::Vector3d L;
};

NormalSolve solve_normal_equations(const Eigen::MatrixXd& B) {
  NormalSolve s;
  const auto B3 = B.leftCols<3>();
  s.N = B3.transpose() * B3;

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(s.N);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || hi > 1e12 * lo) {
    throw DegenerateGeometry("triangulation normal matrix is ill-conditioned");
  }

  s.ldlt.compute(s.N);
  s.L = s.ldlt.solve(B3.transpose() * (-B.col(3)));
  return s;
}

}  // namespace

void CameraMatrix::validate() const {
  for (double v : m) {
    if (!std::isfinite(v)) throw std::invalid_argument("camera entry not finite");
  }
  const auto M = as_eigen(*this);
  if (std::abs(M.leftCols<3>().determinant()) <= 1e-12) {
    throw std::invalid_argument("camera left 3x3 block is singular");
  }
}

void ViewObservationSet::validate() const {
  if (cameras.size() != points.size()) {
    throw std::invalid_argument("camera/point count mismatch");
  }
  if (cameras.size() < 2) {
    throw std::invalid_argument("triangulation needs at least two views");
  }
  for (const auto& c : cameras) c.validate();
  for (const auto& p : points) {
    if (!is_finite(p)) throw std::invalid_argument("observation not finite");
  }
}

double projection_depth(const CameraMatrix& camera, const Landmark3D& X) {
  return camera.at(2, 0) * X.x + camera.at(2, 1) * X.y + camera.at(2, 2) * X.z +
         camera.at(2, 3);
}

Point2 project(const CameraMatrix& camera, const Landmark3D& X) {
  const double q0 = camera.at(0, 0) * X.x + camera.at(0, 1) * X.y +
                    camera.at(0, 2) * X.z + camera.at(0, 3);
  const double q1 = camera.at(1, 0) * X.x + camera.at(1, 1) * X.y +
                    camera.at(1, 2) * X.z + camera.at(1, 3);
  const double q2 = projection_depth(camera, X);
  if (std::abs(q2) <= 1e-12) {
    throw PointAtInfinity("projection divisor is zero");
  }
  return {q0 / q2, q1 / q2};
}

Mat23 project_jacobian(const CameraMatrix& camera, const Landmark3D& X) {
  const double q0 = camera.at(0, 0) * X.x + camera.at(0, 1) * X.y +
                    camera.at(0, 2) * X.z + camera.at(0, 3);
  const double q1 = camera.at(1, 0) * X.x + camera.at(1, 1) * X.y +
                    camera.at(1, 2) * X.z + camera.at(1, 3);
  const double q2 = projection_depth(camera, X);
  if (std::abs(q2) <= 1e-12) {
    throw PointAtInfinity("projection divisor is zero");
  }
  Mat23 J{};
  for (int c = 0; c < 3; ++c) {
    J.m[0][c] = (camera.at(0, c) * q2 - q0 * camera.at(2, c)) / (q2 * q2);
    J.m[1][c] = (camera.at(1, c) * q2 - q1 * camera.at(2, c)) / (q2 * q2);
  }
  return J;
}

Landmark3D triangulate_dlt(const ViewObservationSet& obs,
                           bool* cheirality_warning) {
  obs.validate();
  const Eigen::MatrixXd B = constraint_matrix(obs);
  const NormalSolve s = solve_normal_equations(B);
  Landmark3D L{s.L(0), s.L(1), s.L(2)};
  if (cheirality_warning) {
    *cheirality_warning = false;
    for (const auto& cam : obs.cameras) {
      if (projection_depth(cam, L) <= 0.0) {
        *cheirality_warning = true;
        break;
      }
    }
  }
  return L;
}

std::vector<Mat32> triangulation_jacobian(const ViewObservationSet& obs) {
  obs.validate();
  const int m_count = static_cast<int>(obs.size());
  const Eigen::MatrixXd B = constraint_matrix(obs);
  const NormalSolve s = solve_normal_equations(B);

  std::vector<Mat32> out(obs.size());
  for (int m = 0; m < m_count; ++m) {
    const auto M = as_eigen(obs.cameras[m]);
    const Eigen::RowVector4d dr = -M.row(2);
    const Eigen::Vector3d r3 = dr.head<3>().transpose();
    const double rb = dr(3);
    for (int d = 0; d < 2; ++d) {
      // The row of B that depends on this coordinate.
      const Eigen::RowVector4d a = B.row(d == 0 ? m : m_count + m);
      const Eigen::Vector3d a3 = a.head<3>().transpose();
      const double ab = a(3);

      const Eigen::Matrix3d dN = r3 * a3.transpose() + a3 * r3.transpose();
      const Eigen::Vector3d dc = -(r3 * ab + a3 * rb);
      const Eigen::Vector3d dL = s.ldlt.solve(dc - dN * s.L);
      for (int row = 0; row < 3; ++row) out[m].m[row][d] = dL(row);
    }
  }
  return out;
}

std::vector<Point2> reproject_all(const ViewObservationSet& obs,
                                  bool* cheirality_warning) {
  const Landmark3D L = triangulate_dlt(obs, cheirality_warning);
  std::vector<Point2> out;
  out.reserve(obs.size());
  for (const auto& cam : obs.cameras) out.push_back(project(cam, L));
  return out;
}

}  // namespace srt
