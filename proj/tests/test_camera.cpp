#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "camera_fixtures.hpp"
#include "srt/camera.hpp"
#include "srt/rng.hpp"

using namespace srt;
using testutil::consistent_observations;
using testutil::look_at_camera;
using testutil::random_point_near_origin;

namespace {

CameraMatrix identity_camera(double tx = 0.0, double ty = 0.0, double tz = 0.0) {
  CameraMatrix cam;
  cam.at(0, 0) = cam.at(1, 1) = cam.at(2, 2) = 1.0;
  cam.at(0, 3) = tx;
  cam.at(1, 3) = ty;
  cam.at(2, 3) = tz;
  return cam;
}

double dist3(const Landmark3D& a, const Landmark3D& b) {
  return std::sqrt((a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y) +
                   (a.z - b.z) * (a.z - b.z));
}

}  // namespace

TEST_CASE("projection") {
  SUBCASE("pinhole identity") {
    const Point2 p = project(identity_camera(), {1.0, 2.0, 4.0});
    CHECK(p.x == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(p.y == doctest::Approx(0.5).epsilon(1e-15));
  }
  SUBCASE("point at infinity") {
    CHECK_THROWS_AS(project(identity_camera(), {0.0, 0.0, 0.0}), PointAtInfinity);
  }
  SUBCASE("matches homogeneous multiply oracle") {
    Rng rng(101);
    for (int i = 0; i < 50; ++i) {
      const CameraMatrix cam = look_at_camera(rng);
      const Landmark3D X = random_point_near_origin(rng);
      double q[3] = {0, 0, 0};
      const double hx[4] = {X.x, X.y, X.z, 1.0};
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 4; ++c) q[r] += cam.at(r, c) * hx[c];
      }
      const Point2 p = project(cam, X);
      CHECK(std::abs(p.x - q[0] / q[2]) < 1e-12);
      CHECK(std::abs(p.y - q[1] / q[2]) < 1e-12);
    }
  }
  SUBCASE("scale invariance in the camera matrix") {
    Rng rng(102);
    for (int i = 0; i < 20; ++i) {
      const CameraMatrix cam = look_at_camera(rng);
      const Landmark3D X = random_point_near_origin(rng);
      CameraMatrix scaled = cam;
      const double s = rng.uniform(0.1, 5.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
      for (auto& v : scaled.m) v *= s;
      const Point2 a = project(cam, X), b = project(scaled, X);
      CHECK(std::abs(a.x - b.x) < 1e-12);
      CHECK(std::abs(a.y - b.y) < 1e-12);
    }
  }
  SUBCASE("projection jacobian matches finite differences") {
    Rng rng(103);
    for (int i = 0; i < 20; ++i) {
      const CameraMatrix cam = look_at_camera(rng);
      const Landmark3D X = random_point_near_origin(rng);
      const Mat23 J = project_jacobian(cam, X);
      const double h = 1e-6;
      for (int c = 0; c < 3; ++c) {
        Landmark3D hi = X, lo = X;
        (c == 0 ? hi.x : c == 1 ? hi.y : hi.z) += h;
        (c == 0 ? lo.x : c == 1 ? lo.y : lo.z) -= h;
        const Point2 ph = project(cam, hi), pl = project(cam, lo);
        CHECK(std::abs(J.m[0][c] - (ph.x - pl.x) / (2 * h)) < 1e-5);
        CHECK(std::abs(J.m[1][c] - (ph.y - pl.y) / (2 * h)) < 1e-5);
      }
    }
  }
}

TEST_CASE("triangulation") {
  SUBCASE("hand-computable stereo pair") {
    ViewObservationSet obs;
    obs.cameras = {identity_camera(), identity_camera(-1.0)};
    obs.points = {{0.0, 0.0}, {-0.2, 0.0}};
    const Landmark3D L = triangulate_dlt(obs);
    CHECK(std::abs(L.x - 0.0) < 1e-9);
    CHECK(std::abs(L.y - 0.0) < 1e-9);
    CHECK(std::abs(L.z - 5.0) < 1e-9);
  }
  SUBCASE("four random views recover the point") {
    Rng rng(111);
    for (int i = 0; i < 50; ++i) {
      const Landmark3D X = random_point_near_origin(rng);
      const auto obs = consistent_observations(rng, 4, X);
      const Landmark3D L = triangulate_dlt(obs);
      CHECK(dist3(L, X) < 1e-8);
    }
  }
  SUBCASE("duplicate cameras are degenerate") {
    ViewObservationSet obs;
    obs.cameras = {identity_camera(), identity_camera()};
    obs.points = {{0.1, 0.2}, {0.1, 0.2}};
    CHECK_THROWS_AS(triangulate_dlt(obs), DegenerateGeometry);
  }
  SUBCASE("round trip over view counts") {
    Rng rng(112);
    for (int m : {2, 3, 4, 7}) {
      for (int i = 0; i < 250; ++i) {
        const Landmark3D X = random_point_near_origin(rng);
        const auto obs = consistent_observations(rng, m, X);
        const Landmark3D L = triangulate_dlt(obs);
        CHECK(dist3(L, X) < 1e-8);
      }
    }
  }
  SUBCASE("cheirality warning") {
    Rng rng(113);
    const Landmark3D X = random_point_near_origin(rng);
    auto obs = consistent_observations(rng, 3, X);
    bool warn = true;
    triangulate_dlt(obs, &warn);
    CHECK(!warn);
    // Flip one camera to look away: same rays, negative depth.
    for (auto& v : obs.cameras[0].m) v = -v;
    bool warn2 = false;
    triangulate_dlt(obs, &warn2);
    CHECK(warn2);
  }
  SUBCASE("solution minimizes the algebraic residual") {
    Rng rng(114);
    for (int i = 0; i < 30; ++i) {
      const Landmark3D X = random_point_near_origin(rng);
      auto obs = consistent_observations(rng, 3, X);
      // Perturb observations so the residual is nonzero.
      for (auto& p : obs.points) {
        p.x += rng.uniform(-0.05, 0.05);
        p.y += rng.uniform(-0.05, 0.05);
      }
      const Landmark3D L = triangulate_dlt(obs);

      const auto residual_sq = [&](const Landmark3D& P) {
        double total = 0.0;
        for (size_t m = 0; m < obs.size(); ++m) {
          const auto& cam = obs.cameras[m];
          double rows[2][4];
          for (int c = 0; c < 4; ++c) {
            rows[0][c] = cam.at(0, c) - cam.at(2, c) * obs.points[m].x;
            rows[1][c] = cam.at(1, c) - cam.at(2, c) * obs.points[m].y;
          }
          for (auto& row : rows) {
            const double r = row[0] * P.x + row[1] * P.y + row[2] * P.z + row[3];
            total += r * r;
          }
        }
        return total;
      };

      const double base = residual_sq(L);
      for (int trial = 0; trial < 10; ++trial) {
        Landmark3D P = L;
        const double nx = rng.normal(), ny = rng.normal(), nz = rng.normal();
        const double n = std::sqrt(nx * nx + ny * ny + nz * nz);
        P.x += 1e-3 * nx / n;
        P.y += 1e-3 * ny / n;
        P.z += 1e-3 * nz / n;
        CHECK(residual_sq(P) > base);
      }
    }
  }
}

TEST_CASE("triangulation jacobian") {
  SUBCASE("matches finite differences") {
    Rng rng(121);
    for (int i = 0; i < 40; ++i) {
      const Landmark3D X = random_point_near_origin(rng);
      auto obs = consistent_observations(rng, 4, X);
      const auto J = triangulation_jacobian(obs);
      const double h = 1e-6;
      for (size_t m = 0; m < obs.size(); ++m) {
        for (int d = 0; d < 2; ++d) {
          auto hi = obs, lo = obs;
          (d == 0 ? hi.points[m].x : hi.points[m].y) += h;
          (d == 0 ? lo.points[m].x : lo.points[m].y) -= h;
          const Landmark3D Lh = triangulate_dlt(hi), Ll = triangulate_dlt(lo);
          const double fd[3] = {(Lh.x - Ll.x) / (2 * h), (Lh.y - Ll.y) / (2 * h),
                                (Lh.z - Ll.z) / (2 * h)};
          for (int r = 0; r < 3; ++r) {
            CHECK(std::abs(J[m].m[r][d] - fd[r]) <=
                  1e-4 * std::max(1.0, std::abs(fd[r])));
          }
        }
      }
    }
  }
  SUBCASE("mirrored stereo pair has mirror-image jacobians") {
    ViewObservationSet obs;
    obs.cameras = {identity_camera(0.7), identity_camera(-0.7)};
    const Landmark3D X{0.0, 0.3, 5.0};
    obs.points = {project(obs.cameras[0], X), project(obs.cameras[1], X)};
    const auto J = triangulation_jacobian(obs);
    // Mirror across the x=0 plane: J2 = diag(-1,1,1) * J1 * diag(-1,1).
    for (int r = 0; r < 3; ++r) {
      const double sr = r == 0 ? -1.0 : 1.0;
      CHECK(J[1].m[r][0] == doctest::Approx(-sr * J[0].m[r][0]).epsilon(1e-9));
      CHECK(J[1].m[r][1] == doctest::Approx(sr * J[0].m[r][1]).epsilon(1e-9));
    }
  }
  SUBCASE("columns stay bounded in well-conditioned scenes") {
    Rng rng(122);
    for (int i = 0; i < 30; ++i) {
      const Landmark3D X = random_point_near_origin(rng);
      auto obs = consistent_observations(rng, 3, X);
      // Nudge view 0 along the image direction that changes depth most.
      const Mat23 pj = project_jacobian(obs.cameras[0], X);
      const double dir[2] = {pj.m[0][2], pj.m[1][2]};
      const double n = std::hypot(dir[0], dir[1]);
      if (n > 1e-9) {
        obs.points[0].x += 0.5 * dir[0] / n;
        obs.points[0].y += 0.5 * dir[1] / n;
      }
      for (const auto& Jm : triangulation_jacobian(obs)) {
        for (const auto& row : Jm.m) {
          for (double v : row) {
            CHECK(std::isfinite(v));
            CHECK(std::abs(v) < 1e6);
          }
        }
      }
    }
  }
}

TEST_CASE("reprojection") {
  SUBCASE("noiseless observations are a fixed point") {
    Rng rng(131);
    for (int i = 0; i < 20; ++i) {
      const Landmark3D X = random_point_near_origin(rng);
      const auto obs = consistent_observations(rng, 4, X);
      const auto re = reproject_all(obs);
      for (size_t m = 0; m < obs.size(); ++m) {
        CHECK(std::abs(re[m].x - obs.points[m].x) < 1e-8);
        CHECK(std::abs(re[m].y - obs.points[m].y) < 1e-8);
      }
    }
  }
  SUBCASE("perturbed view leaves a residual") {
    Rng rng(132);
    const Landmark3D X = random_point_near_origin(rng);
    auto obs = consistent_observations(rng, 4, X);
    obs.points[1].x += 2.0;
    const auto re = reproject_all(obs);
    double ssr = 0.0;
    for (size_t m = 0; m < obs.size(); ++m) {
      const Disp2 d = re[m] - obs.points[m];
      ssr += d.dx * d.dx + d.dy * d.dy;
    }
    CHECK(ssr > 1e-4);
  }
  SUBCASE("two views reproject exactly when rays intersect") {
    Rng rng(133);
    for (int i = 0; i < 20; ++i) {
      const Landmark3D X = random_point_near_origin(rng);
      const auto obs = consistent_observations(rng, 2, X);
      const auto re = reproject_all(obs);
      for (size_t m = 0; m < 2; ++m) {
        CHECK(std::abs(re[m].x - obs.points[m].x) < 1e-8);
        CHECK(std::abs(re[m].y - obs.points[m].y) < 1e-8);
      }
    }
  }
  SUBCASE("validation errors") {
    ViewObservationSet obs;
    obs.cameras = {identity_camera()};
    obs.points = {{0.0, 0.0}};
    CHECK_THROWS(triangulate_dlt(obs));
  }
}
