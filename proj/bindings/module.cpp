#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "srt/camera.hpp"
#include "srt/detector.hpp"
#include "srt/experiment.hpp"
#include "srt/field.hpp"
#include "srt/lk.hpp"
#include "srt/metrics.hpp"
#include "srt/synth.hpp"
#include "srt/train.hpp"

namespace py = pybind11;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

srt::ScalarField to_field(const DoubleArray& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2d array (H, W)");
  srt::ScalarField f(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), f.samples().begin());
  return f;
}

py::array_t<double> from_field(const srt::ScalarField& f) {
  py::array_t<double> a({f.height(), f.width()});
  std::copy(f.samples().begin(), f.samples().end(), a.mutable_data());
  return a;
}

srt::FlowField to_flow(const DoubleArray& a) {
  if (a.ndim() != 3 || a.shape(0) != 2)
    throw std::invalid_argument("expected a flow array (2, H, W)");
  const int h = static_cast<int>(a.shape(1));
  const int w = static_cast<int>(a.shape(2));
  srt::ScalarField u(h, w), v(h, w);
  std::copy(a.data(), a.data() + h * w, u.samples().begin());
  std::copy(a.data() + h * w, a.data() + 2 * h * w, v.samples().begin());
  return srt::FlowField(std::move(u), std::move(v));
}

py::array_t<double> from_flow(const srt::FlowField& fl) {
  const int h = fl.height(), w = fl.width();
  py::array_t<double> a({2, h, w});
  double* out = a.mutable_data();
  std::copy(fl.u.samples().begin(), fl.u.samples().end(), out);
  std::copy(fl.v.samples().begin(), fl.v.samples().end(), out + h * w);
  return a;
}

std::vector<srt::Point2> to_points(const DoubleArray& a) {
  if (a.ndim() != 2 || a.shape(1) != 2)
    throw std::invalid_argument("expected a point array (K, 2)");
  std::vector<srt::Point2> pts(a.shape(0));
  for (py::ssize_t k = 0; k < a.shape(0); ++k)
    pts[k] = {a.at(k, 0), a.at(k, 1)};
  return pts;
}

py::array_t<double> from_points(const std::vector<srt::Point2>& pts) {
  py::array_t<double> a({static_cast<py::ssize_t>(pts.size()), py::ssize_t{2}});
  auto r = a.mutable_unchecked<2>();
  for (size_t k = 0; k < pts.size(); ++k) {
    r(k, 0) = pts[k].x;
    r(k, 1) = pts[k].y;
  }
  return a;
}

std::vector<srt::CameraMatrix> to_cameras(const DoubleArray& a) {
  if (a.ndim() != 3 || a.shape(1) != 3 || a.shape(2) != 4)
    throw std::invalid_argument("expected a camera array (M, 3, 4)");
  std::vector<srt::CameraMatrix> cams(a.shape(0));
  for (py::ssize_t m = 0; m < a.shape(0); ++m) {
    std::copy(a.data() + m * 12, a.data() + (m + 1) * 12, cams[m].m.begin());
    cams[m].validate();
  }
  return cams;
}

srt::ViewObservationSet to_observations(const DoubleArray& cameras,
                                        const DoubleArray& points) {
  srt::ViewObservationSet obs;
  obs.cameras = to_cameras(cameras);
  obs.points = to_points(points);
  obs.validate();
  return obs;
}

srt::Rect to_rect(const std::array<double, 4>& b) {
  return srt::Rect{b[0], b[1], b[2], b[3]};
}

srt::PatchSpec make_spec(int side, int max_iterations, double convergence_eps) {
  srt::PatchSpec spec = srt::PatchSpec::for_side(side);
  spec.max_iterations = max_iterations;
  spec.convergence_eps = convergence_eps;
  spec.validate();
  return spec;
}

py::dict scene_to_dict(const srt::Scene& s) {
  const auto& c = s.config;
  py::dict d;

  py::array_t<double> cams({c.views, 3, 4});
  for (int m = 0; m < c.views; ++m)
    std::copy(s.cameras[m].m.begin(), s.cameras[m].m.end(),
              cams.mutable_data() + m * 12);
  d["cameras"] = cams;

  py::array_t<double> g2({c.views, c.frames, c.landmarks, 2});
  auto g2r = g2.mutable_unchecked<4>();
  for (int m = 0; m < c.views; ++m)
    for (int t = 0; t < c.frames; ++t)
      for (int k = 0; k < c.landmarks; ++k) {
        g2r(m, t, k, 0) = s.gt2d[m][t][k].x;
        g2r(m, t, k, 1) = s.gt2d[m][t][k].y;
      }
  d["gt2d"] = g2;

  py::array_t<double> g3({c.frames, c.landmarks, 3});
  auto g3r = g3.mutable_unchecked<3>();
  for (int t = 0; t < c.frames; ++t)
    for (int k = 0; k < c.landmarks; ++k) {
      g3r(t, k, 0) = s.gt3d[t][k].x;
      g3r(t, k, 1) = s.gt3d[t][k].y;
      g3r(t, k, 2) = s.gt3d[t][k].z;
    }
  d["gt3d"] = g3;

  py::array_t<double> bb({c.views, c.frames, 4});
  auto bbr = bb.mutable_unchecked<3>();
  for (int m = 0; m < c.views; ++m)
    for (int t = 0; t < c.frames; ++t) {
      const srt::Rect& r = s.bboxes[m][t];
      bbr(m, t, 0) = r.x0;
      bbr(m, t, 1) = r.y0;
      bbr(m, t, 2) = r.x1;
      bbr(m, t, 3) = r.y1;
    }
  d["bboxes"] = bb;

  if (c.render_images) {
    const int hw = c.height * c.width;
    py::array_t<double> imgs({c.views, c.frames, c.height, c.width});
    for (int m = 0; m < c.views; ++m)
      for (int t = 0; t < c.frames; ++t)
        std::copy(s.images[m][t].samples().begin(),
                  s.images[m][t].samples().end(),
                  imgs.mutable_data() + (static_cast<py::ssize_t>(m) * c.frames + t) * hw);
    d["images"] = imgs;

    if (c.frames > 1) {
      py::array_t<double> fl({c.views, c.frames - 1, 2, c.height, c.width});
      for (int m = 0; m < c.views; ++m)
        for (int t = 0; t < c.frames - 1; ++t) {
          double* out = fl.mutable_data() +
                        (static_cast<py::ssize_t>(m) * (c.frames - 1) + t) * 2 * hw;
          std::copy(s.flows[m][t].u.samples().begin(),
                    s.flows[m][t].u.samples().end(), out);
          std::copy(s.flows[m][t].v.samples().begin(),
                    s.flows[m][t].v.samples().end(), out + hw);
        }
      d["flows"] = fl;
    }
  }
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() =
      "Differentiable tracking and triangulation supervision for landmark "
      "detectors: synthetic scenes, an inverse-compositional patch tracker, "
      "DLT triangulation with analytic Jacobians, reliability filters, "
      "evaluation metrics, and the experiment command line.";

  py::register_exception<srt::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<srt::DegenerateGeometry>(m, "DegenerateGeometry",
                                                  PyExc_ArithmeticError);
  py::register_exception<srt::PointAtInfinity>(m, "PointAtInfinity",
                                               PyExc_ArithmeticError);

  m.def(
      "generate_scene",
      [](int views, int frames, int height, int width, int landmarks,
         std::uint64_t seed, double camera_radius, double camera_spread,
         double focal, double rotation_per_frame, double translation_per_frame,
         double landmark_extent, double corruption_fraction,
         bool render_images) {
        srt::SceneConfig c;
        c.views = views;
        c.frames = frames;
        c.height = height;
        c.width = width;
        c.landmarks = landmarks;
        c.seed = seed;
        c.camera_radius = camera_radius;
        c.camera_spread = camera_spread;
        c.focal = focal;
        c.rotation_per_frame = rotation_per_frame;
        c.translation_per_frame = translation_per_frame;
        c.landmark_extent = landmark_extent;
        c.corruption_fraction = corruption_fraction;
        c.render_images = render_images;
        c.validate();
        return scene_to_dict(srt::generate_scene(c));
      },
      py::arg("views") = 4, py::arg("frames") = 8, py::arg("height") = 96,
      py::arg("width") = 96, py::arg("landmarks") = 5, py::arg("seed") = 1,
      py::arg("camera_radius") = 6.0, py::arg("camera_spread") = 0.35,
      py::arg("focal") = 210.0, py::arg("rotation_per_frame") = 0.02,
      py::arg("translation_per_frame") = 0.05, py::arg("landmark_extent") = 0.8,
      py::arg("corruption_fraction") = 0.0, py::arg("render_images") = true,
      "Rigidly moving textured plane seen by fixed cameras, with exact "
      "ground truth. Returns a dict of arrays: cameras (M,3,4), gt2d "
      "(M,T,K,2), gt3d (T,K,3), bboxes (M,T,4), and when rendered images "
      "(M,T,H,W) and flows (M,T-1,2,H,W).");

  m.def(
      "track_landmark",
      [](const DoubleArray& prev, const DoubleArray& curr,
         std::pair<double, double> start, int side, int max_iterations,
         double convergence_eps) {
        const srt::ScalarField pf = to_field(prev), cf = to_field(curr);
        const srt::TrackResult r = srt::track_landmark_lk(
            pf, cf, {start.first, start.second},
            make_spec(side, max_iterations, convergence_eps));
        py::dict d;
        d["point"] = py::make_tuple(r.point.x, r.point.y);
        d["converged"] = r.converged;
        d["iterations"] = r.iterations;
        d["valid"] = r.valid;
        return d;
      },
      py::arg("prev"), py::arg("curr"), py::arg("start"), py::arg("side") = 13,
      py::arg("max_iterations") = 20, py::arg("convergence_eps") = 1e-6,
      "Inverse-compositional patch track of one point from prev to curr.");

  m.def(
      "track_gradient",
      [](const DoubleArray& prev, const DoubleArray& curr,
         std::pair<double, double> start, int side, int max_iterations,
         double convergence_eps) {
        const srt::ScalarField pf = to_field(prev), cf = to_field(curr);
        const srt::Mat22 g = srt::track_gradient_lk(
            pf, cf, {start.first, start.second},
            make_spec(side, max_iterations, convergence_eps));
        py::array_t<double> a({2, 2});
        auto r = a.mutable_unchecked<2>();
        r(0, 0) = g.a00;
        r(0, 1) = g.a01;
        r(1, 0) = g.a10;
        r(1, 1) = g.a11;
        return a;
      },
      py::arg("prev"), py::arg("curr"), py::arg("start"), py::arg("side") = 13,
      py::arg("max_iterations") = 20, py::arg("convergence_eps") = 1e-6,
      "d(tracked point)/d(start point) of the converged track, (2, 2).");

  m.def(
      "dense_flow",
      [](const DoubleArray& prev, const DoubleArray& curr, int side,
         int stride) {
        const srt::ScalarField pf = to_field(prev), cf = to_field(curr);
        return from_flow(
            srt::dense_flow_lk(pf, cf, srt::PatchSpec::for_side(side), stride));
      },
      py::arg("prev"), py::arg("curr"), py::arg("side") = 13,
      py::arg("stride") = 4,
      "Per-pixel displacement field prev -> curr as a (2, H, W) array: "
      "patch tracks on a coarse grid, bilinearly upsampled.");

  m.def(
      "flow_interp",
      [](const DoubleArray& flow,
         std::pair<double, double> start) -> std::optional<std::pair<double, double>> {
        const auto p = srt::track_landmark_interp(to_flow(flow),
                                                  {start.first, start.second});
        if (!p) return std::nullopt;
        return std::make_pair(p->x, p->y);
      },
      py::arg("flow"), py::arg("start"),
      "start + bilinear flow at start; None when start is outside the grid.");

  m.def(
      "forward_backward_check",
      [](const DoubleArray& prev, const DoubleArray& curr,
         std::pair<double, double> prev_point, std::pair<double, double> tracked,
         std::pair<double, double> detected, double bbox_scale, int side,
         std::optional<std::array<double, 4>> bbox, double t_fb_frac,
         double t_d_frac) {
        const srt::ScalarField pf = to_field(prev), cf = to_field(curr);
        std::optional<srt::Rect> r;
        if (bbox) r = to_rect(*bbox);
        return srt::forward_backward_check(
            pf, cf, {prev_point.first, prev_point.second},
            {tracked.first, tracked.second}, {detected.first, detected.second},
            bbox_scale, srt::PatchSpec::for_side(side), r,
            {t_fb_frac, t_d_frac});
      },
      py::arg("prev"), py::arg("curr"), py::arg("prev_point"),
      py::arg("tracked"), py::arg("detected"), py::arg("bbox_scale"),
      py::arg("side") = 13, py::arg("bbox") = std::nullopt,
      py::arg("t_fb_frac") = 0.01, py::arg("t_d_frac") = 0.01,
      "Track reliability flag: backward-track consistency, agreement with "
      "the detection, and bounds checks. True means reliable.");

  m.def(
      "triangulate",
      [](const DoubleArray& cameras, const DoubleArray& points) {
        const srt::Landmark3D X = srt::triangulate_dlt(
            to_observations(cameras, points));
        py::array_t<double> a(std::vector<py::ssize_t>{3});
        auto r = a.mutable_unchecked<1>();
        r(0) = X.x;
        r(1) = X.y;
        r(2) = X.z;
        return a;
      },
      py::arg("cameras"), py::arg("points"),
      "Linear triangulation of one landmark from cameras (M, 3, 4) and "
      "observations (M, 2); returns (3,).");

  m.def(
      "triangulation_jacobian",
      [](const DoubleArray& cameras, const DoubleArray& points) {
        const auto jac =
            srt::triangulation_jacobian(to_observations(cameras, points));
        py::array_t<double> a(
            {static_cast<py::ssize_t>(jac.size()), py::ssize_t{3}, py::ssize_t{2}});
        auto r = a.mutable_unchecked<3>();
        for (size_t v = 0; v < jac.size(); ++v)
          for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 2; ++j) r(v, i, j) = jac[v].m[i][j];
        return a;
      },
      py::arg("cameras"), py::arg("points"),
      "d(triangulated point)/d(observation) per view, (M, 3, 2).");

  m.def(
      "reproject",
      [](const DoubleArray& cameras, const DoubleArray& points) {
        return from_points(srt::reproject_all(to_observations(cameras, points)));
      },
      py::arg("cameras"), py::arg("points"),
      "Triangulate, then project back into every view; (M, 2).");

  m.def(
      "soft_argmax",
      [](const DoubleArray& map, double temperature) {
        const srt::SoftArgmaxResult r =
            srt::soft_argmax(to_field(map), temperature);
        return py::make_tuple(py::make_tuple(r.point.x, r.point.y),
                              from_field(r.jac_x), from_field(r.jac_y));
      },
      py::arg("map"), py::arg("temperature") = 1.0,
      "Softmax-weighted coordinate expectation of a heatmap. Returns "
      "((x, y), d(x)/d(map), d(y)/d(map)).");

  m.def(
      "bilinear_sample",
      [](const DoubleArray& field,
         std::pair<double, double> point) -> std::optional<double> {
        return srt::bilinear_sample(to_field(field),
                                    {point.first, point.second});
      },
      py::arg("field"), py::arg("point"),
      "Bilinear interpolation; None outside the sampling domain.");

  m.def(
      "nme",
      [](const DoubleArray& pred, const DoubleArray& gt, double normalizer) {
        return srt::nme(to_points(pred), to_points(gt), normalizer);
      },
      py::arg("pred"), py::arg("gt"), py::arg("normalizer"),
      "Mean Euclidean landmark error divided by the normalizer.");

  m.def("auc_at", &srt::auc_at, py::arg("per_sample_nme"), py::arg("threshold"),
        py::arg("bins") = 1000,
        "Area under the cumulative error curve on [0, threshold], in [0, 1].");

  m.def("failure_rate", &srt::failure_rate, py::arg("per_sample_nme"),
        py::arg("threshold"), "Fraction of samples strictly above threshold.");

  py::class_<srt::Checkpoint>(m, "Detector",
                              "A trained detector loaded from a checkpoint.")
      .def_property_readonly(
          "landmarks",
          [](const srt::Checkpoint& c) { return c.params.config.landmarks; })
      .def_property_readonly(
          "input_size",
          [](const srt::Checkpoint& c) { return c.params.config.input_size; })
      .def_property_readonly("mode",
                             [](const srt::Checkpoint& c) {
                               return c.params.config.mode ==
                                              srt::DetectorMode::regression
                                          ? "regression"
                                          : "heatmap";
                             })
      .def_property_readonly(
          "epochs_trained",
          [](const srt::Checkpoint& c) { return c.next_epoch; })
      .def(
          "detect",
          [](const srt::Checkpoint& c, const DoubleArray& frame,
             std::array<double, 4> bbox) {
            return from_points(
                srt::detect_in_frame(c.params, to_field(frame), to_rect(bbox)));
          },
          py::arg("frame"), py::arg("bbox"),
          "Landmark coordinates in frame space for the region bbox = "
          "(x0, y0, x1, y1); returns (K, 2).");

  m.def(
      "load_checkpoint",
      [](const std::string& path) { return srt::load_checkpoint(path); },
      py::arg("path"), "Read a text checkpoint written by the train command.");

  m.def("run_cli", &srt::run_cli, py::arg("args"),
        "Run the experiment command line (synth/train/eval/ablate/flowcheck) "
        "with the given argument list; returns the exit code.");
}
