#include "srt/synth.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "srt/io.hpp"

namespace srt {

namespace {

namespace fs = std::filesystem;

std::string g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Texture lives in plane coordinates. Landmark blobs have a flat top
// (vanishing curvature at the peak keeps bilinear resampling error at the
// labels well below the 1e-3 consistency budget); background blobs and
// long waves give the tracker gradient structure everywhere.
struct PlaneTexture {
  struct Blob {
    double u, v, amp, inv2s2;
    bool flat_top;
  };
  struct Wave {
    double ku, kv, phase, amp;
  };
  double base = 0.45;
  std::vector<Blob> blobs;
  std::vector<Wave> waves;

  double operator()(double u, double v) const {
    double val = base;
    for (const Blob& b : blobs) {
      const double du = u - b.u;
      const double dv = v - b.v;
      const double s = (du * du + dv * dv) * b.inv2s2;
      val += b.amp * std::exp(b.flat_top ? -s * s : -s);
    }
    for (const Wave& w : waves)
      val += w.amp * std::sin(w.ku * u + w.kv * v + w.phase);
    return val;
  }
};

CameraMatrix make_camera(const Eigen::Vector3d& center, double focal, double cx,
                         double cy) {
  Eigen::Vector3d zc = (-center).normalized();  // toward the origin
  Eigen::Vector3d up(0.0, 1.0, 0.0);
  if (std::abs(zc.dot(up)) > 0.95) up = Eigen::Vector3d(1.0, 0.0, 0.0);
  Eigen::Vector3d xc = up.cross(zc).normalized();
  Eigen::Vector3d yc = zc.cross(xc);

  Eigen::Matrix3d rot;
  rot.row(0) = xc;
  rot.row(1) = yc;
  rot.row(2) = zc;
  Eigen::Matrix3d k = Eigen::Matrix3d::Identity();
  k(0, 0) = focal;
  k(1, 1) = focal;
  k(0, 2) = cx;
  k(1, 2) = cy;

  Eigen::Matrix<double, 3, 4> rt;
  rt.block<3, 3>(0, 0) = rot;
  rt.col(3) = -rot * center;
  Eigen::Matrix<double, 3, 4> p = k * rt;

  CameraMatrix cam;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) cam.m[r * 4 + c] = p(r, c);
  cam.validate();
  return cam;
}

Eigen::Matrix3d plane_homography(const CameraMatrix& cam,
                                 const Eigen::Matrix3d& rot,
                                 const Eigen::Vector3d& d) {
  Eigen::Matrix<double, 3, 4> p;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) p(r, c) = cam.at(r, c);
  Eigen::Matrix<double, 4, 3> plane;
  plane.col(0) << rot.col(0), 0.0;
  plane.col(1) << rot.col(1), 0.0;
  plane.col(2) << d, 1.0;
  return p * plane;
}

Point2 apply_homography(const Eigen::Matrix3d& h, double u, double v) {
  const Eigen::Vector3d q = h * Eigen::Vector3d(u, v, 1.0);
  if (std::abs(q(2)) <= 1e-14) throw DegenerateGeometry("homography sends point to infinity");
  return {q(0) / q(2), q(1) / q(2)};
}

Eigen::Matrix3d euler_rotation(double ax, double ay, double az) {
  return (Eigen::AngleAxisd(az, Eigen::Vector3d::UnitZ()) *
          Eigen::AngleAxisd(ay, Eigen::Vector3d::UnitY()) *
          Eigen::AngleAxisd(ax, Eigen::Vector3d::UnitX()))
      .toRotationMatrix();
}

// Shared crop machinery. The crop-from-frame map sends the anchor point to
// the crop center with rotation and scale applied about it.
AugmentResult make_crop(const ScalarField& image, Point2 anchor, int out_h,
                        int out_w, double rotate, double scale, double intensity,
                        const std::vector<Point2>& labels, bool require_content) {
  AffineTransform crop_from_frame =
      AffineTransform::similarity_about({0.0, 0.0}, rotate, scale);
  const double ccx = (out_w - 1) / 2.0;
  const double ccy = (out_h - 1) / 2.0;
  crop_from_frame.tx = ccx - (crop_from_frame.a00 * anchor.x + crop_from_frame.a01 * anchor.y);
  crop_from_frame.ty = ccy - (crop_from_frame.a10 * anchor.x + crop_from_frame.a11 * anchor.y);
  const AffineTransform frame_from_crop = crop_from_frame.inverse();

  AugmentResult res;
  res.crop_from_frame = crop_from_frame;
  res.image = ScalarField(out_h, out_w);

  int inside = 0;
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      const Point2 src = frame_from_crop.apply({static_cast<double>(x), static_cast<double>(y)});
      const auto sample = bilinear_sample(image, src);
      if (sample) {
        res.image.at(y, x) = intensity * *sample;
        ++inside;
      }
    }
  }
  if (require_content && inside == 0)
    throw ConfigError("augmented crop falls entirely outside the image");

  res.labels.reserve(labels.size());
  for (const Point2& l : labels) res.labels.push_back(crop_from_frame.apply(l));
  if (!res.labels.empty()) res.bbox = landmark_bbox(res.labels);
  return res;
}

void require_bbox_inside(const ScalarField& image, const Rect& bbox) {
  if (bbox.x0 < 0.0 || bbox.y0 < 0.0 || bbox.x1 > image.width() - 1.0 ||
      bbox.y1 > image.height() - 1.0 || bbox.width() <= 0.0 || bbox.height() <= 0.0)
    throw ConfigError("bounding box must lie inside the image");
}

}  // namespace

void SceneConfig::validate() const {
  if (views < 1 || frames < 1 || landmarks < 1)
    throw ConfigError("views, frames and landmarks must all be at least 1");
  if (height < 32 || width < 32)
    throw ConfigError("image dimensions must be at least 32");
  if (!(camera_radius > 1.0)) throw ConfigError("camera_radius must exceed 1");
  if (!(camera_spread >= 0.0 && camera_spread < 1.2))
    throw ConfigError("camera_spread must be in [0, 1.2)");
  if (!(focal > 0.0)) throw ConfigError("focal must be positive");
  if (rotation_per_frame < 0.0 || translation_per_frame < 0.0)
    throw ConfigError("motion bounds must be nonnegative");
  if (!(landmark_extent > 0.0)) throw ConfigError("landmark_extent must be positive");
  if (corruption_fraction < 0.0 || corruption_fraction > 1.0)
    throw ConfigError("corruption_fraction must be in [0, 1]");
}

Rect landmark_bbox(const std::vector<Point2>& points) {
  if (points.empty()) throw ConfigError("cannot build a box around zero landmarks");
  Rect tight{points[0].x, points[0].y, points[0].x, points[0].y};
  for (const Point2& p : points) {
    tight.x0 = std::min(tight.x0, p.x);
    tight.y0 = std::min(tight.y0, p.y);
    tight.x1 = std::max(tight.x1, p.x);
    tight.y1 = std::max(tight.y1, p.y);
  }
  Rect box = tight.expanded(0.25, 0.25);
  const double min_side = 16.0;
  if (box.width() < min_side) {
    const double grow = 0.5 * (min_side - box.width());
    box.x0 -= grow;
    box.x1 += grow;
  }
  if (box.height() < min_side) {
    const double grow = 0.5 * (min_side - box.height());
    box.y0 -= grow;
    box.y1 += grow;
  }
  return box;
}

Scene generate_scene(const SceneConfig& config) {
  config.validate();
  Scene scene;
  scene.config = config;

  Rng root(config.seed);
  Rng cam_rng = root.fork("cameras");
  Rng lm_rng = root.fork("landmarks");
  Rng tex_rng = root.fork("texture");
  Rng motion_rng = root.fork("motion");
  Rng corrupt_rng = root.fork("corruptions");

  const double cx = (config.width - 1) / 2.0;
  const double cy = (config.height - 1) / 2.0;

  // Cameras spread around the +z axis, looking at the origin. Azimuths are
  // staggered so any pair keeps a usable triangulation baseline.
  for (int m = 0; m < config.views; ++m) {
    const double azimuth =
        2.0 * M_PI * m / config.views + cam_rng.uniform(-0.3, 0.3);
    const double polar = config.camera_spread * (0.4 + 0.6 * cam_rng.uniform(0.0, 1.0));
    const Eigen::Vector3d dir(std::sin(polar) * std::cos(azimuth),
                              std::sin(polar) * std::sin(azimuth), std::cos(polar));
    scene.cameras.push_back(make_camera(config.camera_radius * dir, config.focal, cx, cy));
  }

  // Landmarks on the plane, kept apart from each other.
  std::vector<Point2> plane_landmarks;
  const double min_sep = 0.35 * config.landmark_extent;
  for (int k = 0; k < config.landmarks; ++k) {
    Point2 cand{0.0, 0.0};
    for (int attempt = 0; attempt < 100; ++attempt) {
      cand = {lm_rng.uniform(-config.landmark_extent, config.landmark_extent),
              lm_rng.uniform(-config.landmark_extent, config.landmark_extent)};
      bool ok = true;
      for (const Point2& p : plane_landmarks)
        if (norm2(cand - p) < min_sep) ok = false;
      if (ok) break;
    }
    plane_landmarks.push_back(cand);
  }

  PlaneTexture texture;
  for (int k = 0; k < config.landmarks; ++k) {
    const double amp =
        config.landmarks > 1 ? 0.45 + 0.3 * k / (config.landmarks - 1) : 0.6;
    const double sigma = 0.13 * (0.9 + 0.2 * tex_rng.uniform(0.0, 1.0));
    texture.blobs.push_back({plane_landmarks[k].x, plane_landmarks[k].y, amp,
                             1.0 / (2.0 * sigma * sigma), true});
  }
  for (int j = 0; j < 18; ++j) {
    const double sigma = tex_rng.uniform(0.4, 0.65);
    texture.blobs.push_back({tex_rng.uniform(-1.8, 1.8), tex_rng.uniform(-1.8, 1.8),
                             (tex_rng.uniform(0.0, 1.0) < 0.5 ? -1.0 : 1.0) *
                                 tex_rng.uniform(0.05, 0.1),
                             1.0 / (2.0 * sigma * sigma), false});
  }
  for (int j = 0; j < 3; ++j) {
    const double wavelength = tex_rng.uniform(2.0, 2.8);
    const double angle = tex_rng.uniform(0.0, 2.0 * M_PI);
    const double k = 2.0 * M_PI / wavelength;
    texture.waves.push_back(
        {k * std::cos(angle), k * std::sin(angle), tex_rng.uniform(0.0, 2.0 * M_PI), 0.07});
  }

  // Rigid plane motion: mean-reverting per-axis angles and translation, so
  // long sequences stay bounded. Every frame must keep all landmarks well
  // inside every view with limited per-frame pixel flow.
  const double margin = 12.0;
  const double max_flow_px = 6.0;
  std::vector<Eigen::Matrix3d> rotations;
  std::vector<Eigen::Vector3d> translations;
  std::vector<std::vector<Eigen::Matrix3d>> homographies(config.views);

  Eigen::Vector3d angles = Eigen::Vector3d::Zero();
  Eigen::Vector3d shift = Eigen::Vector3d::Zero();

  scene.gt2d.assign(config.views, {});
  scene.gt3d.clear();
  scene.bboxes.assign(config.views, {});

  for (int t = 0; t < config.frames; ++t) {
    bool placed = false;
    for (int attempt = 0; attempt < 40 && !placed; ++attempt) {
      Eigen::Vector3d cand_angles = angles;
      Eigen::Vector3d cand_shift = shift;
      if (t > 0) {
        for (int i = 0; i < 3; ++i) {
          cand_angles(i) = 0.85 * angles(i) +
                           motion_rng.uniform(-config.rotation_per_frame,
                                              config.rotation_per_frame);
          cand_shift(i) = 0.85 * shift(i) +
                          motion_rng.uniform(-config.translation_per_frame,
                                             config.translation_per_frame);
        }
      }
      const Eigen::Matrix3d rot = euler_rotation(cand_angles(0), cand_angles(1), cand_angles(2));

      std::vector<Eigen::Matrix3d> frame_h(config.views);
      std::vector<std::vector<Point2>> frame_pts(config.views);
      bool ok = true;
      for (int m = 0; m < config.views && ok; ++m) {
        frame_h[m] = plane_homography(scene.cameras[m], rot, cand_shift);
        for (const Point2& lp : plane_landmarks) {
          const Point2 q = apply_homography(frame_h[m], lp.x, lp.y);
          if (q.x < margin || q.x > config.width - 1 - margin || q.y < margin ||
              q.y > config.height - 1 - margin) {
            ok = false;
            break;
          }
          if (t > 0) {
            const Point2 prev = scene.gt2d[m][t - 1][frame_pts[m].size()];
            if (norm2(q - prev) > max_flow_px) {
              ok = false;
              break;
            }
          }
          frame_pts[m].push_back(q);
        }
      }
      if (!ok) {
        if (t == 0) break;  // frame 0 is deterministic, retries cannot help
        continue;
      }

      angles = cand_angles;
      shift = cand_shift;
      rotations.push_back(rot);
      translations.push_back(cand_shift);
      for (int m = 0; m < config.views; ++m) {
        homographies[m].push_back(frame_h[m]);
        scene.gt2d[m].push_back(std::move(frame_pts[m]));
      }
      placed = true;
    }
    if (!placed)
      throw ConfigError("scene motion is infeasible: landmarks leave the frame");

    std::vector<Landmark3D> pts3d;
    for (const Point2& lp : plane_landmarks) {
      const Eigen::Vector3d w =
          rotations[t] * Eigen::Vector3d(lp.x, lp.y, 0.0) + translations[t];
      pts3d.push_back({w(0), w(1), w(2)});
    }
    scene.gt3d.push_back(std::move(pts3d));

    // 2D ground truth is the camera projection of the 3D ground truth by
    // construction; recompute it through project() so the equality is exact.
    for (int m = 0; m < config.views; ++m) {
      for (int k = 0; k < config.landmarks; ++k)
        scene.gt2d[m][t][k] = project(scene.cameras[m], scene.gt3d[t][k]);
      scene.bboxes[m].push_back(landmark_bbox(scene.gt2d[m][t]));
    }
  }

  if (config.render_images) {
    scene.images.assign(config.views, {});
    scene.flows.assign(config.views, {});
    for (int m = 0; m < config.views; ++m) {
      for (int t = 0; t < config.frames; ++t) {
        const Eigen::Matrix3d inv = homographies[m][t].inverse();
        ScalarField img(config.height, config.width);
        for (int y = 0; y < config.height; ++y) {
          for (int x = 0; x < config.width; ++x) {
            const Point2 uv = apply_homography(inv, x, y);
            img.at(y, x) = texture(uv.x, uv.y);
          }
        }
        scene.images[m].push_back(std::move(img));

        if (t > 0) {
          const Eigen::Matrix3d prev_inv = homographies[m][t - 1].inverse();
          ScalarField u(config.height, config.width), v(config.height, config.width);
          for (int y = 0; y < config.height; ++y) {
            for (int x = 0; x < config.width; ++x) {
              const Point2 uvp = apply_homography(prev_inv, x, y);
              const Point2 q = apply_homography(homographies[m][t], uvp.x, uvp.y);
              u.at(y, x) = q.x - x;
              v.at(y, x) = q.y - y;
            }
          }
          scene.flows[m].emplace_back(std::move(u), std::move(v));
        }
      }
    }
  }

  // Occluders go into frame t only, so tracking from t-1 into t fails by
  // construction while labels and flow stay clean.
  for (int m = 0; m < config.views; ++m) {
    for (int t = 1; t < config.frames; ++t) {
      if (corrupt_rng.uniform(0.0, 1.0) >= config.corruption_fraction) continue;
      const int k = static_cast<int>(corrupt_rng.below(config.landmarks));
      scene.corruptions.push_back({m, t, k});
      if (!config.render_images) continue;
      ScalarField& img = scene.images[m][t];
      const Point2 at = scene.gt2d[m][t][k];
      const int half = 8;
      const int px = static_cast<int>(std::lround(at.x));
      const int py = static_cast<int>(std::lround(at.y));
      for (int dy = -half; dy <= half; ++dy) {
        for (int dx = -half; dx <= half; ++dx) {
          const int xx = px + dx, yy = py + dy;
          if (xx < 0 || xx >= config.width || yy < 0 || yy >= config.height) continue;
          img.at(yy, xx) = 0.9 + 0.015 * dx + 0.01 * dy;
        }
      }
    }
  }
  return scene;
}

void save_scene(const Scene& scene, const std::string& dir) {
  fs::create_directories(dir);
  const SceneConfig& c = scene.config;

  std::ostringstream manifest;
  manifest << "srt-scene 1\n";
  manifest << "views " << c.views << "\n";
  manifest << "frames " << c.frames << "\n";
  manifest << "height " << c.height << "\n";
  manifest << "width " << c.width << "\n";
  manifest << "landmarks " << c.landmarks << "\n";
  manifest << "seed " << c.seed << "\n";
  manifest << "camera_radius " << g17(c.camera_radius) << "\n";
  manifest << "camera_spread " << g17(c.camera_spread) << "\n";
  manifest << "focal " << g17(c.focal) << "\n";
  manifest << "rotation_per_frame " << g17(c.rotation_per_frame) << "\n";
  manifest << "translation_per_frame " << g17(c.translation_per_frame) << "\n";
  manifest << "landmark_extent " << g17(c.landmark_extent) << "\n";
  manifest << "corruption_fraction " << g17(c.corruption_fraction) << "\n";
  manifest << "render_images " << (c.render_images ? 1 : 0) << "\n";
  for (int m = 0; m < c.views; ++m) {
    manifest << "camera " << m;
    for (int i = 0; i < 12; ++i) manifest << " " << g17(scene.cameras[m].m[i]);
    manifest << "\n";
  }
  for (const Corruption& cor : scene.corruptions)
    manifest << "corrupt " << cor.view << " " << cor.frame << " " << cor.landmark << "\n";
  {
    std::ofstream out(fs::path(dir) / "manifest", std::ios::binary);
    if (!out) throw ConfigError("cannot write scene manifest");
    out << manifest.str();
  }

  std::ostringstream labels;
  for (int t = 0; t < c.frames; ++t)
    for (int m = 0; m < c.views; ++m)
      for (int k = 0; k < c.landmarks; ++k)
        labels << "2d " << t << " " << m << " " << k << " "
               << g17(scene.gt2d[m][t][k].x) << " " << g17(scene.gt2d[m][t][k].y)
               << "\n";
  for (int t = 0; t < c.frames; ++t)
    for (int k = 0; k < c.landmarks; ++k)
      labels << "3d " << t << " " << k << " " << g17(scene.gt3d[t][k].x) << " "
             << g17(scene.gt3d[t][k].y) << " " << g17(scene.gt3d[t][k].z) << "\n";
  {
    std::ofstream out(fs::path(dir) / "labels", std::ios::binary);
    if (!out) throw ConfigError("cannot write scene labels");
    out << labels.str();
  }

  if (c.render_images) {
    for (int m = 0; m < c.views; ++m) {
      const fs::path vdir = fs::path(dir) / ("view" + std::to_string(m));
      fs::create_directories(vdir);
      for (int t = 0; t < c.frames; ++t)
        save_pf2(vdir / ("frame" + std::to_string(t) + ".pf2"), scene.images[m][t]);
      for (int t = 1; t < c.frames; ++t)
        save_flow(vdir / ("flow" + std::to_string(t) + ".flow"), scene.flows[m][t - 1]);
    }
  }
}

Scene load_scene(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "manifest", std::ios::binary);
  if (!in) throw ConfigError("cannot open scene manifest in " + dir);

  Scene scene;
  SceneConfig& c = scene.config;
  std::string line;
  if (!std::getline(in, line) || line != "srt-scene 1")
    throw ConfigError("unrecognized scene manifest header");
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "views") ls >> c.views;
    else if (key == "frames") ls >> c.frames;
    else if (key == "height") ls >> c.height;
    else if (key == "width") ls >> c.width;
    else if (key == "landmarks") ls >> c.landmarks;
    else if (key == "seed") ls >> c.seed;
    else if (key == "camera_radius") ls >> c.camera_radius;
    else if (key == "camera_spread") ls >> c.camera_spread;
    else if (key == "focal") ls >> c.focal;
    else if (key == "rotation_per_frame") ls >> c.rotation_per_frame;
    else if (key == "translation_per_frame") ls >> c.translation_per_frame;
    else if (key == "landmark_extent") ls >> c.landmark_extent;
    else if (key == "corruption_fraction") ls >> c.corruption_fraction;
    else if (key == "render_images") {
      int v = 0;
      ls >> v;
      c.render_images = v != 0;
    } else if (key == "camera") {
      int m = 0;
      ls >> m;
      CameraMatrix cam;
      for (int i = 0; i < 12; ++i) ls >> cam.m[i];
      if (!ls) throw ConfigError("truncated camera record");
      cam.validate();
      scene.cameras.push_back(cam);
    } else if (key == "corrupt") {
      Corruption cor;
      ls >> cor.view >> cor.frame >> cor.landmark;
      scene.corruptions.push_back(cor);
    } else if (!key.empty()) {
      throw ConfigError("unknown manifest key: " + key);
    }
  }
  c.validate();
  if (scene.cameras.size() != static_cast<size_t>(c.views))
    throw ConfigError("camera count does not match the view count");

  scene.gt2d.assign(c.views, std::vector<std::vector<Point2>>(
                                 c.frames, std::vector<Point2>(c.landmarks)));
  scene.gt3d.assign(c.frames, std::vector<Landmark3D>(c.landmarks));

  std::ifstream lin(fs::path(dir) / "labels", std::ios::binary);
  if (!lin) throw ConfigError("cannot open scene labels in " + dir);
  size_t n2 = 0, n3 = 0;
  while (std::getline(lin, line)) {
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "2d") {
      int t, m, k;
      double x, y;
      ls >> t >> m >> k >> x >> y;
      if (!ls || t < 0 || t >= c.frames || m < 0 || m >= c.views || k < 0 ||
          k >= c.landmarks)
        throw ConfigError("bad 2d label record");
      scene.gt2d[m][t][k] = {x, y};
      ++n2;
    } else if (kind == "3d") {
      int t, k;
      double x, y, z;
      ls >> t >> k >> x >> y >> z;
      if (!ls || t < 0 || t >= c.frames || k < 0 || k >= c.landmarks)
        throw ConfigError("bad 3d label record");
      scene.gt3d[t][k] = {x, y, z};
      ++n3;
    } else if (!kind.empty()) {
      throw ConfigError("unknown label record: " + kind);
    }
  }
  if (n2 != static_cast<size_t>(c.frames) * c.views * c.landmarks ||
      n3 != static_cast<size_t>(c.frames) * c.landmarks)
    throw ConfigError("label file is incomplete");

  scene.bboxes.assign(c.views, {});
  for (int m = 0; m < c.views; ++m)
    for (int t = 0; t < c.frames; ++t)
      scene.bboxes[m].push_back(landmark_bbox(scene.gt2d[m][t]));

  if (c.render_images) {
    scene.images.assign(c.views, {});
    scene.flows.assign(c.views, {});
    for (int m = 0; m < c.views; ++m) {
      const fs::path vdir = fs::path(dir) / ("view" + std::to_string(m));
      for (int t = 0; t < c.frames; ++t) {
        ScalarField img = load_pf2(vdir / ("frame" + std::to_string(t) + ".pf2"));
        if (img.height() != c.height || img.width() != c.width)
          throw ConfigError("frame raster has unexpected dimensions");
        scene.images[m].push_back(std::move(img));
      }
      for (int t = 1; t < c.frames; ++t)
        scene.flows[m].push_back(
            load_flow(vdir / ("flow" + std::to_string(t) + ".flow")));
    }
  }
  return scene;
}

std::vector<std::vector<std::vector<Point2>>> perturb_annotations(
    const std::vector<std::vector<std::vector<Point2>>>& labels, double std_px,
    Rng& rng) {
  if (std_px < 0.0) throw ConfigError("noise std must be nonnegative");
  if (std_px == 0.0) return labels;
  auto noisy = labels;
  for (auto& view : noisy)
    for (auto& frame : view)
      for (Point2& p : frame) {
        p.x += std_px * rng.normal();
        p.y += std_px * rng.normal();
      }
  return noisy;
}

AugmentResult augment_with(const ScalarField& image, const Rect& bbox,
                           const std::vector<Point2>& labels,
                           const AugmentDraws& draws) {
  require_bbox_inside(image, bbox);
  if (!(draws.resize > 0.0)) throw ConfigError("resize factor must be positive");
  const Rect box = bbox.expanded(0.2, 0.2);
  const int out_w = static_cast<int>(std::lround(box.width())) + 1;
  const int out_h = static_cast<int>(std::lround(box.height())) + 1;
  const Point2 anchor{box.center().x + draws.translate_x_frac * box.width(),
                      box.center().y + draws.translate_y_frac * box.height()};
  return make_crop(image, anchor, out_h, out_w, draws.rotate_radians, draws.resize,
                   draws.intensity, labels, true);
}

AugmentResult augment(const ScalarField& image, const Rect& bbox,
                      const std::vector<Point2>& labels, Rng& rng) {
  AugmentDraws draws;
  if (rng.uniform(0.0, 1.0) < 0.5) draws.resize = rng.uniform(0.9, 1.1);
  draws.translate_x_frac = rng.uniform(-0.1, 0.1);
  draws.translate_y_frac = rng.uniform(-0.1, 0.1);
  draws.rotate_radians = rng.uniform(-40.0, 40.0) * M_PI / 180.0;
  draws.intensity = rng.uniform(0.6, 1.4);
  return augment_with(image, bbox, labels, draws);
}

AugmentResult crop_for_eval(const ScalarField& image, const Rect& bbox,
                            const std::vector<Point2>& labels) {
  return augment_with(image, bbox, labels, AugmentDraws{});
}

EltPair elt_pair_with(const ScalarField& image, const Rect& bbox,
                      const EltDraws& a, const EltDraws& b) {
  require_bbox_inside(image, bbox);
  const int out_w = static_cast<int>(std::lround(bbox.width())) + 1;
  const int out_h = static_cast<int>(std::lround(bbox.height())) + 1;

  auto branch = [&](const EltDraws& d, ScalarField& out_img, AffineTransform& theta) {
    if (!(d.scale > 0.0)) throw ConfigError("scale draw must be positive");
    AugmentResult crop = make_crop(image,
                                   {bbox.center().x + d.translate_x_frac * bbox.width(),
                                    bbox.center().y + d.translate_y_frac * bbox.height()},
                                   out_h, out_w, d.rotate_radians, d.scale, 1.0, {}, false);
    out_img = std::move(crop.image);
    theta = crop.crop_from_frame;
  };

  EltPair pair;
  branch(a, pair.image_a, pair.theta_a);
  branch(b, pair.image_b, pair.theta_b);
  return pair;
}

EltPair elt_transform_pair(const ScalarField& image, const Rect& bbox, Rng& rng) {
  auto draw = [&rng]() {
    EltDraws d;
    d.scale = rng.uniform(0.8, 1.2);
    d.translate_x_frac = rng.uniform(-0.1, 0.1);
    d.translate_y_frac = rng.uniform(-0.1, 0.1);
    d.rotate_radians = rng.uniform(-30.0, 30.0) * M_PI / 180.0;
    return d;
  };
  const EltDraws a = draw();
  const EltDraws b = draw();
  return elt_pair_with(image, bbox, a, b);
}

ResizeResult resize_to(const ScalarField& image, int height, int width) {
  if (height < 2 || width < 2) throw ConfigError("resize target must be at least 2x2");
  if (image.height() < 2 || image.width() < 2)
    throw ConfigError("resize source must be at least 2x2");
  const double sx = (width - 1.0) / (image.width() - 1.0);
  const double sy = (height - 1.0) / (image.height() - 1.0);

  ResizeResult res{ScalarField(height, width), {sx, 0.0, 0.0, sy, 0.0, 0.0}};
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const auto sample = bilinear_sample(image, {x / sx, y / sy});
      res.image.at(y, x) = sample ? *sample : 0.0;
    }
  }
  return res;
}

}  // namespace srt
