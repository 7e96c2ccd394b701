#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "srt/affine.hpp"
#include "srt/camera.hpp"
#include "srt/common.hpp"
#include "srt/field.hpp"
#include "srt/lk.hpp"
#include "srt/rng.hpp"

namespace srt {

/// Rigidly moving textured plane observed by M fixed calibrated cameras.
/// Texture is painted in plane coordinates (landmark-anchored blobs plus
/// static background structure), so the per-frame plane homographies give
/// exact dense flow and exact 2D/3D landmark ground truth.
struct SceneConfig {
  int views = 4;
  int frames = 8;
  int height = 96;
  int width = 96;
  int landmarks = 5;
  std::uint64_t seed = 1;

  double camera_radius = 6.0;
  double camera_spread = 0.35;      // radians around the reference direction
  double focal = 210.0;             // pixels
  double rotation_per_frame = 0.02; // radians, per-axis bound
  double translation_per_frame = 0.05;  // world units, per-axis bound
  double landmark_extent = 0.8;     // plane units

  double corruption_fraction = 0.0; // chance a view-frame gets an occluder
  bool render_images = true;        // labels-only scenes skip rasters

  void validate() const;
};

struct Corruption {
  int view = 0;
  int frame = 0;
  int landmark = 0;
};

struct Scene {
  SceneConfig config;
  std::vector<CameraMatrix> cameras;                    // [m]
  std::vector<std::vector<ScalarField>> images;         // [m][t]
  std::vector<std::vector<FlowField>> flows;            // [m][t-1], t-1 -> t
  std::vector<std::vector<std::vector<Point2>>> gt2d;   // [m][t][k]
  std::vector<std::vector<Landmark3D>> gt3d;            // [t][k]
  std::vector<std::vector<Rect>> bboxes;                // [m][t]
  std::vector<Corruption> corruptions;
};

Scene generate_scene(const SceneConfig& config);

/// Tight box around the landmarks grown by 25%, floored to a minimal size.
Rect landmark_bbox(const std::vector<Point2>& points);

void save_scene(const Scene& scene, const std::string& dir);
Scene load_scene(const std::string& dir);

/// Adds i.i.d. Gaussian noise (std in pixels) to every coordinate.
std::vector<std::vector<std::vector<Point2>>> perturb_annotations(
    const std::vector<std::vector<std::vector<Point2>>>& labels, double std_px,
    Rng& rng);

struct AugmentResult {
  ScalarField image;   // cropped region, variable size
  Rect bbox;           // landmark box in crop coordinates
  std::vector<Point2> labels;
  AffineTransform crop_from_frame;
};

struct AugmentDraws {
  double resize = 1.0;
  double translate_x_frac = 0.0;  // of the expanded box width
  double translate_y_frac = 0.0;
  double rotate_radians = 0.0;
  double intensity = 1.0;
};

/// Training-time crop pipeline: expand the box 20%, optionally resize
/// [90%, 110%] (p = 0.5), translate up to 10%, rotate up to 40 degrees,
/// crop, then scale intensities by [0.6, 1.4].
AugmentResult augment(const ScalarField& image, const Rect& bbox,
                      const std::vector<Point2>& labels, Rng& rng);

/// Same pipeline with the random draws supplied by the caller.
AugmentResult augment_with(const ScalarField& image, const Rect& bbox,
                           const std::vector<Point2>& labels,
                           const AugmentDraws& draws);

/// Deterministic evaluation crop: the 20%-expanded box only.
AugmentResult crop_for_eval(const ScalarField& image, const Rect& bbox,
                            const std::vector<Point2>& labels);

struct EltPair {
  ScalarField image_a;
  AffineTransform theta_a;  // crop-from-frame
  ScalarField image_b;
  AffineTransform theta_b;
};

/// Two independent random crops of the same region: scale [0.8, 1.2],
/// translate up to 10%, rotate up to 30 degrees.
EltPair elt_transform_pair(const ScalarField& image, const Rect& bbox, Rng& rng);

struct EltDraws {
  double scale = 1.0;
  double translate_x_frac = 0.0;
  double translate_y_frac = 0.0;
  double rotate_radians = 0.0;
};

/// Same construction with caller-supplied draws for both branches.
EltPair elt_pair_with(const ScalarField& image, const Rect& bbox,
                      const EltDraws& a, const EltDraws& b);

/// Bilinear resize with the affine relating output to input coordinates.
struct ResizeResult {
  ScalarField image;
  AffineTransform out_from_in;
};
ResizeResult resize_to(const ScalarField& image, int height, int width);

}  // namespace srt
