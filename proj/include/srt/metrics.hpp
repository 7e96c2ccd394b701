#pragma once

#include <functional>
#include <vector>

#include "srt/common.hpp"
#include "srt/field.hpp"
#include "srt/rng.hpp"
#include "srt/synth.hpp"

namespace srt {

/// Mean Euclidean landmark error divided by the normalizer (this benchmark
/// uses sqrt of the bounding-box area; recorded alongside every report).
double nme(const std::vector<Point2>& pred, const std::vector<Point2>& gt,
           double normalizer);

/// Area under the cumulative error distribution on [0, threshold],
/// normalized to [0, 1], trapezoidal over `bins` evenly spaced thresholds.
double auc_at(const std::vector<double>& per_sample_nme, double threshold,
              int bins = 1000);

/// Fraction of samples strictly above the threshold.
double failure_rate(const std::vector<double>& per_sample_nme, double threshold);

/// Detector under test: crop image plus the crop-from-frame transform that
/// produced it. Real detectors ignore the transform; oracles in tests may
/// use it to produce exactly equivariant outputs.
using DetectorFn = std::function<std::vector<Point2>(const ScalarField&,
                                                     const AffineTransform&)>;

/// Precision proxy: detections on two random crops of the same region are
/// mapped back to frame coordinates and compared, normalized by
/// eta = sqrt(bbox area), averaged over pairs.
double p_error(const DetectorFn& detector, const ScalarField& image,
               const Rect& bbox, int n_pairs, Rng& rng);

/// Same measurement on caller-supplied transform pairs.
double p_error_on_pairs(const DetectorFn& detector,
                        const std::vector<EltPair>& pairs, double eta);

}  // namespace srt
