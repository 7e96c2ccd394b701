#include "srt/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace srt {

double nme(const std::vector<Point2>& pred, const std::vector<Point2>& gt,
           double normalizer) {
  if (pred.size() != gt.size() || pred.empty())
    throw ConfigError("prediction and ground truth must have the same nonzero size");
  if (!(normalizer > 0.0)) throw ConfigError("normalizer must be positive");
  double total = 0.0;
  for (size_t k = 0; k < pred.size(); ++k) total += norm2(pred[k] - gt[k]);
  return total / (normalizer * static_cast<double>(pred.size()));
}

double auc_at(const std::vector<double>& per_sample_nme, double threshold,
              int bins) {
  if (per_sample_nme.empty()) throw ConfigError("cannot compute AUC of no samples");
  if (!(threshold > 0.0)) throw ConfigError("threshold must be positive");
  if (bins < 2) throw ConfigError("AUC needs at least 2 bins");
  for (double e : per_sample_nme)
    if (!(e >= 0.0)) throw ConfigError("errors must be nonnegative");

  const double n = static_cast<double>(per_sample_nme.size());
  auto ced = [&](double tau) {
    size_t count = 0;
    for (double e : per_sample_nme)
      if (e <= tau) ++count;
    return static_cast<double>(count) / n;
  };

  double area = 0.0;
  double prev = ced(0.0);
  for (int i = 1; i < bins; ++i) {
    const double curr = ced(threshold * i / (bins - 1));
    area += 0.5 * (prev + curr);
    prev = curr;
  }
  return area / (bins - 1);
}

double failure_rate(const std::vector<double>& per_sample_nme, double threshold) {
  if (per_sample_nme.empty())
    throw ConfigError("cannot compute a failure rate of no samples");
  size_t failures = 0;
  for (double e : per_sample_nme)
    if (e > threshold) ++failures;
  return static_cast<double>(failures) / static_cast<double>(per_sample_nme.size());
}

double p_error_on_pairs(const DetectorFn& detector,
                        const std::vector<EltPair>& pairs, double eta) {
  if (pairs.empty()) throw ConfigError("need at least one transform pair");
  if (!(eta > 0.0)) throw ConfigError("eta must be positive");

  double total = 0.0;
  for (const EltPair& pair : pairs) {
    const std::vector<Point2> la = detector(pair.image_a, pair.theta_a);
    const std::vector<Point2> lb = detector(pair.image_b, pair.theta_b);
    if (la.size() != lb.size() || la.empty())
      throw ConfigError("detector returned mismatched landmark counts");
    const AffineTransform inv_a = pair.theta_a.inverse();
    const AffineTransform inv_b = pair.theta_b.inverse();
    double pair_err = 0.0;
    for (size_t k = 0; k < la.size(); ++k)
      pair_err += norm2(inv_a.apply(la[k]) - inv_b.apply(lb[k]));
    total += pair_err / (eta * static_cast<double>(la.size()));
  }
  return total / static_cast<double>(pairs.size());
}

double p_error(const DetectorFn& detector, const ScalarField& image,
               const Rect& bbox, int n_pairs, Rng& rng) {
  if (n_pairs < 1) throw ConfigError("need at least one transform pair");
  std::vector<EltPair> pairs;
  pairs.reserve(n_pairs);
  for (int i = 0; i < n_pairs; ++i)
    pairs.push_back(elt_transform_pair(image, bbox, rng));
  return p_error_on_pairs(detector, pairs, std::sqrt(bbox.area()));
}

}  // namespace srt
