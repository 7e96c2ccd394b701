#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <vector>

#include "srt/camera.hpp"
#include "srt/detector.hpp"
#include "srt/field.hpp"
#include "srt/lk.hpp"
#include "srt/losses.hpp"
#include "srt/metrics.hpp"
#include "srt/rng.hpp"
#include "srt/synth.hpp"

namespace srt {

/// One labeled crop, already at detector input resolution.
struct LabeledSample {
  ScalarField image;
  std::vector<Point2> gt;  // input pixel coordinates
};

/// Unlabeled calibrated multi-view video at frame resolution.
struct VideoData {
  std::vector<CameraMatrix> cameras;             // per view
  std::vector<std::vector<ScalarField>> frames;  // [view][time]
  std::vector<std::vector<Rect>> bboxes;         // [view][time]

  int views() const { return static_cast<int>(cameras.size()); }
  int frame_count() const {
    return frames.empty() ? 0 : static_cast<int>(frames[0].size());
  }
  void validate() const;
};

/// Frame/bbox pair the trainer probes once per epoch for the precision
/// metric; absent probe logs NaN.
struct EvalProbe {
  ScalarField frame;
  Rect bbox;
  int n_pairs = 16;
};

struct TrainDataset {
  std::vector<LabeledSample> labeled;
  std::optional<VideoData> video;
  std::optional<EvalProbe> probe;
};

/// Run of consecutive frames from one view, tracked pairwise.
struct TrackRun {
  int view = 0;
  int start = 0;
  int length = 3;
};

/// Views of one timestamp triangulated together; views[0] is the anchor
/// the sampler drew, the rest are distinct companions.
struct MultiviewItem {
  int frame = 0;
  std::array<int, 4> views{};
};

struct BatchConfig {
  int n_labeled = 32;
  int n_triplets = 32;
  int n_quadruplets = 16;
};

struct Batch {
  std::vector<size_t> labeled;
  std::vector<TrackRun> runs;
  std::vector<MultiviewItem> quads;
};

/// Without-replacement pass over [0, n): a shuffled order consumed by
/// next(); exhausting the pool reshuffles and starts a new pass.
class EpochSampler {
 public:
  EpochSampler() = default;
  explicit EpochSampler(size_t n);
  size_t next(Rng& rng);
  size_t size() const { return order_.size(); }

 private:
  std::vector<size_t> order_;
  size_t cursor_ = 0;
};

/// All (view, start) runs of the given length the video supports.
std::vector<TrackRun> enumerate_runs(const VideoData& video, int length = 3);

/// View of a synthetic scene as unlabeled video (images must be rendered).
VideoData video_from_scene(const Scene& scene);

/// Draws the requested sample counts. Labeled indices come first, then run
/// indices, then quadruplets (timestamp via the frame sampler, anchor view
/// uniform, companions without replacement from the rest).
Batch assemble_batch(const std::vector<LabeledSample>& labeled_pool,
                     const std::vector<TrackRun>& video_pool,
                     const VideoData* multiview_pool, const BatchConfig& config,
                     EpochSampler& labeled_state, EpochSampler& run_state,
                     EpochSampler& frame_state, Rng& rng);

struct TrainConfig {
  DetectorConfig detector;
  AdamConfig adam;
  int stage1_epochs = 0;
  int stage2_epochs = 0;
  int steps_per_epoch = 0;  // 0: one pass over the labeled pool
  BatchConfig batch;
  LossWeights weights;
  Thresholds thresholds;
  PatchSpec patch;
  int run_length = 3;
  std::uint64_t seed = 0;
  /// Stops backprop through the tracker jacobian into the source-frame
  /// detection (ablation knob); every other path stays live.
  bool stop_tracked_gradient = false;

  void validate() const;
};

/// Loss, diagnostics, and the parameter gradient for one batch. Weights are
/// passed explicitly because stage 1 forces them to zero.
struct StepStats {
  double loss = 0.0;
  double l_det = 0.0, l_sbr = 0.0, l_sbt = 0.0;  // means per item of each kind
  long beta_sbr_zero = 0, beta_sbr_total = 0;
  long beta_sbt_zero = 0, beta_sbt_total = 0;
  double nme_sum = 0.0;
  long nme_count = 0;
  std::vector<double> grad;
};

StepStats evaluate_batch(const DetectorParams& params, const TrainDataset& data,
                         const Batch& batch, const TrainConfig& config,
                         const LossWeights& weights);

struct EpochMetrics {
  int epoch = 0;
  double l_det = 0.0, l_sbr = 0.0, l_sbt = 0.0;
  double beta_sbr_zero_frac = 0.0, beta_sbt_zero_frac = 0.0;
  double nme = 0.0;
  double p_error = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
  DetectorParams params;
  AdamState adam;
  std::vector<EpochMetrics> log;
};

/// Stage 1 (detection only) for stage1_epochs, then stage 2 (joint) for
/// stage2_epochs. Bit-reproducible given (seed, config, dataset).
TrainResult train(const TrainDataset& data, const TrainConfig& config);

/// Continue from a known state; epochs [start_epoch, total) run exactly as
/// the corresponding epochs of a fresh train() would.
TrainResult resume_training(const TrainDataset& data, const TrainConfig& config,
                            const DetectorParams& params, const AdamState& adam,
                            int start_epoch);

/// Detect in a full frame: identity crop around the bbox, resize to the
/// detector input, forward, map coordinates back to frame space.
std::vector<Point2> detect_in_frame(const DetectorParams& params,
                                    const ScalarField& frame, const Rect& bbox);

/// Crop around the bbox (random augmentation draws when rng is non-null,
/// identity crop otherwise), resize to the detector input, map the labels.
LabeledSample make_labeled_sample(const ScalarField& frame, const Rect& bbox,
                                  const std::vector<Point2>& labels,
                                  int input_size, Rng* rng);

/// Adapter for the precision metric: detections in crop coordinates.
DetectorFn crop_detector_fn(const DetectorParams& params);

struct Checkpoint {
  DetectorParams params;
  AdamState adam;
  std::uint64_t seed = 0;
  int next_epoch = 0;
};

/// Text checkpoint: architecture header plus 17-significant-digit decimals
/// for parameters and optimizer state; round trips bit-exactly.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// One JSON object per epoch line.
void write_metrics_jsonl(const std::filesystem::path& path,
                         const std::vector<EpochMetrics>& log);
std::vector<EpochMetrics> read_metrics_jsonl(const std::filesystem::path& path);

}  // namespace srt
