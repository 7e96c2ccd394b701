#pragma once

#include <optional>
#include <string>
#include <vector>

#include "srt/metrics.hpp"
#include "srt/synth.hpp"
#include "srt/train.hpp"

namespace srt {

enum class RunMode { baseline, sbr, sbt, srt };

RunMode parse_run_mode(const std::string& name);
std::string run_mode_name(RunMode mode);

/// Which loss weights a mode leaves enabled.
LossWeights effective_weights(RunMode mode, const LossWeights& configured);

/// Labeled-pool construction knobs.
struct DataConfig {
  double fraction = 1.0;   // of labeled frames, (0, 1]
  double noise_std = 0.0;  // annotation noise, pixels
  int copies = 1;          // augmented crops per kept frame

  void validate() const;
};

struct MetricConfig {
  double auc_threshold = 0.08;
  int auc_bins = 1000;
  double failure_threshold = 0.1;
  int p_error_probes = 6;  // frames probed per evaluation
  int p_error_pairs = 8;   // transform pairs per probed frame

  void validate() const;
};

struct AblateConfig {
  std::vector<double> noise_stds = {0.0};
  std::vector<double> data_fractions = {1.0};
  std::vector<std::uint64_t> seeds = {1, 2, 3};

  void validate() const;
};

struct FlowcheckConfig {
  int n_points = 500;

  void validate() const;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  RunMode mode = RunMode::srt;
  std::string out_dir = "out";
  std::string scene_root = "scenes";

  // Sections are optional in the file; absent scenes are simply not generated.
  std::optional<SceneConfig> labeled_scene;
  std::optional<SceneConfig> video_scene;
  std::optional<SceneConfig> test_scene;

  TrainConfig train;
  bool train_probe = false;
  bool train_resume = false;
  DataConfig data;
  MetricConfig metrics;
  AblateConfig ablate;
  FlowcheckConfig flowcheck;

  bool eval_oracle = false;   // evaluate a ground-truth passthrough instead
  std::string checkpoint;     // empty: <out_dir>/checkpoint.ckpt

  std::string config_hash;    // hex digest of the resolved file, set on load

  std::string checkpoint_path() const;
  std::string labeled_dir() const;
  std::string video_dir() const;
  std::string test_dir() const;
};

/// Command-line overrides applied before hashing.
struct CliOverrides {
  std::optional<std::string> out_dir;
  std::optional<std::string> scene_root;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
};

ExperimentConfig load_experiment_config(const std::string& path,
                                        const CliOverrides& overrides);

/// 16-hex-digit FNV-1a of the canonical (key-sorted) config serialization.
std::string experiment_config_digest(const std::string& canonical_text);

/// Labeled crops from a scene: optional annotation noise, a deterministic
/// frame subset of the requested fraction, `copies` augmented crops each.
std::vector<LabeledSample> build_labeled_pool(const Scene& scene,
                                              const DataConfig& data,
                                              int input_size,
                                              std::uint64_t run_seed);

struct MetricRow {
  std::string metric;
  double value = 0.0;
  std::string normalizer;
};

/// NME / AUC / failure / P-error of a checkpoint on every frame of a scene.
std::vector<MetricRow> evaluate_detector(const DetectorParams& params,
                                         const Scene& test,
                                         const MetricConfig& metrics,
                                         std::uint64_t seed);

/// Same report for the exact ground-truth passthrough (a test double).
std::vector<MetricRow> evaluate_oracle(const Scene& test,
                                       const MetricConfig& metrics,
                                       std::uint64_t seed);

/// One training run as the CLI performs it: labeled pool per `data`,
/// mode-filtered weights, video attached when present on disk.
TrainResult run_training(const ExperimentConfig& cfg, std::uint64_t run_seed,
                         const DataConfig& data);

struct AblateRow {
  double noise_std = 0.0;
  double data_fraction = 1.0;
  std::string seed;        // a number, or "mean"
  std::string metric;      // empty on failure
  double value = 0.0;
  std::string normalizer;
  std::string status = "ok";
  std::string message;
};

std::vector<AblateRow> run_ablation(const ExperimentConfig& cfg);

struct FlowcheckRow {
  std::string kind;  // "pair" or "overall"
  int view = 0;
  int frame = 0;     // pair endpoint t; 0 for "overall"
  int points = 0;
  int skipped = 0;
  double mean_px = 0.0;
  double max_px = 0.0;
};

/// Discrepancy between interpolating a precomputed dense flow field and
/// running the tracker directly at sampled sub-pixel points.
std::vector<FlowcheckRow> run_flowcheck(const Scene& scene,
                                        const FlowcheckConfig& fc,
                                        const PatchSpec& patch,
                                        std::uint64_t seed);

/// Full command-line entry point; returns the process exit code
/// (0 success, 1 internal error, 2 user/config error).
int run_cli(const std::vector<std::string>& args);

}  // namespace srt
