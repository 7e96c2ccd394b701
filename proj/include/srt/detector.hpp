#pragma once

#include <cstddef>
#include <vector>

#include "srt/field.hpp"
#include "srt/losses.hpp"
#include "srt/rng.hpp"

namespace srt {

enum class DetectorMode { regression, heatmap };

/// Two 3x3 conv layers (stride 2 then 1, tanh) shared by both heads.
/// The regression head is a fully connected layer to 2K coordinates; the
/// heatmap head is a 1x1 conv to K maps with an exponential output unit,
/// at half the input resolution.
struct DetectorConfig {
  int input_size = 32;
  int landmarks = 5;
  int conv1_channels = 8;
  int conv2_channels = 16;
  DetectorMode mode = DetectorMode::regression;
  double temperature = 1.0;  // soft-argmax
  double sigma_gt = 1.5;     // ground-truth blob std, heatmap pixels

  int feature_size() const { return input_size / 2; }
  void validate() const;

  // Flat parameter layout: [conv1_w, conv1_b, conv2_w, conv2_b, head_w, head_b].
  size_t conv1_w_count() const { return static_cast<size_t>(conv1_channels) * 9; }
  size_t conv2_w_count() const {
    return static_cast<size_t>(conv2_channels) * conv1_channels * 9;
  }
  size_t head_inputs() const {
    return static_cast<size_t>(conv2_channels) * feature_size() * feature_size();
  }
  size_t head_w_count() const {
    return mode == DetectorMode::regression
               ? static_cast<size_t>(2 * landmarks) * head_inputs()
               : static_cast<size_t>(landmarks) * conv2_channels;
  }
  size_t head_b_count() const {
    return mode == DetectorMode::regression ? 2 * static_cast<size_t>(landmarks)
                                            : static_cast<size_t>(landmarks);
  }
  size_t conv1_w_off() const { return 0; }
  size_t conv1_b_off() const { return conv1_w_count(); }
  size_t conv2_w_off() const { return conv1_b_off() + conv1_channels; }
  size_t conv2_b_off() const { return conv2_w_off() + conv2_w_count(); }
  size_t head_w_off() const { return conv2_b_off() + conv2_channels; }
  size_t head_b_off() const { return head_w_off() + head_w_count(); }
  size_t param_count() const { return head_b_off() + head_b_count(); }
};

struct DetectorParams {
  DetectorConfig config;
  std::vector<double> values;

  /// Small random conv weights, zero biases; the regression head bias
  /// starts at the crop center so early training is stable.
  static DetectorParams init(const DetectorConfig& config, Rng& rng);
};

/// Activations kept for the backward pass.
struct ForwardCache {
  std::vector<double> input;  // input_size^2
  std::vector<double> z1;     // conv1 tanh output, c1 x f x f
  std::vector<double> z2;     // conv2 tanh output, c2 x f x f
  std::vector<double> maps;   // heatmap mode only: exp outputs, K x f x f
};

struct RegressionForward {
  LandmarkSet coords;  // crop pixel units
  ForwardCache cache;
};

struct HeatmapForward {
  HeatmapSet maps;  // half-resolution heatmap units
  ForwardCache cache;
};

RegressionForward forward_regression(const ScalarField& image,
                                     const DetectorParams& params);
HeatmapForward forward_heatmap(const ScalarField& image,
                               const DetectorParams& params);

/// Accumulate d(loss)/d(params) into grad (sized param_count) given the
/// upstream coordinate gradients.
void backward_regression(const DetectorParams& params, const ForwardCache& cache,
                         const std::vector<Disp2>& grad_coords,
                         std::vector<double>& grad);

/// Same for the heatmap head, given per-map upstream gradients.
void backward_heatmap(const DetectorParams& params, const ForwardCache& cache,
                      const std::vector<ScalarField>& grad_maps,
                      std::vector<double>& grad);

struct SoftArgmaxResult {
  Point2 point;       // map pixel units
  ScalarField jac_x;  // d(point.x)/d(map)
  ScalarField jac_y;
};

/// Softmax-weighted expectation of grid coordinates.
SoftArgmaxResult soft_argmax(const ScalarField& map, double temperature = 1.0);

/// Unnormalized Gaussian blob with peak 1 at coord (map pixel units).
ScalarField gt_heatmap(Point2 coord, double sigma, int height, int width);

struct AdamConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;

  static AdamState zeros(size_t n) { return {std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), 0}; }
};

void adam_step(std::vector<double>& params, const std::vector<double>& grads,
               AdamState& state, const AdamConfig& config);

}  // namespace srt
