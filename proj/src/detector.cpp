#include "srt/detector.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>

#include "srt/common.hpp"

namespace srt {

namespace {

int feature_index(int c, int y, int x, int f) { return (c * f + y) * f + x; }

// 3x3 convolution, padding 1. Stride 2 halves the resolution, stride 1
// keeps it. Output has out_ch planes of size f x f.
void conv3x3_forward(const std::vector<double>& in, int in_ch, int in_size,
                     const double* w, const double* b, int out_ch, int stride,
                     std::vector<double>& out, bool apply_tanh) {
  const int f = (in_size + 2 - 3) / stride + 1;
  out.assign(static_cast<size_t>(out_ch) * f * f, 0.0);
  for (int o = 0; o < out_ch; ++o) {
    for (int oy = 0; oy < f; ++oy) {
      for (int ox = 0; ox < f; ++ox) {
        double acc = b[o];
        for (int i = 0; i < in_ch; ++i) {
          const double* wk = w + ((o * in_ch + i) * 9);
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = oy * stride + ky - 1;
            if (iy < 0 || iy >= in_size) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = ox * stride + kx - 1;
              if (ix < 0 || ix >= in_size) continue;
              acc += wk[ky * 3 + kx] * in[feature_index(i, iy, ix, in_size)];
            }
          }
        }
        out[feature_index(o, oy, ox, f)] = apply_tanh ? std::tanh(acc) : acc;
      }
    }
  }
}

// Backward through tanh + conv. d_out is d(loss)/d(post-tanh output); z is
// that output. Accumulates weight and bias gradients and, when d_in is not
// null, the gradient w.r.t. the layer input.
void conv3x3_backward(const std::vector<double>& in, int in_ch, int in_size,
                      const double* w, int out_ch, int stride,
                      const std::vector<double>& z,
                      const std::vector<double>& d_out, double* dw, double* db,
                      std::vector<double>* d_in) {
  const int f = (in_size + 2 - 3) / stride + 1;
  for (int o = 0; o < out_ch; ++o) {
    for (int oy = 0; oy < f; ++oy) {
      for (int ox = 0; ox < f; ++ox) {
        const int at = feature_index(o, oy, ox, f);
        const double zv = z[at];
        const double da = d_out[at] * (1.0 - zv * zv);
        if (da == 0.0) continue;
        db[o] += da;
        for (int i = 0; i < in_ch; ++i) {
          double* dwk = dw + ((o * in_ch + i) * 9);
          const double* wk = w + ((o * in_ch + i) * 9);
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = oy * stride + ky - 1;
            if (iy < 0 || iy >= in_size) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = ox * stride + kx - 1;
              if (ix < 0 || ix >= in_size) continue;
              const int in_at = feature_index(i, iy, ix, in_size);
              dwk[ky * 3 + kx] += da * in[in_at];
              if (d_in) (*d_in)[in_at] += da * wk[ky * 3 + kx];
            }
          }
        }
      }
    }
  }
}

ForwardCache run_trunk(const ScalarField& image, const DetectorParams& params) {
  const DetectorConfig& cfg = params.config;
  cfg.validate();
  if (params.values.size() != cfg.param_count())
    throw ConfigError("parameter vector has wrong size");
  if (image.height() != cfg.input_size || image.width() != cfg.input_size)
    throw ConfigError("detector input must be " + std::to_string(cfg.input_size) +
                      "x" + std::to_string(cfg.input_size));

  ForwardCache cache;
  cache.input.assign(static_cast<size_t>(cfg.input_size) * cfg.input_size, 0.0);
  for (int y = 0; y < cfg.input_size; ++y)
    for (int x = 0; x < cfg.input_size; ++x)
      cache.input[feature_index(0, y, x, cfg.input_size)] = image.at(y, x);

  const double* v = params.values.data();
  conv3x3_forward(cache.input, 1, cfg.input_size, v + cfg.conv1_w_off(),
                  v + cfg.conv1_b_off(), cfg.conv1_channels, 2, cache.z1, true);
  conv3x3_forward(cache.z1, cfg.conv1_channels, cfg.feature_size(),
                  v + cfg.conv2_w_off(), v + cfg.conv2_b_off(),
                  cfg.conv2_channels, 1, cache.z2, true);
  return cache;
}

void backward_trunk(const DetectorParams& params, const ForwardCache& cache,
                    const std::vector<double>& d_z2, std::vector<double>& grad) {
  const DetectorConfig& cfg = params.config;
  const double* v = params.values.data();
  const int f = cfg.feature_size();

  std::vector<double> d_z1(cache.z1.size(), 0.0);
  conv3x3_backward(cache.z1, cfg.conv1_channels, f, v + cfg.conv2_w_off(),
                   cfg.conv2_channels, 1, cache.z2, d_z2,
                   grad.data() + cfg.conv2_w_off(), grad.data() + cfg.conv2_b_off(),
                   &d_z1);
  conv3x3_backward(cache.input, 1, cfg.input_size, v + cfg.conv1_w_off(),
                   cfg.conv1_channels, 2, cache.z1, d_z1,
                   grad.data() + cfg.conv1_w_off(), grad.data() + cfg.conv1_b_off(),
                   nullptr);
}

}  // namespace

void DetectorConfig::validate() const {
  if (input_size < 4 || input_size % 2 != 0)
    throw ConfigError("input_size must be even and at least 4");
  if (landmarks < 1) throw ConfigError("landmarks must be positive");
  if (conv1_channels < 1 || conv2_channels < 1)
    throw ConfigError("channel counts must be positive");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (!(sigma_gt > 0.0)) throw ConfigError("sigma_gt must be positive");
}

DetectorParams DetectorParams::init(const DetectorConfig& config, Rng& rng) {
  config.validate();
  DetectorParams p;
  p.config = config;
  p.values.assign(config.param_count(), 0.0);

  auto fill_normal = [&rng, &p](size_t off, size_t count, double stddev) {
    for (size_t i = 0; i < count; ++i) p.values[off + i] = stddev * rng.normal();
  };
  fill_normal(config.conv1_w_off(), config.conv1_w_count(), 1.0 / 3.0);
  fill_normal(config.conv2_w_off(), config.conv2_w_count(),
              1.0 / std::sqrt(9.0 * config.conv1_channels));
  const double head_fan_in = config.mode == DetectorMode::regression
                                 ? static_cast<double>(config.head_inputs())
                                 : static_cast<double>(config.conv2_channels);
  fill_normal(config.head_w_off(), config.head_w_count(),
              1.0 / std::sqrt(head_fan_in));

  if (config.mode == DetectorMode::regression) {
    const double center = (config.input_size - 1) / 2.0;
    for (size_t i = 0; i < config.head_b_count(); ++i)
      p.values[config.head_b_off() + i] = center;
  }
  return p;
}

RegressionForward forward_regression(const ScalarField& image,
                                     const DetectorParams& params) {
  const DetectorConfig& cfg = params.config;
  if (cfg.mode != DetectorMode::regression)
    throw ConfigError("params are not configured for regression");
  RegressionForward out;
  out.cache = run_trunk(image, params);

  const double* w = params.values.data() + cfg.head_w_off();
  const double* b = params.values.data() + cfg.head_b_off();
  const size_t n_in = cfg.head_inputs();
  out.coords.coords.resize(cfg.landmarks);
  for (int k = 0; k < cfg.landmarks; ++k) {
    double xy[2];
    for (int d = 0; d < 2; ++d) {
      const size_t row = static_cast<size_t>(2 * k + d);
      double acc = b[row];
      const double* wr = w + row * n_in;
      for (size_t i = 0; i < n_in; ++i) acc += wr[i] * out.cache.z2[i];
      xy[d] = acc;
    }
    out.coords.coords[k] = {xy[0], xy[1]};
  }
  return out;
}

HeatmapForward forward_heatmap(const ScalarField& image,
                               const DetectorParams& params) {
  const DetectorConfig& cfg = params.config;
  if (cfg.mode != DetectorMode::heatmap)
    throw ConfigError("params are not configured for heatmaps");
  ForwardCache cache = run_trunk(image, params);

  const double* w = params.values.data() + cfg.head_w_off();
  const double* b = params.values.data() + cfg.head_b_off();
  const int f = cfg.feature_size();
  cache.maps.assign(static_cast<size_t>(cfg.landmarks) * f * f, 0.0);

  std::vector<ScalarField> maps;
  maps.reserve(cfg.landmarks);
  for (int k = 0; k < cfg.landmarks; ++k) {
    ScalarField map(f, f);
    for (int y = 0; y < f; ++y) {
      for (int x = 0; x < f; ++x) {
        double acc = b[k];
        for (int i = 0; i < cfg.conv2_channels; ++i)
          acc += w[k * cfg.conv2_channels + i] * cache.z2[feature_index(i, y, x, f)];
        const double e = std::exp(acc);
        map.at(y, x) = e;
        cache.maps[feature_index(k, y, x, f)] = e;
      }
    }
    maps.push_back(std::move(map));
  }
  HeatmapForward out{HeatmapSet(std::move(maps)), std::move(cache)};
  return out;
}

void backward_regression(const DetectorParams& params, const ForwardCache& cache,
                         const std::vector<Disp2>& grad_coords,
                         std::vector<double>& grad) {
  const DetectorConfig& cfg = params.config;
  if (grad_coords.size() != static_cast<size_t>(cfg.landmarks))
    throw ConfigError("coordinate gradient count mismatch");
  if (grad.size() != cfg.param_count())
    throw ConfigError("gradient vector has wrong size");

  const double* w = params.values.data() + cfg.head_w_off();
  double* dw = grad.data() + cfg.head_w_off();
  double* db = grad.data() + cfg.head_b_off();
  const size_t n_in = cfg.head_inputs();

  std::vector<double> d_z2(cache.z2.size(), 0.0);
  for (int k = 0; k < cfg.landmarks; ++k) {
    const double dxy[2] = {grad_coords[k].dx, grad_coords[k].dy};
    for (int d = 0; d < 2; ++d) {
      if (dxy[d] == 0.0) continue;
      const size_t row = static_cast<size_t>(2 * k + d);
      db[row] += dxy[d];
      const double* wr = w + row * n_in;
      double* dwr = dw + row * n_in;
      for (size_t i = 0; i < n_in; ++i) {
        dwr[i] += dxy[d] * cache.z2[i];
        d_z2[i] += dxy[d] * wr[i];
      }
    }
  }
  backward_trunk(params, cache, d_z2, grad);
}

void backward_heatmap(const DetectorParams& params, const ForwardCache& cache,
                      const std::vector<ScalarField>& grad_maps,
                      std::vector<double>& grad) {
  const DetectorConfig& cfg = params.config;
  if (grad_maps.size() != static_cast<size_t>(cfg.landmarks))
    throw ConfigError("map gradient count mismatch");
  if (grad.size() != cfg.param_count())
    throw ConfigError("gradient vector has wrong size");
  const int f = cfg.feature_size();

  const double* w = params.values.data() + cfg.head_w_off();
  double* dw = grad.data() + cfg.head_w_off();
  double* db = grad.data() + cfg.head_b_off();

  std::vector<double> d_z2(cache.z2.size(), 0.0);
  for (int k = 0; k < cfg.landmarks; ++k) {
    if (grad_maps[k].height() != f || grad_maps[k].width() != f)
      throw ConfigError("map gradient has wrong shape");
    for (int y = 0; y < f; ++y) {
      for (int x = 0; x < f; ++x) {
        // d(exp(a))/da = map value itself.
        const double ds = grad_maps[k].at(y, x) * cache.maps[feature_index(k, y, x, f)];
        if (ds == 0.0) continue;
        db[k] += ds;
        for (int i = 0; i < cfg.conv2_channels; ++i) {
          const int at = feature_index(i, y, x, f);
          dw[k * cfg.conv2_channels + i] += ds * cache.z2[at];
          d_z2[at] += ds * w[k * cfg.conv2_channels + i];
        }
      }
    }
  }
  backward_trunk(params, cache, d_z2, grad);
}

SoftArgmaxResult soft_argmax(const ScalarField& map, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  const int h = map.height();
  const int w = map.width();

  double peak = map.at(0, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) peak = std::max(peak, map.at(y, x));

  ScalarField prob(h, w);
  double total = 0.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double e = std::exp((map.at(y, x) - peak) / temperature);
      prob.at(y, x) = e;
      total += e;
    }
  }
  Point2 out{0.0, 0.0};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double p = prob.at(y, x) / total;
      prob.at(y, x) = p;
      out.x += p * x;
      out.y += p * y;
    }
  }

  SoftArgmaxResult res{out, ScalarField(h, w), ScalarField(h, w)};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double p = prob.at(y, x);
      res.jac_x.at(y, x) = p * (x - out.x) / temperature;
      res.jac_y.at(y, x) = p * (y - out.y) / temperature;
    }
  }
  return res;
}

ScalarField gt_heatmap(Point2 coord, double sigma, int height, int width) {
  if (height < 1 || width < 1) throw ConfigError("heatmap dimensions must be positive");
  if (!(sigma > 0.0)) throw ConfigError("sigma must be positive");
  if (!is_finite(coord) || coord.x < 0.0 || coord.x > width - 1 || coord.y < 0.0 ||
      coord.y > height - 1)
    throw ConfigError("ground-truth coordinate outside the heatmap");
  ScalarField map(height, width);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double dx = x - coord.x;
      const double dy = y - coord.y;
      map.at(y, x) = std::exp(-(dx * dx + dy * dy) * inv);
    }
  }
  return map;
}

void adam_step(std::vector<double>& params, const std::vector<double>& grads,
               AdamState& state, const AdamConfig& config) {
  const size_t n = params.size();
  if (grads.size() != n || state.m.size() != n || state.v.size() != n)
    throw ConfigError("optimizer buffers must match the parameter count");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < n; ++i) {
    const double g = grads[i];
    state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
    state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
    const double mh = state.m[i] / bc1;
    const double vh = state.v[i] / bc2;
    params[i] -= config.learning_rate * mh / (std::sqrt(vh) + config.eps);
  }
}

}  // namespace srt
