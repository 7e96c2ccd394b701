#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "srt/train.hpp"
#include "test_util.hpp"

using namespace srt;

namespace {

using testutil::TempDir;

SceneConfig micro_scene_config() {
  SceneConfig sc;
  sc.views = 4;
  sc.frames = 2;
  sc.landmarks = 3;
  sc.height = 64;
  sc.width = 64;
  sc.focal = 140.0;
  sc.seed = 99;
  return sc;
}

DetectorConfig micro_detector(DetectorMode mode) {
  DetectorConfig dc;
  dc.input_size = 16;
  dc.landmarks = 3;
  dc.conv1_channels = 3;
  dc.conv2_channels = 4;
  dc.mode = mode;
  return dc;
}

TrainConfig micro_train_config(DetectorMode mode) {
  TrainConfig tc;
  tc.detector = micro_detector(mode);
  tc.patch.max_iterations = 60;
  tc.patch.convergence_eps = 1e-10;
  tc.thresholds = {5.0, 5.0, 5.0};
  tc.weights = {0.5, 0.5};
  tc.run_length = 2;
  tc.stage1_epochs = 1;
  tc.seed = 5;
  return tc;
}

std::vector<LabeledSample> pool_from_scene(const Scene& scene, int input_size,
                                           Rng* aug_rng, int copies = 1) {
  std::vector<LabeledSample> pool;
  for (size_t m = 0; m < scene.images.size(); ++m) {
    for (size_t t = 0; t < scene.images[m].size(); ++t) {
      for (int c = 0; c < copies; ++c) {
        pool.push_back(make_labeled_sample(scene.images[m][t], scene.bboxes[m][t],
                                           scene.gt2d[m][t], input_size, aug_rng));
      }
    }
  }
  return pool;
}

}  // namespace

TEST_CASE("epoch sampler and batch assembly") {
  std::vector<LabeledSample> labeled(10);
  std::vector<TrackRun> runs;
  for (int i = 0; i < 6; ++i) runs.push_back({0, i, 3});

  SUBCASE("labeled-only batch takes exactly the requested count") {
    EpochSampler ls(labeled.size()), rs(0), fs(0);
    Rng rng(1);
    const Batch b = assemble_batch(labeled, {}, nullptr, {2, 0, 0}, ls, rs, fs, rng);
    CHECK(b.labeled.size() == 2);
    CHECK(b.runs.empty());
    CHECK(b.quads.empty());
  }

  SUBCASE("one pass draws each index exactly once, two passes exactly twice") {
    EpochSampler ls(labeled.size()), rs(0), fs(0);
    Rng rng(2);
    std::map<size_t, int> seen;
    for (int i = 0; i < 20; ++i) {
      const Batch b = assemble_batch(labeled, {}, nullptr, {1, 0, 0}, ls, rs, fs, rng);
      seen[b.labeled[0]] += 1;
      if (i == 9) {
        for (const auto& [idx, n] : seen) CHECK(n == 1);
      }
    }
    CHECK(seen.size() == 10);
    for (const auto& [idx, n] : seen) CHECK(n == 2);
  }

  SUBCASE("same seed gives identical draws") {
    for (int trial = 0; trial < 2; ++trial) {
      static std::vector<size_t> first;
      EpochSampler ls(labeled.size()), rs(runs.size()), fs(0);
      Rng rng(3);
      std::vector<size_t> got;
      for (int i = 0; i < 15; ++i) {
        const Batch b = assemble_batch(labeled, runs, nullptr, {1, 1, 0}, ls, rs, fs, rng);
        got.push_back(b.labeled[0]);
        got.push_back(100 + static_cast<size_t>(b.runs[0].start));
      }
      if (trial == 0) {
        first = got;
      } else {
        CHECK(got == first);
      }
    }
  }

  SUBCASE("quadruplet views are always pairwise distinct") {
    VideoData video;
    video.cameras.resize(6);
    video.frames.assign(6, std::vector<ScalarField>(3));
    video.bboxes.assign(6, std::vector<Rect>(3));
    EpochSampler ls(labeled.size()), rs(0), fs(3);
    Rng rng(4);
    for (int i = 0; i < 500; ++i) {
      const Batch b =
          assemble_batch(labeled, {}, &video, {0, 0, 2}, ls, rs, fs, rng);
      for (const MultiviewItem& q : b.quads) {
        for (int a = 0; a < 4; ++a) {
          CHECK(q.frame >= 0);
          CHECK(q.frame < 3);
          CHECK(q.views[a] >= 0);
          CHECK(q.views[a] < 6);
          for (int bb = a + 1; bb < 4; ++bb) CHECK(q.views[a] != q.views[bb]);
        }
      }
    }
  }

  SUBCASE("each view anchors quadruplets with frequency 1/M") {
    VideoData video;
    const int m = 5;
    video.cameras.resize(m);
    video.frames.assign(m, std::vector<ScalarField>(2));
    video.bboxes.assign(m, std::vector<Rect>(2));
    EpochSampler ls(1), rs(0), fs(2);
    Rng rng(5);
    const int draws = 10000;
    std::array<int, m> anchor_count{};
    for (int i = 0; i < draws; ++i) {
      const Batch b = assemble_batch({LabeledSample{}}, {}, &video, {0, 0, 1},
                                     ls, rs, fs, rng);
      anchor_count[static_cast<size_t>(b.quads[0].views[0])] += 1;
    }
    const double p = 1.0 / m;
    const double tol = 3.0 * std::sqrt(p * (1.0 - p) / draws);
    for (int v = 0; v < m; ++v) {
      CHECK(std::abs(anchor_count[static_cast<size_t>(v)] / double(draws) - p) < tol);
    }
  }

  SUBCASE("empty pools with nonzero requests throw") {
    EpochSampler ls(0), rs(0), fs(0);
    Rng rng(6);
    CHECK_THROWS_AS(assemble_batch({}, {}, nullptr, {1, 0, 0}, ls, rs, fs, rng),
                    ConfigError);
    CHECK_THROWS_AS(assemble_batch(labeled, {}, nullptr, {0, 1, 0}, ls, rs, fs, rng),
                    ConfigError);
    CHECK_THROWS_AS(assemble_batch(labeled, {}, nullptr, {0, 0, 1}, ls, rs, fs, rng),
                    ConfigError);
    VideoData three;
    three.cameras.resize(3);
    three.frames.assign(3, std::vector<ScalarField>(2));
    three.bboxes.assign(3, std::vector<Rect>(2));
    EpochSampler fs2(2);
    CHECK_THROWS_AS(assemble_batch(labeled, {}, &three, {0, 0, 1}, ls, rs, fs2, rng),
                    ConfigError);
  }

  SUBCASE("run enumeration covers every window") {
    VideoData video;
    video.cameras.resize(2);
    video.frames.assign(2, std::vector<ScalarField>(5));
    video.bboxes.assign(2, std::vector<Rect>(5));
    const auto runs3 = enumerate_runs(video, 3);
    CHECK(runs3.size() == 6);
    CHECK(runs3.front().view == 0);
    CHECK(runs3.front().start == 0);
    CHECK(runs3.back().view == 1);
    CHECK(runs3.back().start == 2);
    for (const TrackRun& r : runs3) CHECK(r.length == 3);
    CHECK(enumerate_runs(video, 6).empty());
    CHECK_THROWS_AS(enumerate_runs(video, 1), ConfigError);
  }
}

TEST_CASE("translated-field adjoint") {
  Rng rng(7);
  ScalarField field = testutil::random_field(rng, 12, 10, 0.0, 1.0);
  ScalarField weight = testutil::random_field(rng, 12, 10, -1.0, 1.0);
  const Disp2 d{0.7, -1.3};

  auto weighted_sum = [&](const ScalarField& f, Disp2 dd) {
    const ScalarField t = translate_field(f, dd);
    double s = 0.0;
    for (int r = 0; r < t.height(); ++r) {
      for (int c = 0; c < t.width(); ++c) s += weight.at(r, c) * t.at(r, c);
    }
    return s;
  };

  const TranslateFieldGrad adj = translate_field_adjoint(field, d, weight);

  SUBCASE("field gradient is the exact transpose of the linear map") {
    double lhs = weighted_sum(field, d);
    double rhs = 0.0;
    for (int r = 0; r < field.height(); ++r) {
      for (int c = 0; c < field.width(); ++c) {
        rhs += adj.grad_field.at(r, c) * field.at(r, c);
      }
    }
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }

  SUBCASE("displacement gradient matches finite differences") {
    const double h = 1e-6;
    const double fx = (weighted_sum(field, {d.dx + h, d.dy}) -
                       weighted_sum(field, {d.dx - h, d.dy})) /
                      (2 * h);
    const double fy = (weighted_sum(field, {d.dx, d.dy + h}) -
                       weighted_sum(field, {d.dx, d.dy - h})) /
                      (2 * h);
    CHECK(testutil::rel_err(adj.grad_disp.dx, fx, 1e-8) < 1e-5);
    CHECK(testutil::rel_err(adj.grad_disp.dy, fy, 1e-8) < 1e-5);
  }

  SUBCASE("shape mismatch throws") {
    CHECK_THROWS(translate_field_adjoint(field, d, ScalarField(3, 3)));
  }
}

TEST_CASE("configuration validation") {
  TrainConfig tc = micro_train_config(DetectorMode::regression);
  CHECK_NOTHROW(tc.validate());
  auto broken = [&](auto mutate) {
    TrainConfig bad = tc;
    mutate(bad);
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  };
  broken([](TrainConfig& c) { c.adam.learning_rate = 0.0; });
  broken([](TrainConfig& c) { c.adam.beta1 = 1.0; });
  broken([](TrainConfig& c) { c.stage1_epochs = -1; });
  broken([](TrainConfig& c) { c.batch.n_labeled = 0; });
  broken([](TrainConfig& c) { c.batch.n_triplets = -1; });
  broken([](TrainConfig& c) { c.weights.w_sbr = -0.5; });
  broken([](TrainConfig& c) { c.thresholds.t_tri_frac = 0.0; });
  broken([](TrainConfig& c) { c.run_length = 1; });

  VideoData video;
  CHECK_THROWS_AS(video.validate(), ConfigError);
  video.cameras.resize(2);
  video.frames.assign(2, std::vector<ScalarField>(3));
  video.bboxes.assign(1, std::vector<Rect>(3));
  CHECK_THROWS_AS(video.validate(), ConfigError);
}

TEST_CASE("end-to-end batch gradient matches finite differences") {
  const Scene scene = generate_scene(micro_scene_config());

  for (const DetectorMode mode : {DetectorMode::regression, DetectorMode::heatmap}) {
    CAPTURE(static_cast<int>(mode));
    const TrainConfig tc = micro_train_config(mode);

    TrainDataset data;
    data.video = video_from_scene(scene);
    data.labeled.push_back(make_labeled_sample(scene.images[0][0], scene.bboxes[0][0],
                                               scene.gt2d[0][0],
                                               tc.detector.input_size, nullptr));

    Batch batch;
    batch.labeled = {0};
    batch.runs = {TrackRun{1, 0, 2}};
    batch.quads = {MultiviewItem{1, {0, 1, 2, 3}}};

    Rng init(7);
    DetectorParams params = DetectorParams::init(tc.detector, init);
    const StepStats st = evaluate_batch(params, data, batch, tc, tc.weights);

    // The generous thresholds must keep every supervision path live,
    // otherwise the check below would not exercise them.
    CHECK(st.beta_sbr_total == 3);
    CHECK(st.beta_sbr_zero == 0);
    CHECK(st.beta_sbt_total == 12);
    CHECK(st.beta_sbt_zero == 0);
    CHECK(st.l_det > 0.0);
    CHECK(st.l_sbr > 0.0);
    CHECK(st.l_sbt > 0.0);
    CHECK(st.loss == doctest::Approx(st.l_det + 0.5 * st.l_sbr + 0.5 * st.l_sbt));

    const size_t n = params.values.size();
    std::vector<size_t> probe;
    for (size_t i = 0; i < n; i += n / 90 + 1) probe.push_back(i);
    for (size_t i = tc.detector.head_b_off(); i < n; ++i) probe.push_back(i);

    const double h = 1e-5;
    int checked = 0;
    for (size_t idx : probe) {
      DetectorParams p = params;
      p.values[idx] += h;
      const double up = evaluate_batch(p, data, batch, tc, tc.weights).loss;
      p.values[idx] -= 2 * h;
      const double dn = evaluate_batch(p, data, batch, tc, tc.weights).loss;
      const double fd = (up - dn) / (2 * h);
      const double got = st.grad[idx];
      CAPTURE(idx);
      if (std::abs(got) < 1e-4 && std::abs(fd) < 1e-4) {
        CHECK(std::abs(got - fd) < 1e-4);
      } else {
        CHECK(testutil::rel_err(got, fd, 1e-4) < 1e-2);
        ++checked;
      }
    }
    CHECK(checked > 20);
  }
}

TEST_CASE("stopping the tracker gradient changes only the gradient") {
  const Scene scene = generate_scene(micro_scene_config());
  TrainConfig tc = micro_train_config(DetectorMode::regression);
  tc.weights = {0.5, 0.0};

  TrainDataset data;
  data.video = video_from_scene(scene);
  data.labeled.push_back(make_labeled_sample(scene.images[0][0], scene.bboxes[0][0],
                                             scene.gt2d[0][0],
                                             tc.detector.input_size, nullptr));
  Batch batch;
  batch.labeled = {0};
  batch.runs = {TrackRun{1, 0, 2}};

  Rng init(7);
  const DetectorParams params = DetectorParams::init(tc.detector, init);
  const StepStats live = evaluate_batch(params, data, batch, tc, tc.weights);
  tc.stop_tracked_gradient = true;
  const StepStats stopped = evaluate_batch(params, data, batch, tc, tc.weights);

  CHECK(live.loss == stopped.loss);
  double diff = 0.0;
  for (size_t i = 0; i < live.grad.size(); ++i) {
    diff = std::max(diff, std::abs(live.grad[i] - stopped.grad[i]));
  }
  CHECK(diff > 1e-8);
}

TEST_CASE("supervised training drives the error down epoch over epoch") {
  SceneConfig sc;
  sc.views = 2;
  sc.frames = 25;
  sc.seed = 11;
  const Scene scene = generate_scene(sc);

  TrainConfig tc;
  tc.detector.conv1_channels = 4;
  tc.detector.conv2_channels = 6;
  tc.adam.learning_rate = 0.01;
  tc.stage1_epochs = 50;
  tc.seed = 3;

  Rng aug(123);
  TrainDataset data;
  data.labeled = pool_from_scene(scene, tc.detector.input_size, &aug, 4);
  REQUIRE(data.labeled.size() == 200);

  const TrainResult result = train(data, tc);
  REQUIRE(result.log.size() == 50);
  // Adam wobbles once converged, so compare ten-epoch averages, not neighbors.
  auto window_mean = [&](size_t lo) {
    double s = 0.0;
    for (size_t e = lo; e < lo + 10; ++e) s += result.log[e].nme;
    return s / 10.0;
  };
  double prev = window_mean(0);
  for (size_t lo = 10; lo + 10 <= result.log.size(); lo += 10) {
    CAPTURE(lo);
    const double cur = window_mean(lo);
    CHECK(cur < prev);
    prev = cur;
  }
  CHECK(window_mean(40) < 0.5 * result.log[5].nme);
  for (const EpochMetrics& em : result.log) {
    CHECK(em.l_sbr == 0.0);
    CHECK(em.l_sbt == 0.0);
    CHECK(std::isnan(em.p_error));
  }
}

TEST_CASE("zero joint weights reproduce pure supervised training bit for bit") {
  SceneConfig sc;
  sc.views = 4;
  sc.frames = 5;
  sc.landmarks = 3;
  sc.height = 64;
  sc.width = 64;
  sc.focal = 140.0;
  sc.seed = 21;
  const Scene scene = generate_scene(sc);

  TrainConfig base = micro_train_config(DetectorMode::regression);
  base.adam.learning_rate = 0.002;
  base.batch = {8, 2, 2};
  base.steps_per_epoch = 2;
  base.seed = 7;
  base.weights = {0.0, 0.0};

  TrainDataset data;
  data.video = video_from_scene(scene);
  data.labeled = pool_from_scene(scene, base.detector.input_size, nullptr);

  TrainConfig stage1_only = base;
  stage1_only.stage1_epochs = 4;
  stage1_only.stage2_epochs = 0;

  TrainConfig zero_joint = base;
  zero_joint.stage1_epochs = 2;
  zero_joint.stage2_epochs = 2;

  const TrainResult a = train(data, stage1_only);
  const TrainResult b = train(data, zero_joint);
  REQUIRE(a.params.values.size() == b.params.values.size());
  CHECK(a.params.values == b.params.values);
  CHECK(a.adam.m == b.adam.m);
  CHECK(a.adam.v == b.adam.v);
  CHECK(a.adam.step == b.adam.step);

  TrainConfig joint = zero_joint;
  joint.weights = {0.5, 0.5};
  const TrainResult c = train(data, joint);
  CHECK(c.params.values != a.params.values);
  CHECK(c.log.back().l_sbr > 0.0);
  CHECK(c.log.back().l_sbt > 0.0);
}

TEST_CASE("training resumes bit-exactly from a checkpoint") {
  SceneConfig sc;
  sc.views = 4;
  sc.frames = 4;
  sc.landmarks = 3;
  sc.height = 64;
  sc.width = 64;
  sc.focal = 140.0;
  sc.seed = 31;
  const Scene scene = generate_scene(sc);

  TrainConfig cfg = micro_train_config(DetectorMode::regression);
  cfg.stage1_epochs = 1;
  cfg.stage2_epochs = 2;
  cfg.batch = {6, 2, 1};
  cfg.steps_per_epoch = 2;
  cfg.weights = {0.5, 0.5};
  cfg.seed = 13;

  TrainDataset data;
  data.video = video_from_scene(scene);
  data.labeled = pool_from_scene(scene, cfg.detector.input_size, nullptr);

  const TrainResult full = train(data, cfg);
  REQUIRE(full.log.size() == 3);

  TrainConfig first = cfg;
  first.stage1_epochs = 1;
  first.stage2_epochs = 0;
  const TrainResult head = train(data, first);

  TempDir tmp;
  const auto ckpt_path = tmp.path / "mid.ckpt";
  save_checkpoint(ckpt_path, {head.params, head.adam, cfg.seed, 1});
  const Checkpoint loaded = load_checkpoint(ckpt_path);
  CHECK(loaded.params.values == head.params.values);
  CHECK(loaded.adam.m == head.adam.m);
  CHECK(loaded.adam.v == head.adam.v);
  CHECK(loaded.adam.step == head.adam.step);
  CHECK(loaded.seed == cfg.seed);
  CHECK(loaded.next_epoch == 1);

  const TrainResult tail =
      resume_training(data, cfg, loaded.params, loaded.adam, loaded.next_epoch);
  CHECK(tail.params.values == full.params.values);
  CHECK(tail.adam.m == full.adam.m);
  CHECK(tail.adam.v == full.adam.v);
  REQUIRE(tail.log.size() == 2);
  CHECK(tail.log[0].l_det == full.log[1].l_det);
  CHECK(tail.log[1].l_det == full.log[2].l_det);
}

TEST_CASE("checkpoint and metrics files") {
  TempDir tmp;

  SUBCASE("checkpoint round trips both modes bit-exactly") {
    for (const DetectorMode mode : {DetectorMode::regression, DetectorMode::heatmap}) {
      DetectorConfig dc = micro_detector(mode);
      dc.temperature = 0.75;
      dc.sigma_gt = 2.25;
      Rng rng(41);
      DetectorParams params = DetectorParams::init(dc, rng);
      AdamState adam = AdamState::zeros(params.values.size());
      for (size_t i = 0; i < adam.m.size(); ++i) {
        adam.m[i] = rng.normal();
        adam.v[i] = std::abs(rng.normal());
      }
      adam.step = 17;
      const auto path = tmp.path / "roundtrip.ckpt";
      save_checkpoint(path, {params, adam, 123u, 5});
      const Checkpoint got = load_checkpoint(path);
      CHECK(got.params.values == params.values);
      CHECK(got.adam.m == adam.m);
      CHECK(got.adam.v == adam.v);
      CHECK(got.adam.step == 17);
      CHECK(got.params.config.mode == mode);
      CHECK(got.params.config.temperature == 0.75);
      CHECK(got.params.config.sigma_gt == 2.25);
      CHECK(got.next_epoch == 5);
    }
  }

  SUBCASE("malformed checkpoints are rejected") {
    CHECK_THROWS_AS(load_checkpoint(tmp.path / "missing.ckpt"), ConfigError);
    const auto garbage = tmp.path / "garbage.ckpt";
    std::ofstream(garbage) << "not a checkpoint\n";
    CHECK_THROWS_AS(load_checkpoint(garbage), ConfigError);

    DetectorConfig dc = micro_detector(DetectorMode::regression);
    Rng rng(42);
    DetectorParams params = DetectorParams::init(dc, rng);
    const auto path = tmp.path / "trunc.ckpt";
    save_checkpoint(path, {params, AdamState::zeros(params.values.size()), 1u, 0});
    std::ifstream in(path);
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    std::ofstream(path) << text.substr(0, text.size() / 2);
    CHECK_THROWS_AS(load_checkpoint(path), ConfigError);
  }

  SUBCASE("metrics log round trips including the missing-probe marker") {
    std::vector<EpochMetrics> log(2);
    log[0].epoch = 0;
    log[0].l_det = 1.25;
    log[0].l_sbr = 0.5;
    log[0].l_sbt = 0.125;
    log[0].beta_sbr_zero_frac = 0.25;
    log[0].beta_sbt_zero_frac = 0.0625;
    log[0].nme = 0.17;
    log[0].p_error = 0.031;
    log[1].epoch = 1;
    log[1].nme = 0.15;

    const auto path = tmp.path / "metrics.jsonl";
    write_metrics_jsonl(path, log);
    std::ifstream in(path);
    std::string line0, line1, extra;
    REQUIRE(std::getline(in, line0));
    REQUIRE(std::getline(in, line1));
    CHECK_FALSE(std::getline(in, extra));
    CHECK(line1.find("\"p_error\":null") != std::string::npos);

    const auto got = read_metrics_jsonl(path);
    REQUIRE(got.size() == 2);
    CHECK(got[0].epoch == 0);
    CHECK(got[0].l_det == 1.25);
    CHECK(got[0].l_sbr == 0.5);
    CHECK(got[0].l_sbt == 0.125);
    CHECK(got[0].beta_sbr_zero_frac == 0.25);
    CHECK(got[0].beta_sbt_zero_frac == 0.0625);
    CHECK(got[0].nme == 0.17);
    CHECK(got[0].p_error == 0.031);
    CHECK(std::isnan(got[1].p_error));
  }
}

TEST_CASE("per-epoch probe and frame detection plumbing") {
  SceneConfig sc;
  sc.views = 1;
  sc.frames = 2;
  sc.landmarks = 3;
  sc.height = 64;
  sc.width = 64;
  sc.focal = 140.0;
  sc.seed = 51;
  const Scene scene = generate_scene(sc);

  SUBCASE("probe datasets log a finite precision value") {
    TrainConfig tc = micro_train_config(DetectorMode::regression);
    tc.stage1_epochs = 1;
    tc.steps_per_epoch = 1;
    tc.batch.n_labeled = 2;
    TrainDataset data;
    data.labeled = pool_from_scene(scene, tc.detector.input_size, nullptr);
    data.probe = EvalProbe{scene.images[0][0], scene.bboxes[0][0], 4};
    const TrainResult result = train(data, tc);
    REQUIRE(result.log.size() == 1);
    CHECK(std::isfinite(result.log[0].p_error));
    CHECK(result.log[0].p_error >= 0.0);
  }

  SUBCASE("frame detection agrees with the crop adapter through the affine") {
    for (const DetectorMode mode : {DetectorMode::regression, DetectorMode::heatmap}) {
      Rng init(61);
      const DetectorParams params = DetectorParams::init(micro_detector(mode), init);
      const ScalarField& frame = scene.images[0][1];
      const Rect bbox = scene.bboxes[0][1];
      const std::vector<Point2> in_frame = detect_in_frame(params, frame, bbox);
      REQUIRE(in_frame.size() == 3);

      const AugmentResult crop = crop_for_eval(frame, bbox, {});
      const auto in_crop = crop_detector_fn(params)(crop.image, crop.crop_from_frame);
      REQUIRE(in_crop.size() == 3);
      for (size_t k = 0; k < 3; ++k) {
        const Point2 mapped = crop.crop_from_frame.apply(in_frame[k]);
        CHECK(mapped.x == doctest::Approx(in_crop[k].x).epsilon(1e-10));
        CHECK(mapped.y == doctest::Approx(in_crop[k].y).epsilon(1e-10));
      }
    }
  }

  SUBCASE("missing labeled data fails before any step") {
    TrainConfig tc = micro_train_config(DetectorMode::regression);
    tc.stage1_epochs = 1;
    TrainDataset empty;
    CHECK_THROWS_AS(train(empty, tc), ConfigError);
  }

  SUBCASE("joint stage without video fails before any step") {
    TrainConfig tc = micro_train_config(DetectorMode::regression);
    tc.stage1_epochs = 0;
    tc.stage2_epochs = 1;
    tc.weights = {0.5, 0.5};
    TrainDataset data;
    data.labeled = pool_from_scene(scene, tc.detector.input_size, nullptr);
    CHECK_THROWS_AS(train(data, tc), ConfigError);
  }
}
