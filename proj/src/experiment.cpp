#include "srt/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "srt/io.hpp"
#include "srt/lk.hpp"

namespace srt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Config file parsing. Unknown keys are rejected so typos fail loudly.

[[noreturn]] void bad(const std::string& what) { throw ConfigError(what); }

void check_keys(const json& obj, std::initializer_list<const char*> allowed,
                const std::string& ctx) {
  if (!obj.is_object()) bad("config section '" + ctx + "' must be an object");
  for (const auto& item : obj.items()) {
    bool known = false;
    for (const char* k : allowed) known = known || item.key() == k;
    if (!known) bad("config key '" + ctx + "." + item.key() + "' is not recognized");
  }
}

const json* find(const json& obj, const char* key) {
  const auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

double jreal(const json& obj, const char* key, double def, const std::string& ctx) {
  const json* v = find(obj, key);
  if (!v) return def;
  if (!v->is_number()) bad("config key '" + ctx + "." + key + "' must be a number");
  return v->get<double>();
}

int jint(const json& obj, const char* key, int def, const std::string& ctx) {
  const json* v = find(obj, key);
  if (!v) return def;
  if (!v->is_number_integer()) bad("config key '" + ctx + "." + key + "' must be an integer");
  return v->get<int>();
}

std::uint64_t ju64(const json& obj, const char* key, std::uint64_t def,
                   const std::string& ctx) {
  const json* v = find(obj, key);
  if (!v) return def;
  if (!v->is_number_unsigned() && !v->is_number_integer())
    bad("config key '" + ctx + "." + key + "' must be a nonnegative integer");
  if (v->is_number_integer() && v->get<std::int64_t>() < 0)
    bad("config key '" + ctx + "." + key + "' must be a nonnegative integer");
  return v->get<std::uint64_t>();
}

bool jbool(const json& obj, const char* key, bool def, const std::string& ctx) {
  const json* v = find(obj, key);
  if (!v) return def;
  if (!v->is_boolean()) bad("config key '" + ctx + "." + key + "' must be a boolean");
  return v->get<bool>();
}

std::string jstr(const json& obj, const char* key, const std::string& def,
                 const std::string& ctx) {
  const json* v = find(obj, key);
  if (!v) return def;
  if (!v->is_string()) bad("config key '" + ctx + "." + key + "' must be a string");
  return v->get<std::string>();
}

SceneConfig parse_scene(const json& obj, const std::string& ctx,
                        std::uint64_t default_seed) {
  check_keys(obj,
             {"views", "frames", "height", "width", "landmarks", "seed",
              "camera_radius", "camera_spread", "focal", "rotation_per_frame",
              "translation_per_frame", "landmark_extent", "corruption_fraction",
              "render_images"},
             ctx);
  SceneConfig sc;
  sc.views = jint(obj, "views", sc.views, ctx);
  sc.frames = jint(obj, "frames", sc.frames, ctx);
  sc.height = jint(obj, "height", sc.height, ctx);
  sc.width = jint(obj, "width", sc.width, ctx);
  sc.landmarks = jint(obj, "landmarks", sc.landmarks, ctx);
  sc.seed = ju64(obj, "seed", default_seed, ctx);
  sc.camera_radius = jreal(obj, "camera_radius", sc.camera_radius, ctx);
  sc.camera_spread = jreal(obj, "camera_spread", sc.camera_spread, ctx);
  sc.focal = jreal(obj, "focal", sc.focal, ctx);
  sc.rotation_per_frame = jreal(obj, "rotation_per_frame", sc.rotation_per_frame, ctx);
  sc.translation_per_frame =
      jreal(obj, "translation_per_frame", sc.translation_per_frame, ctx);
  sc.landmark_extent = jreal(obj, "landmark_extent", sc.landmark_extent, ctx);
  sc.corruption_fraction =
      jreal(obj, "corruption_fraction", sc.corruption_fraction, ctx);
  sc.render_images = jbool(obj, "render_images", sc.render_images, ctx);
  return sc;
}

TrainConfig parse_train(const json& obj, std::uint64_t default_seed, bool* probe,
                        bool* resume) {
  check_keys(obj,
             {"detector", "adam", "stage1_epochs", "stage2_epochs",
              "steps_per_epoch", "batch", "weights", "thresholds", "patch",
              "run_length", "seed", "stop_tracked_gradient", "probe", "resume"},
             "train");
  TrainConfig tc;
  if (const json* d = find(obj, "detector")) {
    check_keys(*d,
               {"input_size", "landmarks", "conv1_channels", "conv2_channels",
                "mode", "temperature", "sigma_gt"},
               "train.detector");
    tc.detector.input_size = jint(*d, "input_size", tc.detector.input_size, "train.detector");
    tc.detector.landmarks = jint(*d, "landmarks", tc.detector.landmarks, "train.detector");
    tc.detector.conv1_channels =
        jint(*d, "conv1_channels", tc.detector.conv1_channels, "train.detector");
    tc.detector.conv2_channels =
        jint(*d, "conv2_channels", tc.detector.conv2_channels, "train.detector");
    const std::string mode = jstr(*d, "mode", "regression", "train.detector");
    if (mode == "regression") tc.detector.mode = DetectorMode::regression;
    else if (mode == "heatmap") tc.detector.mode = DetectorMode::heatmap;
    else bad("config key 'train.detector.mode' must be 'regression' or 'heatmap'");
    tc.detector.temperature = jreal(*d, "temperature", tc.detector.temperature, "train.detector");
    tc.detector.sigma_gt = jreal(*d, "sigma_gt", tc.detector.sigma_gt, "train.detector");
  }
  if (const json* a = find(obj, "adam")) {
    check_keys(*a, {"learning_rate", "beta1", "beta2", "eps"}, "train.adam");
    tc.adam.learning_rate = jreal(*a, "learning_rate", tc.adam.learning_rate, "train.adam");
    tc.adam.beta1 = jreal(*a, "beta1", tc.adam.beta1, "train.adam");
    tc.adam.beta2 = jreal(*a, "beta2", tc.adam.beta2, "train.adam");
    tc.adam.eps = jreal(*a, "eps", tc.adam.eps, "train.adam");
  }
  tc.stage1_epochs = jint(obj, "stage1_epochs", tc.stage1_epochs, "train");
  tc.stage2_epochs = jint(obj, "stage2_epochs", tc.stage2_epochs, "train");
  tc.steps_per_epoch = jint(obj, "steps_per_epoch", tc.steps_per_epoch, "train");
  if (const json* b = find(obj, "batch")) {
    check_keys(*b, {"n_labeled", "n_triplets", "n_quadruplets"}, "train.batch");
    tc.batch.n_labeled = jint(*b, "n_labeled", tc.batch.n_labeled, "train.batch");
    tc.batch.n_triplets = jint(*b, "n_triplets", tc.batch.n_triplets, "train.batch");
    tc.batch.n_quadruplets =
        jint(*b, "n_quadruplets", tc.batch.n_quadruplets, "train.batch");
  }
  if (const json* w = find(obj, "weights")) {
    check_keys(*w, {"w_sbr", "w_sbt"}, "train.weights");
    tc.weights.w_sbr = jreal(*w, "w_sbr", 0.5, "train.weights");
    tc.weights.w_sbt = jreal(*w, "w_sbt", 0.5, "train.weights");
  } else {
    tc.weights = {0.5, 0.5};
  }
  if (const json* t = find(obj, "thresholds")) {
    check_keys(*t, {"t_fb_frac", "t_d_frac", "t_tri_frac"}, "train.thresholds");
    tc.thresholds.t_fb_frac = jreal(*t, "t_fb_frac", tc.thresholds.t_fb_frac, "train.thresholds");
    tc.thresholds.t_d_frac = jreal(*t, "t_d_frac", tc.thresholds.t_d_frac, "train.thresholds");
    tc.thresholds.t_tri_frac =
        jreal(*t, "t_tri_frac", tc.thresholds.t_tri_frac, "train.thresholds");
  }
  if (const json* p = find(obj, "patch")) {
    check_keys(*p, {"side", "sigma", "max_iterations", "convergence_eps", "hessian_eps"},
               "train.patch");
    tc.patch.side = jint(*p, "side", tc.patch.side, "train.patch");
    tc.patch.sigma = jreal(*p, "sigma", tc.patch.sigma, "train.patch");
    tc.patch.max_iterations = jint(*p, "max_iterations", tc.patch.max_iterations, "train.patch");
    tc.patch.convergence_eps =
        jreal(*p, "convergence_eps", tc.patch.convergence_eps, "train.patch");
    tc.patch.hessian_eps = jreal(*p, "hessian_eps", tc.patch.hessian_eps, "train.patch");
  }
  tc.run_length = jint(obj, "run_length", tc.run_length, "train");
  tc.seed = ju64(obj, "seed", default_seed, "train");
  tc.stop_tracked_gradient =
      jbool(obj, "stop_tracked_gradient", tc.stop_tracked_gradient, "train");
  *probe = jbool(obj, "probe", false, "train");
  *resume = jbool(obj, "resume", false, "train");
  return tc;
}

// ---------------------------------------------------------------------------
// Canonical serialization of the resolved config; its digest stamps outputs.

json scene_to_json(const SceneConfig& sc) {
  return json{{"views", sc.views},
              {"frames", sc.frames},
              {"height", sc.height},
              {"width", sc.width},
              {"landmarks", sc.landmarks},
              {"seed", sc.seed},
              {"camera_radius", sc.camera_radius},
              {"camera_spread", sc.camera_spread},
              {"focal", sc.focal},
              {"rotation_per_frame", sc.rotation_per_frame},
              {"translation_per_frame", sc.translation_per_frame},
              {"landmark_extent", sc.landmark_extent},
              {"corruption_fraction", sc.corruption_fraction},
              {"render_images", sc.render_images}};
}

json config_to_json(const ExperimentConfig& cfg) {
  json scenes = json::object();
  if (cfg.labeled_scene) scenes["labeled"] = scene_to_json(*cfg.labeled_scene);
  if (cfg.video_scene) scenes["video"] = scene_to_json(*cfg.video_scene);
  if (cfg.test_scene) scenes["test"] = scene_to_json(*cfg.test_scene);
  const TrainConfig& tc = cfg.train;
  json train{
      {"detector",
       {{"input_size", tc.detector.input_size},
        {"landmarks", tc.detector.landmarks},
        {"conv1_channels", tc.detector.conv1_channels},
        {"conv2_channels", tc.detector.conv2_channels},
        {"mode", tc.detector.mode == DetectorMode::regression ? "regression" : "heatmap"},
        {"temperature", tc.detector.temperature},
        {"sigma_gt", tc.detector.sigma_gt}}},
      {"adam",
       {{"learning_rate", tc.adam.learning_rate},
        {"beta1", tc.adam.beta1},
        {"beta2", tc.adam.beta2},
        {"eps", tc.adam.eps}}},
      {"stage1_epochs", tc.stage1_epochs},
      {"stage2_epochs", tc.stage2_epochs},
      {"steps_per_epoch", tc.steps_per_epoch},
      {"batch",
       {{"n_labeled", tc.batch.n_labeled},
        {"n_triplets", tc.batch.n_triplets},
        {"n_quadruplets", tc.batch.n_quadruplets}}},
      {"weights", {{"w_sbr", tc.weights.w_sbr}, {"w_sbt", tc.weights.w_sbt}}},
      {"thresholds",
       {{"t_fb_frac", tc.thresholds.t_fb_frac},
        {"t_d_frac", tc.thresholds.t_d_frac},
        {"t_tri_frac", tc.thresholds.t_tri_frac}}},
      {"patch",
       {{"side", tc.patch.side},
        {"sigma", tc.patch.sigma},
        {"max_iterations", tc.patch.max_iterations},
        {"convergence_eps", tc.patch.convergence_eps},
        {"hessian_eps", tc.patch.hessian_eps}}},
      {"run_length", tc.run_length},
      {"seed", tc.seed},
      {"stop_tracked_gradient", tc.stop_tracked_gradient},
      {"probe", cfg.train_probe},
      {"resume", cfg.train_resume}};
  return json{
      {"seed", cfg.seed},
      {"mode", run_mode_name(cfg.mode)},
      {"out_dir", cfg.out_dir},
      {"scene_root", cfg.scene_root},
      {"scenes", scenes},
      {"train", train},
      {"data",
       {{"fraction", cfg.data.fraction},
        {"noise_std", cfg.data.noise_std},
        {"copies", cfg.data.copies}}},
      {"metrics",
       {{"auc_threshold", cfg.metrics.auc_threshold},
        {"auc_bins", cfg.metrics.auc_bins},
        {"failure_threshold", cfg.metrics.failure_threshold},
        {"p_error_probes", cfg.metrics.p_error_probes},
        {"p_error_pairs", cfg.metrics.p_error_pairs}}},
      {"ablate",
       {{"noise_stds", cfg.ablate.noise_stds},
        {"data_fractions", cfg.ablate.data_fractions},
        {"seeds", cfg.ablate.seeds}}},
      {"flowcheck", {{"n_points", cfg.flowcheck.n_points}}},
      {"eval", {{"oracle", cfg.eval_oracle}, {"checkpoint", cfg.checkpoint}}}};
}

// ---------------------------------------------------------------------------
// Output helpers. Everything written is a pure function of the config, so
// re-running a command reproduces each file byte for byte.

std::string fmt_short(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

void write_file(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

void write_run_info(const ExperimentConfig& cfg, const std::string& command,
                    const fs::path& dir) {
  json info{{"command", command},
            {"config_hash", cfg.config_hash},
            {"mode", run_mode_name(cfg.mode)},
            {"seed", cfg.seed},
            {"config", config_to_json(cfg)}};
  write_file(dir / "run_info.json", info.dump(2) + "\n");
}

Scene load_scene_dir(const std::string& dir, const char* what) {
  if (!fs::exists(fs::path(dir) / "manifest"))
    throw ConfigError(std::string(what) + " scene not found at '" + dir +
                      "' (run the synth command first)");
  return load_scene(dir);
}

void require_rendered(const Scene& scene, const char* what) {
  if (!scene.config.render_images)
    throw ConfigError(std::string(what) + " scene has no rendered images");
}

void require_landmarks(const Scene& scene, int expected, const char* what) {
  if (scene.config.landmarks != expected)
    throw ConfigError(std::string(what) + " scene has " +
                      std::to_string(scene.config.landmarks) +
                      " landmarks but the detector expects " +
                      std::to_string(expected));
}

struct EvalHooks {
  // Per (view, frame): detections in frame coordinates, and a detector over
  // crops of that frame for the precision probe.
  std::function<std::vector<Point2>(int, int)> in_frame;
  std::function<DetectorFn(int, int)> on_crops;
};

std::vector<MetricRow> evaluate_hooks(const EvalHooks& hooks, const Scene& test,
                                      const MetricConfig& mc, std::uint64_t seed) {
  mc.validate();
  const int views = static_cast<int>(test.images.size());
  const int frames = views > 0 ? static_cast<int>(test.images[0].size()) : 0;
  if (views == 0 || frames == 0) throw ConfigError("test scene holds no frames");

  std::vector<double> nmes;
  for (int m = 0; m < views; ++m) {
    for (int t = 0; t < frames; ++t) {
      const std::vector<Point2> pred = hooks.in_frame(m, t);
      nmes.push_back(nme(pred, test.gt2d[m][t], std::sqrt(test.bboxes[m][t].area())));
    }
  }
  const double mean_nme =
      std::accumulate(nmes.begin(), nmes.end(), 0.0) / nmes.size();

  const int n_slots = views * frames;
  const int n_probes = std::min(mc.p_error_probes, n_slots);
  Rng elt = Rng(seed).fork("elt");
  double p_sum = 0.0;
  for (int i = 0; i < n_probes; ++i) {
    const int slot = static_cast<int>(static_cast<long long>(i) * n_slots / n_probes);
    const int m = slot / frames, t = slot % frames;
    p_sum += p_error(hooks.on_crops(m, t), test.images[m][t], test.bboxes[m][t],
                     mc.p_error_pairs, elt);
  }

  std::vector<MetricRow> rows;
  rows.push_back({"nme", mean_nme, "sqrt_bbox_area"});
  rows.push_back({"auc@" + fmt_short(mc.auc_threshold),
                  auc_at(nmes, mc.auc_threshold, mc.auc_bins), "sqrt_bbox_area"});
  rows.push_back({"failure@" + fmt_short(mc.failure_threshold),
                  failure_rate(nmes, mc.failure_threshold), "sqrt_bbox_area"});
  rows.push_back({"p_error", p_sum / n_probes, "sqrt_bbox_area"});
  return rows;
}

std::string eval_report_csv(const std::vector<MetricRow>& rows, std::uint64_t seed,
                            const std::string& hash) {
  std::ostringstream out;
  out << "metric,value,normalizer,seed,config_hash\n";
  for (const MetricRow& r : rows) {
    out << r.metric << "," << format_g17(r.value) << "," << r.normalizer << ","
        << seed << "," << hash << "\n";
  }
  return out.str();
}

std::string sanitize_csv(std::string s) {
  for (char& c : s) {
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  }
  return s;
}

// ---------------------------------------------------------------------------
// Commands.

struct ScenePack {
  Scene labeled;
  std::optional<Scene> video;
};

ScenePack load_training_scenes(const ExperimentConfig& cfg) {
  ScenePack pack{load_scene_dir(cfg.labeled_dir(), "labeled"), std::nullopt};
  require_rendered(pack.labeled, "labeled");
  require_landmarks(pack.labeled, cfg.train.detector.landmarks, "labeled");
  if (fs::exists(fs::path(cfg.video_dir()) / "manifest")) {
    pack.video = load_scene_dir(cfg.video_dir(), "video");
    require_rendered(*pack.video, "video");
    require_landmarks(*pack.video, cfg.train.detector.landmarks, "video");
  }
  return pack;
}

TrainDataset dataset_from_pack(const ExperimentConfig& cfg, const ScenePack& pack,
                               std::uint64_t run_seed, const DataConfig& data) {
  TrainDataset ds;
  ds.labeled = build_labeled_pool(pack.labeled, data, cfg.train.detector.input_size,
                                  run_seed);
  if (pack.video) ds.video = video_from_scene(*pack.video);
  if (cfg.train_probe) {
    ds.probe = EvalProbe{pack.labeled.images[0][0], pack.labeled.bboxes[0][0],
                         cfg.metrics.p_error_pairs};
  }
  return ds;
}

TrainConfig training_config_for(const ExperimentConfig& cfg, std::uint64_t run_seed) {
  TrainConfig tc = cfg.train;
  tc.weights = effective_weights(cfg.mode, cfg.train.weights);
  tc.seed = run_seed;
  return tc;
}

int cmd_synth(const ExperimentConfig& cfg) {
  if (!cfg.labeled_scene && !cfg.video_scene && !cfg.test_scene)
    throw ConfigError("config declares no scenes to synthesize");
  auto emit = [&](const std::optional<SceneConfig>& sc, const std::string& dir) {
    if (!sc) return;
    const Scene scene = generate_scene(*sc);
    fs::create_directories(dir);
    save_scene(scene, dir);
    std::cout << "wrote scene " << dir << "\n";
  };
  emit(cfg.labeled_scene, cfg.labeled_dir());
  emit(cfg.video_scene, cfg.video_dir());
  emit(cfg.test_scene, cfg.test_dir());
  write_run_info(cfg, "synth", cfg.scene_root);
  return 0;
}

int cmd_train(const ExperimentConfig& cfg) {
  const ScenePack pack = load_training_scenes(cfg);
  const TrainDataset ds = dataset_from_pack(cfg, pack, cfg.train.seed, cfg.data);
  const TrainConfig tc = training_config_for(cfg, cfg.train.seed);
  const int total_epochs = tc.stage1_epochs + tc.stage2_epochs;

  TrainResult result;
  if (cfg.train_resume && fs::exists(cfg.checkpoint_path())) {
    const Checkpoint ckpt = load_checkpoint(cfg.checkpoint_path());
    if (ckpt.params.values.size() != tc.detector.param_count())
      throw ConfigError("checkpoint does not match the configured detector");
    if (ckpt.next_epoch > total_epochs)
      throw ConfigError("checkpoint is ahead of the configured epoch count");
    result = resume_training(ds, tc, ckpt.params, ckpt.adam, ckpt.next_epoch);
    std::cout << "resumed at epoch " << ckpt.next_epoch << "\n";
  } else {
    result = train(ds, tc);
  }

  fs::create_directories(cfg.out_dir);
  save_checkpoint(cfg.checkpoint_path(), {result.params, result.adam, tc.seed, total_epochs});
  write_metrics_jsonl(fs::path(cfg.out_dir) / "metrics.jsonl", result.log);
  write_run_info(cfg, "train", cfg.out_dir);
  if (!result.log.empty()) {
    const EpochMetrics& last = result.log.back();
    std::cout << "final epoch " << last.epoch << " l_det " << fmt_short(last.l_det)
              << " l_sbr " << fmt_short(last.l_sbr) << " l_sbt "
              << fmt_short(last.l_sbt) << " nme " << fmt_short(last.nme) << "\n";
  }
  std::cout << "wrote " << cfg.checkpoint_path() << "\n";
  return 0;
}

int cmd_eval(const ExperimentConfig& cfg) {
  const Scene test = load_scene_dir(cfg.test_dir(), "test");
  require_rendered(test, "test");

  std::vector<MetricRow> rows;
  if (cfg.eval_oracle) {
    rows = evaluate_oracle(test, cfg.metrics, cfg.seed);
  } else {
    if (!fs::exists(cfg.checkpoint_path()))
      throw ConfigError("checkpoint not found at '" + cfg.checkpoint_path() +
                        "' (run the train command first)");
    const Checkpoint ckpt = load_checkpoint(cfg.checkpoint_path());
    require_landmarks(test, ckpt.params.config.landmarks, "test");
    rows = evaluate_detector(ckpt.params, test, cfg.metrics, cfg.seed);
  }

  fs::create_directories(cfg.out_dir);
  write_file(fs::path(cfg.out_dir) / "eval.csv",
             eval_report_csv(rows, cfg.seed, cfg.config_hash));
  write_run_info(cfg, "eval", cfg.out_dir);
  for (const MetricRow& r : rows)
    std::cout << r.metric << " " << fmt_short(r.value) << "\n";
  std::cout << "wrote " << (fs::path(cfg.out_dir) / "eval.csv").string() << "\n";
  return 0;
}

int cmd_ablate(const ExperimentConfig& cfg) {
  const std::vector<AblateRow> rows = run_ablation(cfg);
  std::ostringstream out;
  out << "noise_std,data_fraction,seed,metric,value,normalizer,status,message,"
         "config_hash\n";
  for (const AblateRow& r : rows) {
    out << fmt_short(r.noise_std) << "," << fmt_short(r.data_fraction) << ","
        << r.seed << "," << r.metric << ","
        << (r.status == "ok" ? format_g17(r.value) : std::string()) << ","
        << r.normalizer << "," << r.status << "," << sanitize_csv(r.message)
        << "," << cfg.config_hash << "\n";
  }
  fs::create_directories(cfg.out_dir);
  write_file(fs::path(cfg.out_dir) / "ablate.csv", out.str());
  write_run_info(cfg, "ablate", cfg.out_dir);
  std::cout << "wrote " << (fs::path(cfg.out_dir) / "ablate.csv").string() << "\n";
  return 0;
}

int cmd_flowcheck(const ExperimentConfig& cfg) {
  std::string dir;
  if (fs::exists(fs::path(cfg.video_dir()) / "manifest")) dir = cfg.video_dir();
  else if (fs::exists(fs::path(cfg.labeled_dir()) / "manifest")) dir = cfg.labeled_dir();
  else throw ConfigError("flowcheck needs a video or labeled scene on disk");
  const Scene scene = load_scene(dir);
  require_rendered(scene, "flowcheck");

  const std::vector<FlowcheckRow> rows =
      run_flowcheck(scene, cfg.flowcheck, cfg.train.patch, cfg.seed);
  std::ostringstream out;
  out << "kind,view,frame,points,skipped,mean_px,max_px,config_hash\n";
  for (const FlowcheckRow& r : rows) {
    out << r.kind << "," << r.view << "," << r.frame << "," << r.points << ","
        << r.skipped << "," << format_g17(r.mean_px) << ","
        << format_g17(r.max_px) << "," << cfg.config_hash << "\n";
  }
  fs::create_directories(cfg.out_dir);
  write_file(fs::path(cfg.out_dir) / "flowcheck.csv", out.str());
  write_run_info(cfg, "flowcheck", cfg.out_dir);
  const FlowcheckRow& overall = rows.back();
  std::cout << "flow discrepancy mean " << fmt_short(overall.mean_px) << " px, max "
            << fmt_short(overall.max_px) << " px over " << overall.points
            << " points\n";
  std::cout << "wrote " << (fs::path(cfg.out_dir) / "flowcheck.csv").string() << "\n";
  return 0;
}

}  // namespace

// ---------------------------------------------------------------------------

RunMode parse_run_mode(const std::string& name) {
  if (name == "baseline") return RunMode::baseline;
  if (name == "sbr") return RunMode::sbr;
  if (name == "sbt") return RunMode::sbt;
  if (name == "srt") return RunMode::srt;
  throw ConfigError("mode must be one of baseline|sbr|sbt|srt, got '" + name + "'");
}

std::string run_mode_name(RunMode mode) {
  switch (mode) {
    case RunMode::baseline: return "baseline";
    case RunMode::sbr: return "sbr";
    case RunMode::sbt: return "sbt";
    case RunMode::srt: return "srt";
  }
  throw ConfigError("unknown mode value");
}

LossWeights effective_weights(RunMode mode, const LossWeights& configured) {
  switch (mode) {
    case RunMode::baseline: return {0.0, 0.0};
    case RunMode::sbr: return {configured.w_sbr, 0.0};
    case RunMode::sbt: return {0.0, configured.w_sbt};
    case RunMode::srt: return configured;
  }
  throw ConfigError("unknown mode value");
}

void DataConfig::validate() const {
  if (!(fraction > 0.0) || fraction > 1.0)
    throw ConfigError("data fraction must lie in (0, 1]");
  if (noise_std < 0.0) throw ConfigError("annotation noise std must be nonnegative");
  if (copies < 1) throw ConfigError("labeled copies must be at least 1");
}

void MetricConfig::validate() const {
  if (!(auc_threshold > 0.0)) throw ConfigError("auc threshold must be positive");
  if (auc_bins < 2) throw ConfigError("auc bins must be at least 2");
  if (!(failure_threshold > 0.0))
    throw ConfigError("failure threshold must be positive");
  if (p_error_probes < 1) throw ConfigError("p_error probes must be at least 1");
  if (p_error_pairs < 1) throw ConfigError("p_error pairs must be at least 1");
}

void AblateConfig::validate() const {
  if (noise_stds.empty() || data_fractions.empty() || seeds.empty())
    throw ConfigError("ablation grid axes must be nonempty");
  for (double s : noise_stds)
    if (s < 0.0) throw ConfigError("ablation noise stds must be nonnegative");
  for (double f : data_fractions)
    if (!(f > 0.0) || f > 1.0)
      throw ConfigError("ablation data fractions must lie in (0, 1]");
}

void FlowcheckConfig::validate() const {
  if (n_points < 1) throw ConfigError("flowcheck needs at least one point");
}

std::string ExperimentConfig::checkpoint_path() const {
  if (!checkpoint.empty()) return checkpoint;
  return (fs::path(out_dir) / "checkpoint.ckpt").string();
}

std::string ExperimentConfig::labeled_dir() const {
  return (fs::path(scene_root) / "labeled").string();
}

std::string ExperimentConfig::video_dir() const {
  return (fs::path(scene_root) / "video").string();
}

std::string ExperimentConfig::test_dir() const {
  return (fs::path(scene_root) / "test").string();
}

std::string experiment_config_digest(const std::string& canonical_text) {
  const std::uint64_t h = fnv1a64(canonical_text);
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ExperimentConfig load_experiment_config(const std::string& path,
                                        const CliOverrides& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  json root;
  try {
    root = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  check_keys(root,
             {"seed", "mode", "out_dir", "scene_root", "scenes", "train", "data",
              "metrics", "ablate", "flowcheck", "eval"},
             "top");

  ExperimentConfig cfg;
  cfg.seed = ju64(root, "seed", cfg.seed, "top");
  if (overrides.seed) cfg.seed = *overrides.seed;
  cfg.mode = parse_run_mode(jstr(root, "mode", "srt", "top"));
  if (overrides.mode) cfg.mode = parse_run_mode(*overrides.mode);
  cfg.out_dir = jstr(root, "out_dir", cfg.out_dir, "top");
  if (overrides.out_dir) cfg.out_dir = *overrides.out_dir;
  cfg.scene_root = jstr(root, "scene_root", cfg.scene_root, "top");
  if (overrides.scene_root) cfg.scene_root = *overrides.scene_root;

  const Rng scene_seeds = Rng(cfg.seed).fork("scene");
  if (const json* scenes = find(root, "scenes")) {
    check_keys(*scenes, {"labeled", "video", "test"}, "scenes");
    auto section = [&](const char* name) -> std::optional<SceneConfig> {
      const json* s = find(*scenes, name);
      if (!s) return std::nullopt;
      Rng derive = scene_seeds.fork(name);
      return parse_scene(*s, std::string("scenes.") + name, derive.next_u64());
    };
    cfg.labeled_scene = section("labeled");
    cfg.video_scene = section("video");
    cfg.test_scene = section("test");
  }

  bool probe = false, resume = false;
  if (const json* train = find(root, "train")) {
    cfg.train = parse_train(*train, cfg.seed, &probe, &resume);
  } else {
    cfg.train.weights = {0.5, 0.5};
    cfg.train.seed = cfg.seed;
  }
  cfg.train_probe = probe;
  cfg.train_resume = resume;

  if (const json* data = find(root, "data")) {
    check_keys(*data, {"fraction", "noise_std", "copies"}, "data");
    cfg.data.fraction = jreal(*data, "fraction", cfg.data.fraction, "data");
    cfg.data.noise_std = jreal(*data, "noise_std", cfg.data.noise_std, "data");
    cfg.data.copies = jint(*data, "copies", cfg.data.copies, "data");
  }
  if (const json* mc = find(root, "metrics")) {
    check_keys(*mc,
               {"auc_threshold", "auc_bins", "failure_threshold", "p_error_probes",
                "p_error_pairs"},
               "metrics");
    cfg.metrics.auc_threshold = jreal(*mc, "auc_threshold", cfg.metrics.auc_threshold, "metrics");
    cfg.metrics.auc_bins = jint(*mc, "auc_bins", cfg.metrics.auc_bins, "metrics");
    cfg.metrics.failure_threshold =
        jreal(*mc, "failure_threshold", cfg.metrics.failure_threshold, "metrics");
    cfg.metrics.p_error_probes =
        jint(*mc, "p_error_probes", cfg.metrics.p_error_probes, "metrics");
    cfg.metrics.p_error_pairs =
        jint(*mc, "p_error_pairs", cfg.metrics.p_error_pairs, "metrics");
  }
  if (const json* ab = find(root, "ablate")) {
    check_keys(*ab, {"noise_stds", "data_fractions", "seeds"}, "ablate");
    auto reals = [&](const char* key, std::vector<double> def) {
      const json* v = find(*ab, key);
      if (!v) return def;
      if (!v->is_array()) bad(std::string("config key 'ablate.") + key + "' must be an array");
      std::vector<double> out;
      for (const json& e : *v) {
        if (!e.is_number()) bad(std::string("config key 'ablate.") + key + "' must hold numbers");
        out.push_back(e.get<double>());
      }
      return out;
    };
    cfg.ablate.noise_stds = reals("noise_stds", cfg.ablate.noise_stds);
    cfg.ablate.data_fractions = reals("data_fractions", cfg.ablate.data_fractions);
    if (const json* v = find(*ab, "seeds")) {
      if (!v->is_array()) bad("config key 'ablate.seeds' must be an array");
      cfg.ablate.seeds.clear();
      for (const json& e : *v) {
        if (!e.is_number_integer() && !e.is_number_unsigned())
          bad("config key 'ablate.seeds' must hold integers");
        cfg.ablate.seeds.push_back(e.get<std::uint64_t>());
      }
    }
  }
  if (const json* flow = find(root, "flowcheck")) {
    check_keys(*flow, {"n_points"}, "flowcheck");
    cfg.flowcheck.n_points = jint(*flow, "n_points", cfg.flowcheck.n_points, "flowcheck");
  }
  if (const json* ev = find(root, "eval")) {
    check_keys(*ev, {"oracle", "checkpoint"}, "eval");
    cfg.eval_oracle = jbool(*ev, "oracle", cfg.eval_oracle, "eval");
    cfg.checkpoint = jstr(*ev, "checkpoint", cfg.checkpoint, "eval");
  }

  cfg.data.validate();
  cfg.metrics.validate();
  cfg.ablate.validate();
  cfg.flowcheck.validate();
  cfg.train.validate();
  cfg.config_hash = experiment_config_digest(config_to_json(cfg).dump());
  return cfg;
}

std::vector<LabeledSample> build_labeled_pool(const Scene& scene,
                                              const DataConfig& data,
                                              int input_size,
                                              std::uint64_t run_seed) {
  data.validate();
  if (!scene.config.render_images)
    throw ConfigError("labeled pool needs rendered scene images");
  auto labels = scene.gt2d;
  if (data.noise_std > 0.0) {
    Rng noise = Rng(run_seed).fork("noise");
    labels = perturb_annotations(labels, data.noise_std, noise);
  }

  const int views = scene.config.views, frames = scene.config.frames;
  std::vector<int> slots(static_cast<size_t>(views) * frames);
  std::iota(slots.begin(), slots.end(), 0);
  const auto n_keep = static_cast<size_t>(std::clamp<long long>(
      std::llround(data.fraction * static_cast<double>(slots.size())), 1,
      static_cast<long long>(slots.size())));
  if (n_keep < slots.size()) {
    Rng subset = Rng(run_seed).fork("subset");
    subset.shuffle(slots);
    slots.resize(n_keep);
    std::sort(slots.begin(), slots.end());
  }

  Rng aug = Rng(run_seed).fork("aug");
  std::vector<LabeledSample> pool;
  pool.reserve(slots.size() * static_cast<size_t>(data.copies));
  for (int slot : slots) {
    const int m = slot / frames, t = slot % frames;
    for (int c = 0; c < data.copies; ++c) {
      pool.push_back(make_labeled_sample(scene.images[m][t], scene.bboxes[m][t],
                                         labels[m][t], input_size, &aug));
    }
  }
  return pool;
}

std::vector<MetricRow> evaluate_detector(const DetectorParams& params,
                                         const Scene& test,
                                         const MetricConfig& metrics,
                                         std::uint64_t seed) {
  const DetectorFn crops = crop_detector_fn(params);
  EvalHooks hooks;
  hooks.in_frame = [&](int m, int t) {
    return detect_in_frame(params, test.images[m][t], test.bboxes[m][t]);
  };
  hooks.on_crops = [&](int, int) { return crops; };
  return evaluate_hooks(hooks, test, metrics, seed);
}

std::vector<MetricRow> evaluate_oracle(const Scene& test,
                                       const MetricConfig& metrics,
                                       std::uint64_t seed) {
  EvalHooks hooks;
  hooks.in_frame = [&](int m, int t) { return test.gt2d[m][t]; };
  hooks.on_crops = [&](int m, int t) -> DetectorFn {
    const std::vector<Point2> gt = test.gt2d[m][t];
    return [gt](const ScalarField&, const AffineTransform& crop_from_frame) {
      std::vector<Point2> out;
      out.reserve(gt.size());
      for (const Point2& p : gt) out.push_back(crop_from_frame.apply(p));
      return out;
    };
  };
  return evaluate_hooks(hooks, test, metrics, seed);
}

TrainResult run_training(const ExperimentConfig& cfg, std::uint64_t run_seed,
                         const DataConfig& data) {
  const ScenePack pack = load_training_scenes(cfg);
  const TrainDataset ds = dataset_from_pack(cfg, pack, run_seed, data);
  return train(ds, training_config_for(cfg, run_seed));
}

std::vector<AblateRow> run_ablation(const ExperimentConfig& cfg) {
  cfg.ablate.validate();
  const ScenePack pack = load_training_scenes(cfg);
  const Scene test = load_scene_dir(cfg.test_dir(), "test");
  require_rendered(test, "test");
  require_landmarks(test, cfg.train.detector.landmarks, "test");

  std::vector<AblateRow> rows;
  for (const double noise_std : cfg.ablate.noise_stds) {
    for (const double fraction : cfg.ablate.data_fractions) {
      DataConfig cell = cfg.data;
      cell.noise_std = noise_std;
      cell.fraction = fraction;

      std::map<std::string, std::pair<double, int>> sums;
      std::map<std::string, std::string> normalizers;
      std::vector<std::string> metric_order;
      for (const std::uint64_t seed : cfg.ablate.seeds) {
        AblateRow base;
        base.noise_std = noise_std;
        base.data_fraction = fraction;
        base.seed = std::to_string(seed);
        try {
          const TrainDataset ds = dataset_from_pack(cfg, pack, seed, cell);
          const TrainResult r = train(ds, training_config_for(cfg, seed));
          const auto metrics = evaluate_detector(r.params, test, cfg.metrics, seed);
          for (const MetricRow& mr : metrics) {
            AblateRow row = base;
            row.metric = mr.metric;
            row.value = mr.value;
            row.normalizer = mr.normalizer;
            rows.push_back(row);
            if (!sums.count(mr.metric)) metric_order.push_back(mr.metric);
            auto& acc = sums[mr.metric];
            acc.first += mr.value;
            acc.second += 1;
            normalizers[mr.metric] = mr.normalizer;
          }
        } catch (const std::exception& e) {
          AblateRow row = base;
          row.status = "failed";
          row.message = e.what();
          rows.push_back(row);
        }
      }

      AblateRow mean;
      mean.noise_std = noise_std;
      mean.data_fraction = fraction;
      mean.seed = "mean";
      if (metric_order.empty()) {
        mean.status = "failed";
        mean.message = "no successful seeds";
        rows.push_back(mean);
      } else {
        for (const std::string& metric : metric_order) {
          AblateRow row = mean;
          row.metric = metric;
          row.value = sums[metric].first / sums[metric].second;
          row.normalizer = normalizers[metric];
          rows.push_back(row);
        }
      }
    }
  }
  return rows;
}

std::vector<FlowcheckRow> run_flowcheck(const Scene& scene,
                                        const FlowcheckConfig& fc,
                                        const PatchSpec& patch,
                                        std::uint64_t seed) {
  fc.validate();
  if (!scene.config.render_images)
    throw ConfigError("flowcheck needs rendered scene images");
  const int views = scene.config.views, frames = scene.config.frames;
  if (frames < 2) throw ConfigError("flowcheck needs at least two frames");

  const int n_pairs = views * (frames - 1);
  const int per_pair = (fc.n_points + n_pairs - 1) / n_pairs;
  Rng rng = Rng(seed).fork("flowcheck");

  std::vector<FlowcheckRow> rows;
  double total_sum = 0.0, total_max = 0.0;
  int total_points = 0, total_skipped = 0;
  for (int m = 0; m < views; ++m) {
    for (int t = 1; t < frames; ++t) {
      const ScalarField& prev = scene.images[m][t - 1];
      const ScalarField& curr = scene.images[m][t];
      const FlowField flow = dense_flow_lk(prev, curr, patch);
      const Rect bb = scene.bboxes[m][t - 1];

      FlowcheckRow row{"pair", m, t, 0, 0, 0.0, 0.0};
      double sum = 0.0;
      for (int i = 0; i < per_pair; ++i) {
        const Point2 p{bb.x0 + rng.uniform() * bb.width(),
                       bb.y0 + rng.uniform() * bb.height()};
        const std::optional<Point2> interp = track_landmark_interp(flow, p);
        const TrackResult lk = track_landmark_lk(prev, curr, p, patch);
        if (!interp || !lk.valid || !lk.converged) {
          row.skipped += 1;
          continue;
        }
        const double d = norm2(*interp - lk.point);
        sum += d;
        row.max_px = std::max(row.max_px, d);
        row.points += 1;
      }
      row.mean_px = row.points > 0 ? sum / row.points : 0.0;
      total_sum += sum;
      total_max = std::max(total_max, row.max_px);
      total_points += row.points;
      total_skipped += row.skipped;
      rows.push_back(row);
    }
  }
  FlowcheckRow overall{"overall", 0, 0, total_points, total_skipped,
                       total_points > 0 ? total_sum / total_points : 0.0, total_max};
  rows.push_back(overall);
  return rows;
}

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Semi-supervised landmark training on synthetic multi-view video"};
  app.name("srt");
  app.require_subcommand(1);

  std::string config_path;
  CliOverrides overrides;
  std::string out_flag, mode_flag;
  std::uint64_t seed_flag = 0;
  int jobs = 1;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "experiment config (JSON)")->required();
    sub->add_option("--out", out_flag, "override the output directory");
    sub->add_option("--seed", seed_flag, "override the top-level seed");
    sub->add_option("--mode", mode_flag, "override the supervision mode")
        ->check(CLI::IsMember({"baseline", "sbr", "sbt", "srt"}));
    sub->add_option("--jobs", jobs, "worker count (runs are serial; accepted for compatibility)")
        ->check(CLI::Range(1, 1 << 16));
  };
  CLI::App* synth = app.add_subcommand("synth", "generate the configured scenes");
  CLI::App* train = app.add_subcommand("train", "train a detector on the scenes");
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test scene");
  CLI::App* ablate = app.add_subcommand("ablate", "run the noise/data-size sweep");
  CLI::App* flowcheck = app.add_subcommand("flowcheck", "compare interpolated flow with the tracker");
  for (CLI::App* sub : {synth, train, eval, ablate, flowcheck}) add_common(sub);

  std::vector<const char*> argv;
  argv.push_back("srt");
  for (const std::string& a : args) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    const bool is_synth = app.got_subcommand(synth);
    auto any_count = [&](const char* flag) {
      for (CLI::App* sub : {synth, train, eval, ablate, flowcheck})
        if (sub->count(flag)) return true;
      return false;
    };
    if (any_count("--out")) {
      // synth's natural output is the scene tree, so --out points there.
      if (is_synth) overrides.scene_root = out_flag;
      else overrides.out_dir = out_flag;
    }
    if (any_count("--seed")) overrides.seed = seed_flag;
    if (any_count("--mode")) overrides.mode = mode_flag;

    const ExperimentConfig cfg = load_experiment_config(config_path, overrides);
    std::cout << "config-hash " << cfg.config_hash << "\n";

    if (is_synth) return cmd_synth(cfg);
    if (app.got_subcommand(train)) return cmd_train(cfg);
    if (app.got_subcommand(eval)) return cmd_eval(cfg);
    if (app.got_subcommand(ablate)) return cmd_ablate(cfg);
    if (app.got_subcommand(flowcheck)) return cmd_flowcheck(cfg);
    throw ConfigError("no command given");
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace srt
