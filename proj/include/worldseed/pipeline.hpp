/*
Copyright 2026 The WorldSeed Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS-IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/

// End-to-end scene generation: layer the input frame, grow the world cloud
// along the construction trajectory, reproject extra training views, fit
// the splat scene and evaluate it on held-out poses.

#pragma once

#include "worldseed/alignment.hpp"
#include "worldseed/backends.hpp"
#include "worldseed/layering.hpp"
#include "worldseed/train.hpp"
#include "worldseed/trajectory.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace worldseed::pipeline {

struct InputConfig {
  std::optional<std::filesystem::path> image;
  std::optional<std::filesystem::path> depth;
  double depth_scale = 0.001;  // meters per unit for 16-bit depth PNGs
  std::optional<std::string> text;
  std::optional<std::string> prompt;  // overrides the captioned prompt
  std::optional<scene::SyntheticScene> synthetic;
  int synthetic_width = 64;
  int synthetic_height = 64;
  std::optional<CameraIntrinsics> intrinsics;
};

struct PipelineConfig {
  InputConfig input;
  backends::BackendConfig backends;
  trajectory::TrajectoryPreset trajectory;
  int extra_views = 16;  // M
  int eval_views = 4;
  layering::LayerThresholds layering;
  double segment_jump = 0.15;
  gsplat::TrainConfig train;
  std::filesystem::path output = "out";
  std::uint64_t seed = 0;
  bool write_artifacts = true;

  int steps() const { return trajectory.n_steps; }

  void validate() const {
    const int sources = (input.image ? 1 : 0) + (input.synthetic ? 1 : 0) + (input.text ? 1 : 0);
    if (sources != 1) {
      throw ConfigError("input: exactly one of image, synthetic or text is required");
    }
    if (input.depth && !input.image) throw ConfigError("input.depth requires input.image");
    if (!(input.depth_scale > 0.0)) throw ConfigError("input.depth_scale must be > 0");
    if (input.synthetic && (input.synthetic_width < 2 || input.synthetic_height < 2)) {
      throw ConfigError("input: synthetic frame size must be at least 2x2");
    }
    if (extra_views < 0) throw ConfigError("extra_views (M) must be >= 0");
    if (eval_views < 1) throw ConfigError("eval_views must be >= 1");
    if (!(segment_jump > 0.0)) throw ConfigError("layering.segment_jump must be > 0");
    try {
      trajectory.validate();
      layering.validate();
      train.validate();
      if (input.intrinsics) input.intrinsics->validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
};

namespace detail {
inline Vec3 vec3(const nlohmann::json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) throw ConfigError(std::string(what) + " must be a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}
}  // namespace detail

/// Parses the pipeline JSON; relative paths resolve against `base_dir`.
inline PipelineConfig config_from_json(const nlohmann::json& j,
                                       const std::filesystem::path& base_dir = {}) {
  PipelineConfig c;
  try {
    auto resolve = [&](const std::string& p) {
      std::filesystem::path path(p);
      return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
    };
    const auto& in = j.at("input");
    if (in.contains("image")) c.input.image = resolve(in.at("image").get<std::string>());
    if (in.contains("depth")) c.input.depth = resolve(in.at("depth").get<std::string>());
    c.input.depth_scale = in.value("depth_scale", c.input.depth_scale);
    if (in.contains("text")) c.input.text = in.at("text").get<std::string>();
    if (in.contains("prompt")) c.input.prompt = in.at("prompt").get<std::string>();
    if (in.contains("synthetic")) {
      c.input.synthetic = scene::scene_from_json(in.at("synthetic"));
      c.input.synthetic_width = in.value("width", c.input.synthetic_width);
      c.input.synthetic_height = in.value("height", c.input.synthetic_height);
    }
    if (in.contains("intrinsics")) c.input.intrinsics = io::intrinsics_from_json(in.at("intrinsics"));

    if (j.contains("backends")) c.backends = backends::BackendConfig::from_json(j.at("backends"));

    if (j.contains("trajectory")) {
      const auto& t = j.at("trajectory");
      c.trajectory.kind = trajectory::kind_from_string(t.value("kind", std::string("orbit")));
      c.trajectory.n_steps = t.value("n_steps", c.trajectory.n_steps);
      c.trajectory.angle_span = t.value("angle_span", c.trajectory.angle_span);
      c.trajectory.radius = t.value("radius", c.trajectory.radius);
      if (t.contains("look_at")) c.trajectory.look_at = detail::vec3(t.at("look_at"), "trajectory.look_at");
    }
    c.extra_views = j.value("extra_views", 2 * c.trajectory.n_steps);
    c.eval_views = j.value("eval_views", c.eval_views);

    if (j.contains("layering")) {
      const auto& l = j.at("layering");
      c.layering.tau_iou = l.value("tau_iou", c.layering.tau_iou);
      c.layering.area_min = l.value("area_min", c.layering.area_min);
      c.layering.area_max = l.value("area_max", c.layering.area_max);
      c.layering.depth_percentile = l.value("depth_percentile", c.layering.depth_percentile);
      c.segment_jump = l.value("segment_jump", c.segment_jump);
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      auto& tc = c.train;
      tc.iterations = t.value("iterations", tc.iterations);
      tc.lr_position = t.value("lr_position", tc.lr_position);
      tc.lr_color = t.value("lr_color", tc.lr_color);
      tc.lr_opacity = t.value("lr_opacity", tc.lr_opacity);
      tc.lr_scale = t.value("lr_scale", tc.lr_scale);
      tc.lr_rotation = t.value("lr_rotation", tc.lr_rotation);
      tc.loss.ssim_weight = t.value("ssim_weight", tc.loss.ssim_weight);
      tc.loss.ssim_window = t.value("ssim_window", tc.loss.ssim_window);
      tc.workers = t.value("workers", tc.workers);
      tc.eval_interval = t.value("eval_interval", tc.eval_interval);
    }
    c.output = j.contains("output") ? resolve(j.at("output").get<std::string>()) : c.output;
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

struct StepRecord {
  int step = 0;
  bool skipped = false;
  double inpainted_fraction = 0.0;
  std::size_t band_size = 0;
  double mean_shift_factor = 1.0;
  std::size_t new_points = 0;
  std::size_t cloud_size = 0;
};

struct ViewMetrics {
  double psnr = 0.0;
  double ssim = 0.0;
};

struct Metrics {
  std::vector<ViewMetrics> views;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
};

struct RunReport {
  std::string prompt;
  double theta_d = 0.0;
  std::size_t occlusion_pixels = 0;
  std::size_t initial_cloud_size = 0;
  std::vector<StepRecord> steps;
  std::size_t training_views = 0;
  gsplat::TrainReport train;
  Metrics train_metrics;
  Metrics holdout_metrics;
  std::map<std::string, double> timing_s;
};

/// Masked PSNR / SSIM of the scene rendered at each view.
inline Metrics evaluate(const gsplat::SplatScene& scene,
                        const std::vector<gsplat::TrainingView>& holdout,
                        unsigned workers = 1) {
  if (holdout.empty()) throw std::invalid_argument("evaluate: no holdout views");
  Metrics m;
  for (const auto& v : holdout) {
    const auto r = gsplat::rasterize(scene.splats, scene.intrinsics, v.pose, workers);
    m.views.push_back({loss::masked_psnr(r.color, v.image, v.mask),
                       loss::masked_ssim(r.color, v.image, v.mask)});
  }
  for (const auto& v : m.views) {
    m.mean_psnr += v.psnr;
    m.mean_ssim += v.ssim;
  }
  m.mean_psnr /= static_cast<double>(m.views.size());
  m.mean_ssim /= static_cast<double>(m.views.size());
  return m;
}

inline nlohmann::json to_json(const Metrics& m) {
  auto views = nlohmann::json::array();
  for (const auto& v : m.views) views.push_back({{"psnr", v.psnr}, {"ssim", v.ssim}});
  return {{"views", views}, {"mean_psnr", m.mean_psnr}, {"mean_ssim", m.mean_ssim}};
}

inline nlohmann::json to_json(const RunReport& r) {
  auto steps = nlohmann::json::array();
  for (const auto& s : r.steps) {
    steps.push_back({{"step", s.step},
                     {"skipped", s.skipped},
                     {"inpainted_fraction", s.inpainted_fraction},
                     {"band_size", s.band_size},
                     {"mean_shift_factor", s.mean_shift_factor},
                     {"new_points", s.new_points},
                     {"cloud_size", s.cloud_size}});
  }
  return {{"prompt", r.prompt},
          {"theta_d", r.theta_d},
          {"occlusion_pixels", r.occlusion_pixels},
          {"initial_cloud_size", r.initial_cloud_size},
          {"steps", steps},
          {"training_views", r.training_views},
          {"train", {{"initial_loss", r.train.initial_loss},
                     {"final_loss", r.train.final_loss},
                     {"iterations", r.train.iterations},
                     {"eval_losses", r.train.eval_losses}}},
          {"metrics", {{"train", to_json(r.train_metrics)}, {"holdout", to_json(r.holdout_metrics)}}},
          {"timing_s", r.timing_s}};
}

struct RunResult {
  RunReport report;
  WorldCloud cloud;
  gsplat::SplatScene scene;
  std::vector<gsplat::TrainingView> holdout;
};

using Logger = std::function<void(const std::string&)>;

namespace detail {

class StageTimer {
 public:
  explicit StageTimer(std::map<std::string, double>& sink) : sink_(sink) {}
  void mark(const std::string& stage) {
    const auto now = std::chrono::steady_clock::now();
    sink_[stage] += std::chrono::duration<double>(now - last_).count();
    last_ = now;
  }

 private:
  std::map<std::string, double>& sink_;
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

inline void stamp(WorldCloud& cloud, int step) {
  for (auto& p : cloud.points) p.origin_step = step;
}

inline std::string indexed(const char* stem, int i, const char* ext) {
  return std::string(stem) + "_" + std::to_string(i) + ext;
}

}  // namespace detail

/// Reprojections of `cloud` at `poses`; views with no coverage are dropped.
inline std::vector<gsplat::TrainingView> reproject_views(const WorldCloud& cloud,
                                                         const CameraIntrinsics& k,
                                                         const std::vector<CameraPose>& poses) {
  std::vector<gsplat::TrainingView> views;
  for (const auto& pose : poses) {
    auto f = project_cloud(cloud, k, pose);
    if (count_ones(f.mask) == 0) continue;
    views.push_back({std::move(f.image), std::move(f.mask), pose});
  }
  return views;
}

inline RunResult run(const PipelineConfig& cfg, const backends::BackendSuite& suite,
                     const Logger& log = {}) {
  cfg.validate();
  auto say = [&](const std::string& msg) { if (log) log(msg); };
  RunResult result;
  RunReport& report = result.report;
  detail::StageTimer timer(report.timing_s);

  if (cfg.input.text) {
    throw ConfigError(
        "text-only input needs an image generator; none of the configured backends provides "
        "one (pass an image)");
  }

  // (1) Initial frame.
  ColorImage image0;
  DepthMap depth0;
  CameraIntrinsics k;
  const CameraPose pose0 = CameraPose::identity();
  if (cfg.input.synthetic) {
    k = cfg.input.intrinsics.value_or(
        CameraIntrinsics::defaults_for(cfg.input.synthetic_width, cfg.input.synthetic_height));
    auto f = cfg.input.synthetic->render(k, pose0);
    if (count_ones(f.mask) != f.mask.size()) {
      throw ConfigError("synthetic scene does not cover the whole input frame");
    }
    image0 = std::move(f.image);
    depth0 = std::move(f.depth);
  } else {
    try {
      image0 = io::decode_color_png(io::read_file(*cfg.input.image));
    } catch (const io::FormatError& e) {
      throw ConfigError(std::string("input image: ") + e.what());
    }
    k = cfg.input.intrinsics.value_or(CameraIntrinsics::defaults_for(image0.width(), image0.height()));
    if (cfg.input.depth) {
      try {
        const auto bytes = io::read_file(*cfg.input.depth);
        depth0 = cfg.input.depth->extension() == ".pfm"
                     ? io::decode_pfm(bytes)
                     : io::decode_depth_png16(bytes, cfg.input.depth_scale);
      } catch (const io::FormatError& e) {
        throw ConfigError(std::string("input depth: ") + e.what());
      }
      require_same_shape(image0, depth0, "input depth");
    } else {
      depth0 = suite.raw_depth(image0, k, pose0);
    }
  }
  if (image0.width() != k.width || image0.height() != k.height) {
    throw ConfigError("input intrinsics do not match the image size");
  }
  timer.mark("load");

  // (2) Layering and occlusion inpainting.
  const auto decomposition = layering::decompose(
      layering::builtin_segment(depth0, cfg.segment_jump), depth0, cfg.layering);
  report.theta_d = decomposition.theta_d;
  report.occlusion_pixels = count_ones(decomposition.occlusion);
  if (cfg.input.prompt) {
    report.prompt = *cfg.input.prompt;
  } else {
    const auto cap = suite.caption(image0);
    report.prompt = layering::build_prompt(cap.category, cap.colors);
  }
  say("prompt: " + report.prompt);
  if (report.occlusion_pixels > 0) {
    backends::InpaintRequest req{image0, layering::complement(decomposition.occlusion),
                                 report.prompt, layering::normalized_depth(depth0)};
    image0 = suite.inpaint(req);
  }
  timer.mark("layering");

  // (3) Initial cloud.
  RgbdFrame frame0{image0, depth0, valid_mask(depth0)};
  WorldCloud cloud = lift_rgbd(frame0, k, pose0, frame0.mask);
  detail::stamp(cloud, 0);
  report.initial_cloud_size = cloud.size();
  say("initial cloud: " + std::to_string(cloud.size()) + " points");
  if (cfg.write_artifacts) {
    std::filesystem::create_directories(cfg.output);
    io::write_file(cfg.output / "cloud_step_0.ply", io::encode_ply(cloud));
  }

  // (4) Augment, align, merge.
  const auto poses = trajectory::construction_poses(cfg.trajectory);
  std::vector<gsplat::TrainingView> views;
  views.push_back({image0, CoverageMask(k.width, k.height, 1), pose0});
  for (int i = 1; i <= cfg.steps(); ++i) {
    const CameraPose& pose = poses[i];
    StepRecord rec;
    rec.step = i;
    auto projected = project_cloud(cloud, k, pose);
    const std::size_t known = count_ones(projected.mask);
    rec.inpainted_fraction = 1.0 - static_cast<double>(known) / projected.mask.size();
    if (known == projected.mask.size()) {
      rec.skipped = true;
      rec.cloud_size = cloud.size();
      report.steps.push_back(rec);
      views.push_back({projected.image, projected.mask, pose});
      say("step " + std::to_string(i) + ": fully covered, no inpainting");
      continue;
    }
    if (known == 0) {
      throw BackendError("step " + std::to_string(i) + ": camera sees none of the existing cloud");
    }
    ColorImage filled;
    DepthMap raw;
    try {
      backends::InpaintRequest req{projected.image, projected.mask, report.prompt,
                                   layering::normalized_depth(projected.depth)};
      filled = suite.inpaint(req);
      raw = suite.raw_depth(filled, k, pose);
    } catch (const BackendError& e) {
      throw BackendError("step " + std::to_string(i) + ": " + e.what());
    }
    // Lifting reads the hinted map; at fill pixels it equals the raw
    // estimate. The band compares against the raw estimate, since the hint
    // makes the two agree on every known pixel by construction.
    const DepthMap hinted = backends::BackendSuite::apply_hint(raw, projected.depth);
    const CoverageMask fill = layering::complement(projected.mask);
    WorldCloud fresh = lift_rgbd(RgbdFrame{filled, hinted, fill}, k, pose, fill);
    auto aligned = alignment::align(fresh, projected.mask, projected.depth, raw, k, pose);
    detail::stamp(aligned.aligned, i);
    rec.band_size = aligned.band_size;
    rec.mean_shift_factor = aligned.mean_factor;
    rec.new_points = aligned.aligned.size();
    cloud = alignment::merge(cloud, aligned.aligned);
    rec.cloud_size = cloud.size();
    report.steps.push_back(rec);
    views.push_back({filled, CoverageMask(k.width, k.height, 1), pose});
    say("step " + std::to_string(i) + ": +" + std::to_string(rec.new_points) + " points (" +
        std::to_string(cloud.size()) + " total), band " + std::to_string(rec.band_size));
    if (cfg.write_artifacts) {
      io::write_file(cfg.output / detail::indexed("cloud_step", i, ".ply"), io::encode_ply(cloud));
    }
  }
  timer.mark("world");

  // (5) Extra views: plain reprojections, never inpainted.
  if (cfg.extra_views > 0) {
    const auto extra = reproject_views(
        cloud, k, trajectory::training_poses(cfg.trajectory, cfg.extra_views, cfg.seed));
    views.insert(views.end(), extra.begin(), extra.end());
  }
  report.training_views = views.size();

  // (6) Splat training.
  gsplat::SplatScene scene = gsplat::init_scene(cloud, k);
  scene.views = views;
  gsplat::TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  say("training " + std::to_string(scene.splats.size()) + " splats on " +
      std::to_string(views.size()) + " views");
  scene = gsplat::optimize(scene, tc, &report.train);
  timer.mark("train");

  // (7) Evaluation on held-out perturbed poses.
  result.holdout = reproject_views(
      cloud, k, trajectory::training_poses(cfg.trajectory, cfg.eval_views, cfg.seed ^ 0x9e3779b97f4a7c15ULL));
  if (result.holdout.empty()) throw BackendError("no held-out view sees the cloud");
  report.train_metrics = evaluate(scene, scene.views, tc.workers);
  report.holdout_metrics = evaluate(scene, result.holdout, tc.workers);
  timer.mark("evaluate");

  if (cfg.write_artifacts) {
    const auto& out = cfg.output;
    for (std::size_t v = 0; v < scene.views.size(); ++v) {
      const int i = static_cast<int>(v);
      io::write_file(out / detail::indexed("view", i, ".png"), io::encode_color_png(scene.views[v].image));
      io::write_file(out / detail::indexed("mask", i, ".png"), io::encode_mask_png(scene.views[v].mask));
      std::ofstream(out / detail::indexed("pose", i, ".json")) << io::to_json(scene.views[v].pose).dump(2);
    }
    for (std::size_t v = 0; v < result.holdout.size(); ++v) {
      const auto r = gsplat::rasterize(scene.splats, k, result.holdout[v].pose, tc.workers);
      io::write_file(out / detail::indexed("render", static_cast<int>(v), ".png"),
                     io::encode_color_png(r.color));
    }
    gsplat::save_checkpoint(out / "scene.ckpt", scene);
    timer.mark("write");
    std::ofstream(out / "report.json") << to_json(report).dump(2);
  }

  result.cloud = std::move(cloud);
  result.scene = std::move(scene);
  return result;
}

/// Builds the backend suite the config asks for and runs.
inline RunResult run(const PipelineConfig& cfg, const std::optional<std::string>& sidecar = std::nullopt,
                     const Logger& log = {}) {
  cfg.validate();
  if (cfg.input.text && cfg.backends.all_builtin()) {
    throw ConfigError("text-only input is not supported with builtin backends");
  }
  if (cfg.backends.depth == "builtin" && !cfg.input.synthetic) {
    throw ConfigError("the builtin depth backend needs a synthetic input scene");
  }
  const auto suite = backends::make_suite(cfg.backends, cfg.input.synthetic, sidecar);
  return run(cfg, suite, log);
}

/// Loads view_i.png / mask_i.png / pose_i.json triples from a run directory.
inline std::vector<gsplat::TrainingView> load_views(const std::filesystem::path& dir) {
  std::vector<gsplat::TrainingView> views;
  for (int i = 0;; ++i) {
    const auto img = dir / detail::indexed("view", i, ".png");
    if (!std::filesystem::exists(img)) break;
    gsplat::TrainingView v;
    v.image = io::decode_color_png(io::read_file(img));
    const auto mask_path = dir / detail::indexed("mask", i, ".png");
    v.mask = std::filesystem::exists(mask_path)
                 ? io::decode_mask_png(io::read_file(mask_path))
                 : CoverageMask(v.image.width(), v.image.height(), 1);
    std::ifstream pose_in(dir / detail::indexed("pose", i, ".json"));
    if (!pose_in) throw io::FormatError("missing pose file for view " + std::to_string(i));
    v.pose = io::pose_from_json(nlohmann::json::parse(pose_in));
    views.push_back(std::move(v));
  }
  return views;
}

}  // namespace worldseed::pipeline
