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

// worldseed run    --config cfg.json [--sidecar URL] [--seed S] [--out DIR]
// worldseed render --scene scene.ckpt --pose pose.json [--out image.png]
// worldseed eval   --scene scene.ckpt --views DIR
//
// Exit codes: 0 ok, 1 other failure, 2 config error, 3 backend error,
// 4 optimization diverged.

#include "worldseed/worldseed.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

namespace ws = worldseed;

namespace {

constexpr int kExitOther = 1;
constexpr int kExitConfig = 2;
constexpr int kExitBackend = 3;
constexpr int kExitDiverged = 4;

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ws::ConfigError("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ws::ConfigError(path + ": " + e.what());
  }
}

int cmd_run(const std::string& config_path, const std::optional<std::string>& sidecar,
            const std::optional<std::uint64_t>& seed, const std::optional<std::string>& out,
            const std::optional<unsigned>& workers, const std::optional<int>& iterations, bool quiet) {
  auto cfg = ws::pipeline::config_from_json(
      read_json(config_path), std::filesystem::path(config_path).parent_path());
  if (seed) cfg.seed = *seed;
  if (out) cfg.output = *out;
  if (workers) cfg.train.workers = *workers;
  if (iterations) cfg.train.iterations = *iterations;
  cfg.validate();
  const auto result = ws::pipeline::run(cfg, sidecar, [quiet](const std::string& msg) {
    if (!quiet) std::cerr << msg << "\n";
  });
  const auto& r = result.report;
  std::cout << "cloud: " << result.cloud.size() << " points, splats: " << result.scene.splats.size()
            << "\n"
            << "train loss: " << r.train.initial_loss << " -> " << r.train.final_loss << "\n"
            << "train PSNR: " << r.train_metrics.mean_psnr << " dB, SSIM " << r.train_metrics.mean_ssim
            << "\n"
            << "held-out PSNR: " << r.holdout_metrics.mean_psnr << " dB, SSIM "
            << r.holdout_metrics.mean_ssim << "\n"
            << "artifacts: " << cfg.output.string() << "\n";
  return 0;
}

int cmd_render(const std::string& scene_path, const std::string& pose_path, const std::string& out) {
  const auto scene = ws::gsplat::load_checkpoint(scene_path);
  const auto pose = ws::io::pose_from_json(read_json(pose_path));
  const auto img = ws::gsplat::rasterize(scene.splats, scene.intrinsics, pose, ws::default_workers());
  ws::io::write_file(out, ws::io::encode_color_png(img.color));
  std::cout << out << "\n";
  return 0;
}

int cmd_eval(const std::string& scene_path, const std::string& views_dir) {
  const auto scene = ws::gsplat::load_checkpoint(scene_path);
  const auto views = ws::pipeline::load_views(views_dir);
  if (views.empty()) throw ws::ConfigError("no view_0.png found in " + views_dir);
  const auto m = ws::pipeline::evaluate(scene, views, ws::default_workers());
  std::cout << ws::pipeline::to_json(m).dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"worldseed: single image to explorable splat scene"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::string> sidecar, out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> workers;
  std::optional<int> iterations;
  bool quiet = false;
  auto* run = app.add_subcommand("run", "generate a scene from a config");
  run->add_option("--config", config_path, "pipeline config (JSON)")->required();
  run->add_option("--sidecar", sidecar, "model sidecar base URL");
  run->add_option("--seed", seed, "random seed");
  run->add_option("--out", out_dir, "output directory");
  run->add_option("--workers", workers, "rasterizer worker threads");
  run->add_option("--iterations", iterations, "optimizer iterations");
  run->add_flag("-q,--quiet", quiet, "no progress output");

  std::string scene_path, pose_path, render_out = "render.png", views_dir;
  auto* render = app.add_subcommand("render", "render a trained scene at a pose");
  render->add_option("--scene", scene_path, "scene checkpoint")->required();
  render->add_option("--pose", pose_path, "camera pose (JSON)")->required();
  render->add_option("--out", render_out, "output PNG");

  auto* eval = app.add_subcommand("eval", "masked PSNR/SSIM of a scene against saved views");
  eval->add_option("--scene", scene_path, "scene checkpoint")->required();
  eval->add_option("--views", views_dir, "directory with view_i.png, mask_i.png, pose_i.json")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (run->parsed()) return cmd_run(config_path, sidecar, seed, out_dir, workers, iterations, quiet);
    if (render->parsed()) return cmd_render(scene_path, pose_path, render_out);
    if (eval->parsed()) return cmd_eval(scene_path, views_dir);
  } catch (const ws::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ws::BackendError& e) {
    std::cerr << "backend error: " << e.what() << "\n";
    return kExitBackend;
  } catch (const ws::DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitOther;
  }
  return kExitOther;
}
