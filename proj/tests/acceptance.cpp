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

// Acceptance suite: one PASS/FAIL line per criterion, tolerances pinned here.
// Exit status is nonzero if any criterion fails.

#include "worldseed/worldseed.hpp"

#include "alignment_oracle.hpp"
#include "gsplat_oracle.hpp"
#include "layering_oracle.hpp"
#include "loss_oracle.hpp"
#include "test_util.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <thread>

namespace ws = worldseed;
namespace wt = worldseed::testing;

namespace {

// Pinned tolerances.
constexpr double kRoundTripDepthTol = 1e-9;
constexpr double kGeometrySeconds = 10.0;
constexpr int kGeometryFrames = 100;
constexpr int kZBufferClouds = 100;
constexpr int kLayerCases = 1000;
constexpr int kAlignSteps = 200;
constexpr double kRayAngleTol = 1e-12;
constexpr double kBandRelTol = 1e-6;
constexpr int kGradScenes = 50;
constexpr double kGradRelTol = 1e-3;
constexpr double kGradSeconds = 60.0;
constexpr int kLossCases = 200;
constexpr double kLossRefTol = 1e-8;
constexpr double kRunSeconds = 300.0;
constexpr double kTrainPsnr = 28.0;
constexpr double kHoldoutPsnr = 22.0;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      if (!pass) detail << "; ";
      else detail.str("");
      pass = false;
      detail << what;
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Pixel-major brute force: for every pixel scan every point, keep the
// nearest strictly positive depth past the near plane, first index on ties.
ws::RgbdFrame brute_force_zbuffer(const ws::WorldCloud& cloud, const ws::CameraIntrinsics& k,
                                  const ws::CameraPose& pose) {
  ws::RgbdFrame out{ws::ColorImage(k.width, k.height, ws::Rgb::Zero()),
                    ws::DepthMap(k.width, k.height, 0.0), ws::CoverageMask(k.width, k.height, 0)};
  for (int v = 0; v < k.height; ++v) {
    for (int u = 0; u < k.width; ++u) {
      double best = std::numeric_limits<double>::infinity();
      long who = -1;
      for (std::size_t i = 0; i < cloud.size(); ++i) {
        const ws::Vec3 c = pose.rotation * cloud.points[i].position + pose.translation;
        if (c.z() <= 1e-4) continue;
        const double x = k.fx * c.x() / c.z() + k.cx;
        const double y = k.fy * c.y() / c.z() + k.cy;
        if (std::floor(x + 0.5) != u || std::floor(y + 0.5) != v) continue;
        if (c.z() < best) {
          best = c.z();
          who = static_cast<long>(i);
        }
      }
      if (who < 0) continue;
      out.mask(u, v) = 1;
      out.depth(u, v) = best;
      out.image(u, v) = cloud.points[who].color;
    }
  }
  return out;
}

void geometry_round_trip(Outcome& o) {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> du(0.2, 20.0), uu(0.0, 1.0);
  double worst = 0.0;
  std::size_t color_miss = 0, coverage_miss = 0;
  for (int t = 0; t < kGeometryFrames; ++t) {
    const int w = 2 + static_cast<int>(rng() % 63), h = 2 + static_cast<int>(rng() % 63);
    const auto k = ws::CameraIntrinsics::defaults_for(w, h);
    const auto pose = wt::random_pose(rng);
    ws::RgbdFrame f{wt::random_image(w, h, rng), ws::DepthMap(w, h, 0.0), wt::random_mask(w, h, 0.8, rng)};
    for (std::size_t i = 0; i < f.depth.size(); ++i) f.depth[i] = f.mask[i] ? du(rng) : ws::kInvalidDepth;
    const auto back = ws::project_cloud(ws::lift_rgbd(f, k, pose, f.mask), k, pose);
    for (std::size_t i = 0; i < f.mask.size(); ++i) {
      if (!f.mask[i]) continue;
      if (!back.mask[i]) {
        ++coverage_miss;
        continue;
      }
      if (back.image[i] != f.image[i]) ++color_miss;
      worst = std::max(worst, std::abs(back.depth[i] - f.depth[i]));
    }
  }
  std::size_t zbuf_miss = 0;
  for (int t = 0; t < kZBufferClouds; ++t) {
    const int w = 2 + static_cast<int>(rng() % 31), h = 2 + static_cast<int>(rng() % 31);
    const auto k = ws::CameraIntrinsics::defaults_for(w, h);
    const auto pose = wt::random_pose(rng, 0.5);
    ws::WorldCloud cloud;
    const std::size_t n = 1 + rng() % 1000;
    for (std::size_t i = 0; i < n; ++i) {
      if (i > 0 && rng() % 10 == 0) {  // exact duplicate position, new color
        auto p = cloud.points[rng() % i];
        p.color = wt::random_rgb(rng);
        cloud.points.push_back(p);
        continue;
      }
      const ws::Vec3 cam((uu(rng) * 2.4 - 1.2) * 4, (uu(rng) * 2.4 - 1.2) * 4, uu(rng) * 9 - 1);
      cloud.points.push_back({pose.to_world(cam), wt::random_rgb(rng), 0});
    }
    const auto fast = ws::project_cloud(cloud, k, pose);
    const auto slow = brute_force_zbuffer(cloud, k, pose);
    for (std::size_t i = 0; i < fast.mask.size(); ++i) {
      if (fast.mask[i] != slow.mask[i] || (slow.mask[i] && (fast.depth[i] != slow.depth[i] ||
                                                            fast.image[i] != slow.image[i]))) {
        ++zbuf_miss;
      }
    }
  }
  const double secs = seconds_since(t0);
  o.detail << kGeometryFrames << " frames, max depth error " << worst << ", " << kZBufferClouds
           << " z-buffer clouds match, " << secs << " s";
  o.require(coverage_miss == 0, std::to_string(coverage_miss) + " covered pixels lost");
  o.require(color_miss == 0, std::to_string(color_miss) + " color mismatches");
  o.require(worst <= kRoundTripDepthTol, "depth error above tolerance");
  o.require(zbuf_miss == 0, std::to_string(zbuf_miss) + " z-buffer pixels differ from brute force");
  o.require(secs < kGeometrySeconds, "too slow");
}

void layering_equivalence(Outcome& o) {
  std::mt19937_64 rng(202);
  const ws::layering::LayerThresholds t{0.85, 0.005, 0.60, 0.35};
  int mismatches = 0;
  for (int c = 0; c < kLayerCases; ++c) mismatches += wt::layer_mismatches(wt::random_layer_case(rng), t);
  o.detail << kLayerCases << " cases, " << mismatches << " mismatches";
  o.require(mismatches == 0, std::to_string(mismatches) + " mismatches against the oracle");
}

void alignment_contract(Outcome& o) {
  std::mt19937_64 rng(303);
  double ray = 0.0, band = 0.0;
  std::size_t moves = 0, band_total = 0;
  bool monotone = true, identity = true;
  for (int s = 0; s < kAlignSteps; ++s) {
    const auto c = wt::check_align_step(wt::random_align_step(rng));
    ray = std::max(ray, c.max_ray_angle);
    band = std::max(band, c.max_band_rel_error);
    moves += c.pixel_moves;
    band_total += c.band;
    monotone = monotone && c.monotone;
    const auto u = wt::check_align_step(wt::random_align_step(rng, true));
    identity = identity && u.identity_exact && u.monotone;
  }
  o.detail << 2 * kAlignSteps << " steps, max ray angle " << ray << " rad, max band error " << band
           << ", " << band_total << " band samples";
  o.require(ray <= kRayAngleTol, "a point left its camera ray");
  o.require(moves == 0, std::to_string(moves) + " points changed pixel");
  o.require(band <= kBandRelTol, "band depth error above tolerance");
  o.require(band_total > 0, "no band samples exercised");
  o.require(monotone, "cloud size not monotone");
  o.require(identity, "unit factors moved a point");
}

void gradient_check(Outcome& o) {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(404);
  double worst = 0.0;
  std::size_t params = 0;
  for (int s = 0; s < kGradScenes; ++s) {
    const auto c = wt::check_gradients(wt::random_micro_scene(rng));
    worst = std::max(worst, c.max_rel_error);
    params += c.parameters;
  }
  const double secs = seconds_since(t0);
  o.detail << kGradScenes << " scenes, " << params << " parameters, max relative error " << worst
           << ", " << secs << " s";
  o.require(worst < kGradRelTol, "relative error above tolerance");
  o.require(secs < kGradSeconds, "too slow");
}

void masked_loss_contract(Outcome& o) {
  std::mt19937_64 rng(505);
  double worst = 0.0;
  bool exact = true, zero_outside = true, self_zero = true;
  for (int c = 0; c < kLossCases; ++c) {
    const int w = 3 + static_cast<int>(rng() % 30), h = 3 + static_cast<int>(rng() % 30);
    const auto r = wt::check_loss_contract(rng, w, h);
    worst = std::max(worst, r.max_value_error);
    exact = exact && r.masked_out_exact;
    zero_outside = zero_outside && r.zero_grad_outside;
    const auto x = wt::random_image(w, h, rng);
    auto m = wt::random_mask(w, h, 0.5, rng);
    m[0] = 1;
    self_zero = self_zero && ws::loss::masked_loss(x, x, m, {}).total == 0.0;
  }
  // Through the rasterizer: garbage targets under mask = 0 leave every splat gradient unchanged.
  bool splat_exact = true;
  for (int c = 0; c < 20; ++c) {
    auto scene = wt::random_micro_scene(rng);
    const auto a = ws::gsplat::gradients(scene.splats, scene.k, scene.view, {});
    for (std::size_t i = 0; i < scene.view.image.size(); ++i) {
      if (!scene.view.mask[i]) scene.view.image[i] = wt::random_rgb(rng);
    }
    const auto b = ws::gsplat::gradients(scene.splats, scene.k, scene.view, {});
    splat_exact = splat_exact && a.loss.total == b.loss.total;
    for (std::size_t i = 0; i < a.grads.size(); ++i) {
      splat_exact = splat_exact && a.grads[i].position == b.grads[i].position &&
                    a.grads[i].log_scale == b.grads[i].log_scale &&
                    a.grads[i].rotation == b.grads[i].rotation &&
                    a.grads[i].opacity_logit == b.grads[i].opacity_logit &&
                    a.grads[i].color == b.grads[i].color;
    }
  }
  o.detail << kLossCases << " cases, max error vs reference " << worst;
  o.require(worst <= kLossRefTol, "loss differs from reference");
  o.require(exact, "mask=0 perturbation changed loss or gradient");
  o.require(zero_outside, "nonzero gradient at mask=0");
  o.require(self_zero, "loss(x,x) != 0");
  o.require(splat_exact, "mask=0 perturbation changed a splat gradient");
}

nlohmann::json metrics_of(const ws::pipeline::RunReport& r) {
  auto j = ws::pipeline::to_json(r);
  j.erase("timing_s");
  return j;
}

ws::gsplat::SplatScene trained;  // handed to the parallelism check

void end_to_end(Outcome& o) {
  const std::filesystem::path cfg_path = std::filesystem::path(WORLDSEED_SOURCE_DIR) / "configs/two_plane.json";
  std::ifstream in(cfg_path);
  auto cfg = ws::pipeline::config_from_json(nlohmann::json::parse(in), cfg_path.parent_path());
  cfg.output = std::filesystem::current_path() / "acceptance_two_plane";
  o.require(cfg.input.synthetic_width == 64 && cfg.input.synthetic_height == 64 &&
                cfg.trajectory.n_steps == 4 && cfg.extra_views == 8 && cfg.eval_views == 4 &&
                cfg.backends.all_builtin() && cfg.train.workers == 1,
            "config is not the specified setup");
  const auto t0 = std::chrono::steady_clock::now();
  const auto first = ws::pipeline::run(cfg);
  const double secs = seconds_since(t0);
  const auto& r = first.report;
  std::size_t prev = r.initial_cloud_size;
  int grown = 0, nontrivial = 0;
  for (const auto& s : r.steps) {
    if (s.skipped) continue;
    ++nontrivial;
    if (s.cloud_size > prev) ++grown;
    prev = s.cloud_size;
  }
  auto again_cfg = cfg;
  again_cfg.write_artifacts = false;
  const auto second = ws::pipeline::run(again_cfg);
  const bool same = metrics_of(first.report) == metrics_of(second.report);
  o.detail << secs << " s, cloud " << r.initial_cloud_size << " -> " << first.cloud.size() << " over "
           << nontrivial << " inpainted steps, train PSNR " << r.train_metrics.mean_psnr
           << " dB, held-out PSNR " << r.holdout_metrics.mean_psnr << " dB ("
           << r.holdout_metrics.views.size() << " views), rerun "
           << (same ? "identical" : "differs");
  o.require(secs < kRunSeconds, "too slow");
  o.require(nontrivial > 0 && grown == nontrivial, "cloud did not grow at every inpainted step");
  o.require(r.train_metrics.mean_psnr >= kTrainPsnr, "train PSNR below target");
  o.require(r.holdout_metrics.mean_psnr >= kHoldoutPsnr, "held-out PSNR below target");
  o.require(r.holdout_metrics.views.size() == 4, "expected 4 held-out views");
  o.require(same, "rerun report differs");
  trained = first.scene;
}

void parallel_determinism(Outcome& o) {
  const unsigned max_workers = std::max(8u, std::thread::hardware_concurrency());
  std::mt19937_64 rng(707);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<ws::gsplat::Splat> splats;
  for (int i = 0; i < 3000; ++i) {
    ws::gsplat::Splat s;
    s.position = ws::Vec3(u(rng) * 8 - 4, u(rng) * 6 - 3, 2 + 6 * u(rng));
    s.log_scale = ws::Vec3(std::log(0.02 + 0.2 * u(rng)), std::log(0.02 + 0.2 * u(rng)),
                           std::log(0.02 + 0.2 * u(rng)));
    s.rotation = ws::Vec4(u(rng) - 0.5, u(rng) - 0.5, u(rng) - 0.5, u(rng) - 0.5);
    s.opacity_logit = 4 * u(rng) - 2;
    s.color = wt::random_rgb(rng);
    splats.push_back(s);
  }
  std::size_t images = 0, differing = 0;
  auto compare = [&](const std::vector<ws::gsplat::Splat>& sp, const ws::CameraIntrinsics& k,
                     const ws::CameraPose& pose) {
    const auto a = ws::gsplat::rasterize(sp, k, pose, 1);
    const auto b = ws::gsplat::rasterize(sp, k, pose, max_workers);
    ++images;
    for (std::size_t i = 0; i < a.color.size(); ++i) {
      if (a.color[i] != b.color[i] || a.alpha[i] != b.alpha[i]) {
        ++differing;
        break;
      }
    }
  };
  const auto k = ws::CameraIntrinsics::defaults_for(160, 120);
  for (int p = 0; p < 5; ++p) compare(splats, k, wt::random_pose(rng, 0.3));
  compare(splats, k, ws::CameraPose::identity());
  if (!trained.splats.empty()) {
    for (const auto& v : trained.views) compare(trained.splats, trained.intrinsics, v.pose);
  }
  o.detail << images << " images, 1 vs " << max_workers << " workers, " << differing << " differ";
  o.require(differing == 0, "worker count changed the image");
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<void(Outcome&)>>> criteria{
      {"geometry round trip", geometry_round_trip},
      {"layering oracle equivalence", layering_equivalence},
      {"alignment contract", alignment_contract},
      {"rasterizer gradient check", gradient_check},
      {"masked loss contract", masked_loss_contract},
      {"end-to-end two-plane run", end_to_end},
      {"determinism under parallelism", parallel_determinism},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      fn(o);
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.str().c_str());
    std::fflush(stdout);
    if (!o.pass) ++failed;
  }
  return failed == 0 ? 0 : 1;
}
