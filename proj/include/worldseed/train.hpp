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

// Splat scene optimization against masked training views, and the
// binary scene checkpoint.

#pragma once

#include "worldseed/gsplat.hpp"
#include "worldseed/io.hpp"
#include "worldseed/loss.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

namespace worldseed::gsplat {

struct TrainingView {
  ColorImage image;
  CoverageMask mask;
  CameraPose pose;
};

struct SplatScene {
  std::vector<Splat> splats;
  CameraIntrinsics intrinsics;
  std::vector<TrainingView> views;

  void validate() const {
    if (splats.empty()) throw std::invalid_argument("SplatScene: no splats");
    intrinsics.validate();
    for (const auto& v : views) {
      if (v.image.width() != intrinsics.width || v.image.height() != intrinsics.height) {
        throw std::invalid_argument("SplatScene: view size does not match intrinsics");
      }
      require_same_shape(v.image, v.mask, "SplatScene view");
      if (count_ones(v.mask) == 0) {
        throw std::invalid_argument("SplatScene: training view with empty mask");
      }
    }
  }
};

inline SplatScene init_scene(const WorldCloud& cloud, const CameraIntrinsics& k) {
  return {init_splats(cloud), k, {}};
}

struct TrainConfig {
  int iterations = 3000;
  double lr_position = 1.6e-4;  // multiplied by the scene extent
  double lr_color = 2.5e-3;
  double lr_opacity = 5e-2;
  double lr_scale = 5e-3;
  double lr_rotation = 1e-3;
  loss::LossParams loss;
  std::uint64_t seed = 0;
  unsigned workers = 1;
  /// Full training-set loss is evaluated this often to keep the best state.
  int eval_interval = 250;

  void validate() const {
    loss.validate();
    if (iterations < 1) throw std::invalid_argument("TrainConfig: iterations must be >= 1");
    for (double lr : {lr_position, lr_color, lr_opacity, lr_scale, lr_rotation}) {
      if (!(lr >= 0.0)) throw std::invalid_argument("TrainConfig: learning rates must be >= 0");
    }
    if (eval_interval < 1) throw std::invalid_argument("TrainConfig: eval_interval must be >= 1");
  }
};

struct ViewGradient {
  loss::LossValue loss;
  std::vector<SplatGrad> grads;
};

/// Loss of one view and its gradient w.r.t. every splat parameter.
inline ViewGradient gradients(const std::vector<Splat>& splats, const CameraIntrinsics& k,
                              const TrainingView& view, const loss::LossParams& params,
                              unsigned workers = 1) {
  const Frame frame(splats, k, view.pose);
  const auto rendered = frame.render(workers);
  Grid<Rgb> d_render;
  ViewGradient out;
  out.loss = loss::masked_loss(rendered.color, view.image, view.mask, params, &d_render);
  out.grads = frame.backward(d_render, workers);
  return out;
}

inline double view_loss(const std::vector<Splat>& splats, const CameraIntrinsics& k,
                        const TrainingView& view, const loss::LossParams& params,
                        unsigned workers = 1) {
  const auto rendered = rasterize(splats, k, view.pose, workers);
  return loss::masked_loss(rendered.color, view.image, view.mask, params).total;
}

/// Mean per-view loss over the training set.
inline double training_loss(const SplatScene& scene, const loss::LossParams& params,
                            unsigned workers = 1) {
  double sum = 0.0;
  for (const auto& v : scene.views) sum += view_loss(scene.splats, scene.intrinsics, v, params, workers);
  return sum / static_cast<double>(scene.views.size());
}

/// Max distance of any splat center from the centroid.
inline double scene_extent(const std::vector<Splat>& splats) {
  Vec3 c = Vec3::Zero();
  for (const auto& s : splats) c += s.position;
  c /= static_cast<double>(splats.size());
  double r = 0.0;
  for (const auto& s : splats) r = std::max(r, (s.position - c).norm());
  return std::max(r, 1e-6);
}

struct TrainReport {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  int iterations = 0;
  std::vector<double> eval_losses;
};

namespace detail {

/// Adam state over a flat parameter vector.
struct Adam {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-15;
  std::vector<double> m, v;
  long step = 0;
  double correction1 = 1.0;
  double correction2 = 1.0;

  explicit Adam(std::size_t n) : m(n, 0.0), v(n, 0.0) {}

  void next_step() {
    ++step;
    correction1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
    correction2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
  }

  double update(std::size_t i, double g, double lr) {
    m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g;
    v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g * g;
    return lr * (m[i] / correction1) / (std::sqrt(v[i] / correction2) + kEps);
  }
};

inline constexpr int kParamsPerSplat = 14;

/// Unit quaternion, scales within [kMinScale, kMaxScale], color in [0,1].
inline void project_feasible(Splat& s) {
  s.log_scale = s.log_scale.cwiseMax(std::log(kMinScale)).cwiseMin(std::log(kMaxScale));
  const double qn = s.rotation.norm();
  s.rotation = qn > 0.0 ? Vec4(s.rotation / qn) : Vec4(1.0, 0.0, 0.0, 0.0);
  s.color = s.color.cwiseMax(0.0).cwiseMin(1.0);
}

}  // namespace detail

/// First-moment/second-moment (Adam) descent over all parameter groups.
/// Returns the parameters with the lowest full training loss seen at the
/// evaluation checkpoints (the initial state included).
inline SplatScene optimize(const SplatScene& input, const TrainConfig& cfg,
                           TrainReport* report = nullptr) {
  cfg.validate();
  input.validate();
  if (input.views.empty()) throw std::invalid_argument("optimize: no training views");

  SplatScene scene = input;
  for (auto& s : scene.splats) detail::project_feasible(s);
  const std::size_t n = scene.splats.size();
  const double lr_pos = cfg.lr_position * scene_extent(scene.splats);
  detail::Adam adam(n * detail::kParamsPerSplat);

  std::vector<double> initial_view_loss;
  for (const auto& v : scene.views) {
    initial_view_loss.push_back(view_loss(scene.splats, scene.intrinsics, v, cfg.loss, cfg.workers));
  }
  double best_loss = 0.0;
  for (double l : initial_view_loss) best_loss += l;
  best_loss /= static_cast<double>(initial_view_loss.size());
  const double initial_loss = best_loss;
  std::vector<Splat> best = scene.splats;
  TrainReport rep;
  rep.initial_loss = initial_loss;

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(scene.views.size());
  std::size_t cursor = order.size();
  int diverged_steps = 0;

  for (int it = 1; it <= cfg.iterations; ++it) {
    if (cursor == order.size()) {
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    const std::size_t vi = order[cursor++];
    const auto vg = gradients(scene.splats, scene.intrinsics, scene.views[vi], cfg.loss, cfg.workers);

    if (vg.loss.total > 10.0 * initial_view_loss[vi]) {
      if (++diverged_steps >= 100) {
        throw DivergenceError("optimize: loss above 10x its initial value for 100 steps (iteration " +
                              std::to_string(it) + ")");
      }
    } else {
      diverged_steps = 0;
    }

    adam.next_step();
    for (std::size_t i = 0; i < n; ++i) {
      auto& s = scene.splats[i];
      const auto& g = vg.grads[i];
      std::size_t base = i * detail::kParamsPerSplat;
      for (int a = 0; a < 3; ++a) s.position[a] -= adam.update(base++, g.position[a], lr_pos);
      for (int a = 0; a < 3; ++a) s.log_scale[a] -= adam.update(base++, g.log_scale[a], cfg.lr_scale);
      for (int a = 0; a < 4; ++a) s.rotation[a] -= adam.update(base++, g.rotation[a], cfg.lr_rotation);
      s.opacity_logit -= adam.update(base++, g.opacity_logit, cfg.lr_opacity);
      for (int a = 0; a < 3; ++a) s.color[a] -= adam.update(base++, g.color[a], cfg.lr_color);

      detail::project_feasible(s);
    }

    if (it % cfg.eval_interval == 0 || it == cfg.iterations) {
      const double l = training_loss(scene, cfg.loss, cfg.workers);
      rep.eval_losses.push_back(l);
      if (l <= best_loss) {
        best_loss = l;
        best = scene.splats;
      }
    }
  }
  scene.splats = std::move(best);
  rep.final_loss = best_loss;
  rep.iterations = cfg.iterations;
  if (report) *report = rep;
  return scene;
}

// ---------------------------------------------------------------------------
// Checkpoint: "WSSPLAT\0", u32 version, u32 reserved, f64 fx fy cx cy,
// u32 width height, u64 count, then f64 arrays (little-endian):
// positions[3n] log_scales[3n] rotations[4n] opacity_logits[n] colors[3n].

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline io::Bytes encode_checkpoint(const std::vector<Splat>& splats, const CameraIntrinsics& k) {
  io::Bytes out;
  auto put = [&out](const auto& v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(v));
  };
  const char magic[8] = {'W', 'S', 'S', 'P', 'L', 'A', 'T', '\0'};
  out.insert(out.end(), magic, magic + 8);
  put(kCheckpointVersion);
  put(std::uint32_t{0});
  put(k.fx); put(k.fy); put(k.cx); put(k.cy);
  put(static_cast<std::uint32_t>(k.width));
  put(static_cast<std::uint32_t>(k.height));
  put(static_cast<std::uint64_t>(splats.size()));
  for (const auto& s : splats) for (int a = 0; a < 3; ++a) put(s.position[a]);
  for (const auto& s : splats) for (int a = 0; a < 3; ++a) put(s.log_scale[a]);
  for (const auto& s : splats) for (int a = 0; a < 4; ++a) put(s.rotation[a]);
  for (const auto& s : splats) put(s.opacity_logit);
  for (const auto& s : splats) for (int a = 0; a < 3; ++a) put(s.color[a]);
  return out;
}

inline SplatScene decode_checkpoint(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto get = [&](auto& v) {
    if (pos + sizeof(v) > bytes.size()) throw io::FormatError("checkpoint: truncated");
    std::memcpy(&v, bytes.data() + pos, sizeof(v));
    pos += sizeof(v);
  };
  if (bytes.size() < 8 || std::memcmp(bytes.data(), "WSSPLAT\0", 8) != 0) {
    throw io::FormatError("checkpoint: bad magic");
  }
  pos = 8;
  std::uint32_t version = 0, reserved = 0, w = 0, h = 0;
  get(version);
  if (version != kCheckpointVersion) {
    throw io::FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  get(reserved);
  SplatScene scene;
  auto& k = scene.intrinsics;
  get(k.fx); get(k.fy); get(k.cx); get(k.cy);
  get(w); get(h);
  k.width = static_cast<int>(w);
  k.height = static_cast<int>(h);
  try {
    k.validate();
  } catch (const std::invalid_argument& e) {
    throw io::FormatError(std::string("checkpoint: ") + e.what());
  }
  std::uint64_t count = 0;
  get(count);
  constexpr std::size_t kSplatBytes = detail::kParamsPerSplat * sizeof(double);
  if (count != (bytes.size() - pos) / kSplatBytes || (bytes.size() - pos) % kSplatBytes != 0) {
    throw io::FormatError("checkpoint: splat count does not match payload");
  }
  scene.splats.resize(count);
  for (auto& s : scene.splats) for (int a = 0; a < 3; ++a) get(s.position[a]);
  for (auto& s : scene.splats) for (int a = 0; a < 3; ++a) get(s.log_scale[a]);
  for (auto& s : scene.splats) for (int a = 0; a < 4; ++a) get(s.rotation[a]);
  for (auto& s : scene.splats) get(s.opacity_logit);
  for (auto& s : scene.splats) for (int a = 0; a < 3; ++a) get(s.color[a]);
  if (pos != bytes.size()) throw io::FormatError("checkpoint: trailing bytes");
  return scene;
}

inline void save_checkpoint(const std::filesystem::path& path, const SplatScene& scene) {
  io::write_file(path, encode_checkpoint(scene.splats, scene.intrinsics));
}

inline SplatScene load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_file(path));
}

}  // namespace worldseed::gsplat
