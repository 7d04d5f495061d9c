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

// Finite-difference gradient check on random micro-scenes.

#pragma once

#include "worldseed/train.hpp"

#include "test_util.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

namespace worldseed::testing {

struct MicroScene {
  std::vector<gsplat::Splat> splats;
  CameraIntrinsics k;
  gsplat::TrainingView view;
};

/// The truncated footprint jumps at Mahalanobis^2 = 9 and compositing
/// reorders when two depths cross; a central difference straddling either
/// is meaningless, so scenes keep every pixel away from both.
inline bool differentiable_here(const MicroScene& s, double q_margin, double depth_margin) {
  const gsplat::Frame frame(s.splats, s.k, s.view.pose);
  const auto& proj = frame.projected();
  for (std::size_t i = 0; i < proj.size(); ++i) {
    if (!proj[i].visible) return false;
    for (std::size_t j = 0; j < i; ++j) {
      if (std::abs(proj[i].depth - proj[j].depth) < depth_margin) return false;
    }
    for (int y = 0; y < s.k.height; ++y) {
      for (int x = 0; x < s.k.width; ++x) {
        const double dx = x - proj[i].mean.x(), dy = y - proj[i].mean.y();
        const double q = proj[i].conic_a * dx * dx + 2 * proj[i].conic_b * dx * dy +
                         proj[i].conic_c * dy * dy;
        if (std::abs(q - gsplat::kCutoff2) < q_margin) return false;
      }
    }
  }
  return true;
}

inline MicroScene random_micro_scene(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> n(0.0, 1.0);
  for (;;) {
    MicroScene s;
    s.k = CameraIntrinsics::defaults_for(8, 8);
    s.view.pose = random_pose(rng, 0.2);
    // Splats in front of the camera: sample in camera space, map to world.
    const int count = 1 + static_cast<int>(rng() % 5);
    for (int i = 0; i < count; ++i) {
      gsplat::Splat sp;
      const double z = 2.0 + 2.0 * u(rng);
      const Vec3 cam((u(rng) * 6.0 - 3.0) * z / s.k.fx, (u(rng) * 6.0 - 3.0) * z / s.k.fy, z);
      sp.position = s.view.pose.to_world(cam);
      sp.log_scale = Vec3(std::log(0.3 + 0.9 * u(rng)), std::log(0.3 + 0.9 * u(rng)),
                          std::log(0.3 + 0.9 * u(rng)));
      sp.rotation = Vec4(n(rng), n(rng), n(rng), n(rng));
      sp.rotation *= (0.5 + u(rng)) / sp.rotation.norm();  // deliberately not unit
      sp.opacity_logit = 2.0 * n(rng);
      sp.color = random_rgb(rng);
      s.splats.push_back(sp);
    }
    // Target sits 0.05..0.3 away from the current render in every channel,
    // keeping the L1 kink far from the evaluation point.
    const auto render = gsplat::rasterize(s.splats, s.k, s.view.pose);
    s.view.image = ColorImage(8, 8, Rgb::Zero());
    for (std::size_t p = 0; p < render.color.size(); ++p) {
      for (int c = 0; c < 3; ++c) {
        const double r = render.color[p][c];
        const double off = 0.05 + 0.25 * u(rng);
        s.view.image[p][c] = r < 0.5 ? r + off : r - off;
      }
    }
    s.view.mask = random_mask(8, 8, 0.8, rng);
    s.view.mask[27] = 1;
    if (differentiable_here(s, 0.05, 1e-3)) return s;
  }
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t parameters = 0;
};

inline double* param(gsplat::Splat& s, int j) {
  if (j < 3) return &s.position[j];
  if (j < 6) return &s.log_scale[j - 3];
  if (j < 10) return &s.rotation[j - 6];
  if (j < 11) return &s.opacity_logit;
  return &s.color[j - 11];
}

inline double analytic(const gsplat::SplatGrad& g, int j) {
  if (j < 3) return g.position[j];
  if (j < 6) return g.log_scale[j - 3];
  if (j < 10) return g.rotation[j - 6];
  if (j < 11) return g.opacity_logit;
  return g.color[j - 11];
}

/// Relative error |a - n| / max(|a|, |n|, floor); the floor keeps
/// vanishing gradients from dividing roundoff by roundoff.
inline GradCheck check_gradients(const MicroScene& s, double h = 1e-4, double floor = 1e-6) {
  const loss::LossParams params;
  const auto vg = gsplat::gradients(s.splats, s.k, s.view, params);
  GradCheck out;
  auto splats = s.splats;
  for (std::size_t i = 0; i < splats.size(); ++i) {
    for (int j = 0; j < 14; ++j) {
      double* v = param(splats[i], j);
      const double saved = *v;
      *v = saved + h;
      const double up = gsplat::view_loss(splats, s.k, s.view, params);
      *v = saved - h;
      const double down = gsplat::view_loss(splats, s.k, s.view, params);
      *v = saved;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic(vg.grads[i], j);
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      out.max_rel_error = std::max(out.max_rel_error, rel);
      ++out.parameters;
    }
  }
  return out;
}

}  // namespace worldseed::testing
