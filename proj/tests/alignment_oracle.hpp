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

// Random alignment steps and the property checks run on them.

#pragma once

#include "worldseed/alignment.hpp"

#include "test_util.hpp"

#include <cmath>
#include <random>
#include <string>

namespace worldseed::testing {

struct AlignStep {
  CameraIntrinsics k;
  CameraPose pose;
  ColorImage image;
  CoverageMask mask;       // 1 = covered by the existing cloud
  DepthMap existing;       // valid exactly where mask = 1
  DepthMap fresh;          // valid everywhere
  WorldCloud previous;     // stand-in for the existing cloud
};

/// `unit_factors` makes the new estimate agree with the existing depth on
/// every covered pixel.
inline AlignStep random_align_step(std::mt19937_64& rng, bool unit_factors = false) {
  std::uniform_int_distribution<int> side(6, 24);
  AlignStep s;
  const int w = side(rng), h = side(rng);
  s.k = CameraIntrinsics::defaults_for(w, h);
  s.pose = random_pose(rng);
  s.image = random_image(w, h, rng);
  // A rectangular hole plus speckle, never the whole frame.
  s.mask = CoverageMask(w, h, 1);
  std::uniform_int_distribution<int> ux(0, w - 1), uy(0, h - 1);
  int x0 = ux(rng), x1 = ux(rng), y0 = uy(rng), y1 = uy(rng);
  if (x0 > x1) std::swap(x0, x1);
  if (y0 > y1) std::swap(y0, y1);
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) s.mask(x, y) = 0;
  }
  std::bernoulli_distribution speckle(0.05);
  for (auto& m : s.mask.values()) if (speckle(rng)) m = 0;
  s.mask(x0 == 0 && y0 == 0 ? w - 1 : 0, x0 == 0 && y0 == 0 ? h - 1 : 0) = 1;

  std::uniform_real_distribution<double> depth(0.5, 8.0), factor(0.4, 2.5);
  s.existing = DepthMap(w, h, kInvalidDepth);
  s.fresh = DepthMap(w, h, 0.0);
  for (std::size_t i = 0; i < s.mask.size(); ++i) {
    const double d = depth(rng);
    if (s.mask[i]) {
      s.existing[i] = d;
      s.fresh[i] = unit_factors ? d : d / factor(rng);
    } else {
      s.fresh[i] = d;
    }
  }
  RgbdFrame known{s.image, s.existing, s.mask};
  s.previous = lift_rgbd(known, s.k, s.pose, s.mask);
  return s;
}

inline WorldCloud lift_new(const AlignStep& s) {
  CoverageMask fill(s.mask.width(), s.mask.height(), 0);
  for (std::size_t i = 0; i < fill.size(); ++i) fill[i] = s.mask[i] ? 0 : 1;
  return lift_rgbd(RgbdFrame{s.image, s.fresh, fill}, s.k, s.pose, fill);
}

inline double ray_angle(const Vec3& a, const Vec3& b) {
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

struct AlignCheck {
  double max_ray_angle = 0.0;
  std::size_t pixel_moves = 0;
  double max_band_rel_error = 0.0;
  bool monotone = true;
  bool identity_exact = true;  // only meaningful for unit-factor steps
  std::size_t band = 0;
};

inline AlignCheck check_align_step(const AlignStep& s) {
  AlignCheck c;
  const auto fresh = lift_new(s);
  const auto result = alignment::align(fresh, s.mask, s.existing, s.fresh, s.k, s.pose);
  c.band = result.band_size;
  if (result.aligned.size() != fresh.size()) c.pixel_moves = fresh.size() + 1;
  for (std::size_t i = 0; i < fresh.size() && i < result.aligned.size(); ++i) {
    const Vec3 before = s.pose.to_camera(fresh.points[i].position);
    const Vec3 after = s.pose.to_camera(result.aligned.points[i].position);
    c.max_ray_angle = std::max(c.max_ray_angle, ray_angle(before, after));
    const Vec2 pb = s.k.project(before), pa = s.k.project(after);
    if (std::nearbyint(pb.x()) != std::nearbyint(pa.x()) || std::nearbyint(pb.y()) != std::nearbyint(pa.y())) {
      ++c.pixel_moves;
    }
    if (result.aligned.points[i].position != fresh.points[i].position) c.identity_exact = false;
  }
  // Band fidelity: lift the band pixels from the new estimate and push them
  // through the same field; they must land on the existing depth.
  const auto band = alignment::extract_boundary(s.mask, s.existing, s.fresh);
  if (!band.empty()) {
    CoverageMask region(s.mask.width(), s.mask.height(), 0);
    for (std::size_t i = 0; i < region.size(); ++i) region[i] = s.mask[i] ? 0 : 1;
    const auto field = alignment::interpolate_shift(band, region);
    WorldCloud band_points;
    for (const auto& b : band) {
      band_points.points.push_back({s.pose.to_world(s.k.unproject(b.x, b.y, b.new_depth)), Rgb::Zero(), 0});
    }
    const auto moved = alignment::apply_shift(band_points, field, s.k, s.pose);
    for (std::size_t i = 0; i < band.size(); ++i) {
      const double z = s.pose.to_camera(moved.points[i].position).z();
      c.max_band_rel_error = std::max(c.max_band_rel_error,
                                      std::abs(z - band[i].existing_depth) / band[i].existing_depth);
    }
  }
  const auto merged = alignment::merge(s.previous, result.aligned);
  c.monotone = merged.size() >= s.previous.size() &&
               merged.size() == s.previous.size() + result.aligned.size();
  return c;
}

}  // namespace worldseed::testing
