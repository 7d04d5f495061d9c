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

#pragma once

#include "worldseed/geometry.hpp"

#include <cmath>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace worldseed::trajectory {

enum class Kind { kOrbit, kDollyBack, kLateralArc };

inline Kind kind_from_string(const std::string& s) {
  if (s == "orbit") return Kind::kOrbit;
  if (s == "dolly_back") return Kind::kDollyBack;
  if (s == "lateral_arc") return Kind::kLateralArc;
  throw std::invalid_argument("unknown trajectory kind '" + s + "'");
}

inline std::string to_string(Kind k) {
  switch (k) {
    case Kind::kOrbit: return "orbit";
    case Kind::kDollyBack: return "dolly_back";
    case Kind::kLateralArc: return "lateral_arc";
  }
  return "?";
}

// All kinds place the camera on a horizontal circle around `look_at` and
// aim it at `look_at`. Angle 0 sits at look_at - radius * z, so with the
// default look_at = (0, 0, radius) pose 0 is the identity input camera.
// Positive angles turn counterclockwise seen from above (up = -y).
struct TrajectoryPreset {
  Kind kind = Kind::kOrbit;
  int n_steps = 8;
  double angle_span = std::numbers::pi / 2.0;
  double radius = 0.3;
  std::optional<Vec3> look_at;

  Vec3 target() const { return look_at.value_or(Vec3(0.0, 0.0, radius)); }

  void validate() const {
    if (n_steps < 1) throw std::invalid_argument("trajectory: n_steps must be >= 1");
    if (!(radius > 0.0)) throw std::invalid_argument("trajectory: radius must be > 0");
    if (!(angle_span > 0.0 && angle_span <= 2.0 * std::numbers::pi + 1e-12)) {
      throw std::invalid_argument("trajectory: angle_span must be in (0, 2pi]");
    }
    if (look_at && !look_at->allFinite()) {
      throw std::invalid_argument("trajectory: look_at not finite");
    }
  }
};

struct OrbitSample {
  double angle = 0.0;
  double distance = 0.0;
};

inline CameraPose pose_on_circle(const Vec3& target, const OrbitSample& s) {
  const Vec3 center = target + Vec3(s.distance * std::sin(s.angle), 0.0,
                                    -s.distance * std::cos(s.angle));
  return CameraPose::look_at(center, target);
}

inline OrbitSample construction_sample(const TrajectoryPreset& p, int i) {
  const double t = static_cast<double>(i) / p.n_steps;
  switch (p.kind) {
    case Kind::kOrbit:
      return {p.angle_span * t, p.radius};
    case Kind::kDollyBack:
      return {p.angle_span * t, p.radius * (1.0 + t)};
    case Kind::kLateralArc:
      // Swings to +span/2, across to -span/2 and back.
      return {0.5 * p.angle_span * std::sin(2.0 * std::numbers::pi * t), p.radius};
  }
  return {};
}

/// N + 1 poses; index 0 is the input camera.
inline std::vector<CameraPose> construction_poses(const TrajectoryPreset& preset) {
  preset.validate();
  std::vector<CameraPose> poses;
  poses.reserve(preset.n_steps + 1);
  for (int i = 0; i <= preset.n_steps; ++i) {
    poses.push_back(pose_on_circle(preset.target(), construction_sample(preset, i)));
  }
  return poses;
}

/// M extra poses jittered around randomly chosen construction poses:
/// angle +- half a construction step, distance +- 10%.
inline std::vector<CameraPose> training_poses(const TrajectoryPreset& preset, int m,
                                              std::uint64_t seed) {
  preset.validate();
  if (m < 1) throw std::invalid_argument("training_poses: m must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, preset.n_steps);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const double half_step = 0.5 * preset.angle_span / preset.n_steps;
  std::vector<CameraPose> poses;
  poses.reserve(m);
  for (int j = 0; j < m; ++j) {
    OrbitSample s = construction_sample(preset, pick(rng));
    s.angle += half_step * unit(rng);
    s.distance *= 1.0 + 0.1 * unit(rng);
    poses.push_back(pose_on_circle(preset.target(), s));
  }
  return poses;
}

}  // namespace worldseed::trajectory
