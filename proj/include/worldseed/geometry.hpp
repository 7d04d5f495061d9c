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

#include "worldseed/core.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace worldseed {

// Pinhole camera, no distortion. Pixel (u, v) with integer coordinates is
// the pixel center; u grows to the right, v grows downwards.
struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) {
      throw std::invalid_argument("CameraIntrinsics: focal lengths must be > 0");
    }
    if (width <= 0 || height <= 0) {
      throw std::invalid_argument("CameraIntrinsics: image size must be > 0");
    }
    if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height)) {
      throw std::invalid_argument(
          "CameraIntrinsics: principal point outside the image");
    }
  }

  /// Defaults used when the input frame carries no calibration:
  /// fx = fy = 0.8 * width, principal point at the image center.
  static CameraIntrinsics defaults_for(int width, int height) {
    CameraIntrinsics k;
    k.width = width;
    k.height = height;
    k.fx = 0.8 * width;
    k.fy = 0.8 * width;
    k.cx = 0.5 * (width - 1);
    k.cy = 0.5 * (height - 1);
    return k;
  }

  Vec2 project(const Vec3& cam) const {
    return {fx * cam.x() / cam.z() + cx, fy * cam.y() / cam.z() + cy};
  }

  /// Camera-space point at depth `depth` on the ray through pixel (u, v).
  Vec3 unproject(double u, double v, double depth) const {
    return {depth * (u - cx) / fx, depth * (v - cy) / fy, depth};
  }

  bool operator==(const CameraIntrinsics&) const = default;
};

// Camera-from-world rigid transform: x_cam = rotation * x_world + translation.
// +z is the viewing direction, +x right, +y down.
struct CameraPose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static CameraPose identity() { return {}; }

  void validate(double tol = 1e-9) const {
    const double ortho = (rotation.transpose() * rotation - Mat3::Identity())
                             .cwiseAbs()
                             .maxCoeff();
    if (!(ortho <= tol) || !(std::abs(rotation.determinant() - 1.0) <= tol)) {
      throw std::invalid_argument("CameraPose: rotation is not a proper rotation");
    }
    if (!translation.allFinite()) {
      throw std::invalid_argument("CameraPose: translation not finite");
    }
  }

  Vec3 to_camera(const Vec3& world) const {
    return rotation * world + translation;
  }
  Vec3 to_world(const Vec3& cam) const {
    return rotation.transpose() * (cam - translation);
  }

  /// Camera center in world coordinates.
  Vec3 center() const { return -(rotation.transpose() * translation); }

  /// Viewing direction (+z of the camera) in world coordinates.
  Vec3 forward() const { return rotation.row(2).transpose(); }

  /// Pose at `center` whose +z axis points at `target`. `up` is the world
  /// up direction (default -y, matching the +y-down image convention).
  static CameraPose look_at(const Vec3& center, const Vec3& target,
                            const Vec3& up = Vec3(0.0, -1.0, 0.0)) {
    const Vec3 z = (target - center).normalized();
    Vec3 x = (-up).cross(z);
    if (x.norm() < 1e-12) {
      throw std::invalid_argument("CameraPose::look_at: view direction parallel to up");
    }
    x.normalize();
    const Vec3 y = z.cross(x);
    CameraPose pose;
    pose.rotation.row(0) = x.transpose();
    pose.rotation.row(1) = y.transpose();
    pose.rotation.row(2) = z.transpose();
    pose.translation = -(pose.rotation * center);
    return pose;
  }
};

struct RgbdFrame {
  ColorImage image;
  DepthMap depth;
  CoverageMask mask;

  int width() const { return image.width(); }
  int height() const { return image.height(); }
};

struct WorldPoint {
  Vec3 position = Vec3::Zero();
  Rgb color = Rgb::Zero();
  int origin_step = 0;
};

/// Colored world-space point set. Points are only ever appended.
struct WorldCloud {
  std::vector<WorldPoint> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

inline constexpr double kNearPlane = 1e-4;

/// Unprojects every selected pixel into world space. Returned points carry
/// origin_step = 0; callers stamp the trajectory index.
inline WorldCloud lift_rgbd(const RgbdFrame& frame, const CameraIntrinsics& k,
                            const CameraPose& pose, const CoverageMask& select) {
  if (frame.image.width() != k.width || frame.image.height() != k.height) {
    throw std::invalid_argument("lift_rgbd: frame does not match intrinsics");
  }
  require_same_shape(frame.image, frame.depth, "lift_rgbd");
  require_same_shape(frame.image, select, "lift_rgbd");

  WorldCloud cloud;
  cloud.points.reserve(count_ones(select));
  for (int v = 0; v < k.height; ++v) {
    for (int u = 0; u < k.width; ++u) {
      if (!select(u, v)) continue;
      const double d = frame.depth(u, v);
      if (!depth_valid(d)) {
        throw std::invalid_argument("lift_rgbd: selected pixel (" +
                                    std::to_string(u) + "," + std::to_string(v) +
                                    ") has invalid depth");
      }
      WorldPoint p;
      p.position = pose.to_world(k.unproject(u, v, d));
      p.color = frame.image(u, v);
      cloud.points.push_back(p);
    }
  }
  return cloud;
}

/// Mask selecting every valid depth pixel.
inline CoverageMask valid_mask(const DepthMap& depth) {
  CoverageMask mask(depth.width(), depth.height(), 0);
  for (std::size_t i = 0; i < depth.size(); ++i) {
    mask[i] = depth_valid(depth[i]) ? 1 : 0;
  }
  return mask;
}

/// Z-buffered 1-pixel splat of the cloud. Ties on equal depth keep the
/// lower point index. Uncovered pixels hold black and kInvalidDepth.
inline RgbdFrame project_cloud(const WorldCloud& cloud, const CameraIntrinsics& k,
                               const CameraPose& pose) {
  RgbdFrame out;
  out.image = ColorImage(k.width, k.height, Rgb::Zero());
  out.depth = DepthMap(k.width, k.height, kInvalidDepth);
  out.mask = CoverageMask(k.width, k.height, 0);

  constexpr auto kNone = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> winner(out.depth.size(), kNone);
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const Vec3 cam = pose.to_camera(cloud.points[i].position);
    if (!(cam.z() > kNearPlane)) continue;
    const Vec2 px = k.project(cam);
    const double ru = std::nearbyint(px.x());
    const double rv = std::nearbyint(px.y());
    if (!(ru >= 0.0 && rv >= 0.0 && ru < k.width && rv < k.height)) continue;
    const int u = static_cast<int>(ru);
    const int v = static_cast<int>(rv);
    const std::size_t idx = out.depth.index(u, v);
    if (winner[idx] == kNone || cam.z() < out.depth[idx]) {
      winner[idx] = i;
      out.depth[idx] = cam.z();
    }
  }
  for (std::size_t idx = 0; idx < winner.size(); ++idx) {
    if (winner[idx] == kNone) continue;
    out.mask[idx] = 1;
    out.image[idx] = cloud.points[winner[idx]].color;
  }
  return out;
}

/// Nearest-rank quantile over valid depths: the ceil(p*n)-th smallest value
/// (1-based), with p = 0 giving the minimum.
inline double percentile(const DepthMap& depth, double p) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw std::invalid_argument("percentile: p must be in [0,1]");
  }
  std::vector<double> values;
  values.reserve(depth.size());
  for (double d : depth.values()) {
    if (depth_valid(d)) values.push_back(d);
  }
  if (values.empty()) {
    throw std::invalid_argument("percentile: depth map has no valid pixels");
  }
  const auto n = values.size();
  // Snap products within rounding noise of an integer (0.35 * 20 -> 7).
  const double scaled = p * static_cast<double>(n);
  const double snapped = std::nearbyint(scaled);
  auto rank = static_cast<std::size_t>(
      std::abs(scaled - snapped) < 1e-9 ? snapped : std::ceil(scaled));
  rank = std::clamp<std::size_t>(rank, 1, n);
  std::nth_element(values.begin(), values.begin() + (rank - 1), values.end());
  return values[rank - 1];
}

}  // namespace worldseed
