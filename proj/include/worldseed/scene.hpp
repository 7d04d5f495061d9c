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

// Analytic scenes (planes, rectangles, spheres) that can be ray-cast from
// any camera. They provide initial frames and exact depth for offline runs.

#pragma once

#include "worldseed/geometry.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace worldseed::scene {

enum class Shape { kPlane, kRect, kSphere };

/// Color = clamp(base + gradient * (hit - anchor)), anchor = the primitive's
/// point/center.
struct Primitive {
  Shape shape = Shape::kPlane;
  Vec3 point = Vec3::Zero();      // plane point, rect center or sphere center
  Vec3 normal = Vec3::UnitZ();    // plane/rect normal
  Vec3 axis_u = Vec3::UnitX();    // rect in-plane axes (unit)
  Vec3 axis_v = Vec3::UnitY();
  double half_u = 1.0;
  double half_v = 1.0;
  double radius = 1.0;            // sphere
  Rgb base = Rgb::Constant(0.5);
  Mat3 gradient = Mat3::Zero();

  /// Parameter t along origin + t * dir, or nullopt. `dir` need not be unit.
  std::optional<double> intersect(const Vec3& origin, const Vec3& dir) const {
    switch (shape) {
      case Shape::kPlane:
      case Shape::kRect: {
        const double denom = normal.dot(dir);
        if (std::abs(denom) < 1e-15) return std::nullopt;
        const double t = normal.dot(point - origin) / denom;
        if (shape == Shape::kRect) {
          const Vec3 rel = origin + t * dir - point;
          if (std::abs(rel.dot(axis_u)) > half_u || std::abs(rel.dot(axis_v)) > half_v) {
            return std::nullopt;
          }
        }
        return t;
      }
      case Shape::kSphere: {
        const Vec3 oc = origin - point;
        const double a = dir.squaredNorm();
        const double b = oc.dot(dir);
        const double c = oc.squaredNorm() - radius * radius;
        const double disc = b * b - a * c;
        if (disc < 0.0) return std::nullopt;
        const double sq = std::sqrt(disc);
        const double t0 = (-b - sq) / a;
        if (t0 > kNearPlane) return t0;
        return (-b + sq) / a;
      }
    }
    return std::nullopt;
  }

  Rgb color_at(const Vec3& hit) const {
    return (base + gradient * (hit - point)).cwiseMax(0.0).cwiseMin(1.0);
  }
};

struct SyntheticScene {
  std::vector<Primitive> primitives;

  struct Hit {
    double depth = kInvalidDepth;
    Rgb color = Rgb::Zero();
  };

  /// Casts the ray through pixel (u, v). Depth is camera-space z.
  Hit cast(const CameraIntrinsics& k, const CameraPose& pose, double u, double v) const {
    const Vec3 dir_cam((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
    const Vec3 origin = pose.center();
    const Vec3 dir = pose.rotation.transpose() * dir_cam;
    Hit best;
    double best_t = std::numeric_limits<double>::infinity();
    for (const auto& prim : primitives) {
      const auto t = prim.intersect(origin, dir);
      if (t && *t > kNearPlane && *t < best_t) {
        best_t = *t;
        best.depth = *t;
        best.color = prim.color_at(origin + *t * dir);
      }
    }
    return best;
  }

  RgbdFrame render(const CameraIntrinsics& k, const CameraPose& pose) const {
    RgbdFrame f;
    f.image = ColorImage(k.width, k.height, Rgb::Zero());
    f.depth = DepthMap(k.width, k.height, kInvalidDepth);
    f.mask = CoverageMask(k.width, k.height, 0);
    for (int v = 0; v < k.height; ++v) {
      for (int u = 0; u < k.width; ++u) {
        const Hit h = cast(k, pose, u, v);
        if (!depth_valid(h.depth)) continue;
        f.image(u, v) = h.color;
        f.depth(u, v) = h.depth;
        f.mask(u, v) = 1;
      }
    }
    return f;
  }

  /// Background plane at z = 4 m with a soft color ramp, plus a 1.2 x 0.9 m
  /// fronto-parallel card at z = 2 m left of center.
  static SyntheticScene two_plane() {
    SyntheticScene s;
    Primitive back;
    back.shape = Shape::kPlane;
    back.point = Vec3(0.0, 0.0, 4.0);
    back.normal = Vec3(0.0, 0.0, -1.0);
    back.base = Rgb(0.35, 0.55, 0.75);
    back.gradient << 0.06, 0.0, 0.0,
                     0.0, -0.05, 0.0,
                     0.02, 0.03, 0.0;
    Primitive card;
    card.shape = Shape::kRect;
    card.point = Vec3(-0.35, 0.1, 2.0);
    card.normal = Vec3(0.0, 0.0, -1.0);
    card.half_u = 0.6;
    card.half_v = 0.45;
    card.base = Rgb(0.8, 0.45, 0.25);
    card.gradient << 0.1, 0.0, 0.0,
                     0.0, 0.1, 0.0,
                     -0.05, 0.0, 0.0;
    s.primitives = {back, card};
    return s;
  }
};

namespace detail {
inline Vec3 vec3(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw std::invalid_argument("expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}
}  // namespace detail

/// {"preset": "two_plane"} or {"primitives": [{"type": "plane"|"rect"|"sphere", ...}]}
inline SyntheticScene scene_from_json(const nlohmann::json& j) {
  if (j.contains("preset")) {
    const auto name = j.at("preset").get<std::string>();
    if (name == "two_plane") return SyntheticScene::two_plane();
    throw std::invalid_argument("unknown synthetic scene preset '" + name + "'");
  }
  SyntheticScene s;
  for (const auto& pj : j.at("primitives")) {
    Primitive p;
    const auto type = pj.at("type").get<std::string>();
    if (type == "plane") {
      p.shape = Shape::kPlane;
      p.point = detail::vec3(pj.at("point"));
      p.normal = detail::vec3(pj.at("normal")).normalized();
    } else if (type == "rect") {
      p.shape = Shape::kRect;
      p.point = detail::vec3(pj.at("center"));
      p.normal = detail::vec3(pj.at("normal")).normalized();
      p.axis_u = detail::vec3(pj.value("u", nlohmann::json{1.0, 0.0, 0.0})).normalized();
      p.axis_v = detail::vec3(pj.value("v", nlohmann::json{0.0, 1.0, 0.0})).normalized();
      const auto& he = pj.at("half_extents");
      p.half_u = he.at(0).get<double>();
      p.half_v = he.at(1).get<double>();
    } else if (type == "sphere") {
      p.shape = Shape::kSphere;
      p.point = detail::vec3(pj.at("center"));
      p.radius = pj.at("radius").get<double>();
      if (!(p.radius > 0.0)) throw std::invalid_argument("sphere radius must be > 0");
    } else {
      throw std::invalid_argument("unknown primitive type '" + type + "'");
    }
    p.base = detail::vec3(pj.value("color", nlohmann::json{0.5, 0.5, 0.5}));
    if (pj.contains("gradient")) {
      const auto& g = pj.at("gradient");
      for (int r = 0; r < 3; ++r) p.gradient.row(r) = detail::vec3(g.at(r)).transpose();
    }
    s.primitives.push_back(p);
  }
  if (s.primitives.empty()) throw std::invalid_argument("synthetic scene has no primitives");
  return s;
}

}  // namespace worldseed::scene
