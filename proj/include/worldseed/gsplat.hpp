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

// CPU Gaussian splatting: EWA projection of 3D Gaussians, front-to-back
// alpha compositing on a tile grid, and the matching reverse pass.

#pragma once

#include "worldseed/geometry.hpp"

#include <boost/geometry.hpp>
#include <boost/geometry/index/rtree.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace worldseed::gsplat {

inline constexpr double kMinScale = 1e-6;
inline constexpr double kMaxScale = 1e3;
/// Screen-space low-pass added to every projected covariance (pixels^2).
inline constexpr double kDilation = 0.3;
/// Footprint truncation: Mahalanobis distance^2 <= 9 (3 sigma).
inline constexpr double kCutoff2 = 9.0;
inline constexpr int kTileSize = 16;

struct Splat {
  Vec3 position = Vec3::Zero();
  Vec3 log_scale = Vec3::Constant(std::log(0.01));
  Vec4 rotation = Vec4(1.0, 0.0, 0.0, 0.0);  // (w, x, y, z)
  double opacity_logit = 0.0;
  Rgb color = Rgb::Constant(0.5);
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// Rotation matrix of a unit quaternion (w, x, y, z).
inline Mat3 quat_to_matrix(const Vec4& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
       2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
       2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

/// Scale of each point: mean distance to its 3 nearest neighbours, searched
/// in a strided subsample of at most `max_reference` points.
inline std::vector<double> knn_scales(const WorldCloud& cloud, std::size_t max_reference = 50000,
                                      double isolated_scale = 0.01) {
  namespace bg = boost::geometry;
  namespace bgi = boost::geometry::index;
  using BPoint = bg::model::point<double, 3, bg::cs::cartesian>;
  using Entry = std::pair<BPoint, std::size_t>;

  const std::size_t n = cloud.size();
  std::vector<double> scales(n, isolated_scale);
  if (n < 2) return scales;
  const std::size_t stride = (n + max_reference - 1) / max_reference;
  std::vector<Entry> reference;
  for (std::size_t i = 0; i < n; i += stride) {
    const auto& p = cloud.points[i].position;
    reference.emplace_back(BPoint(p.x(), p.y(), p.z()), i);
  }
  const bgi::rtree<Entry, bgi::rstar<16>> tree(reference.begin(), reference.end());
  std::vector<Entry> found;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = cloud.points[i].position;
    found.clear();
    tree.query(bgi::nearest(BPoint(p.x(), p.y(), p.z()), 4), std::back_inserter(found));
    std::vector<double> dists;
    for (const auto& e : found) {
      if (e.second == i) continue;
      dists.push_back(bg::distance(e.first, BPoint(p.x(), p.y(), p.z())));
    }
    std::sort(dists.begin(), dists.end());
    if (dists.size() > 3) dists.resize(3);
    if (dists.empty()) continue;
    const double mean = std::accumulate(dists.begin(), dists.end(), 0.0) / dists.size();
    scales[i] = std::clamp(mean, kMinScale, kMaxScale);
  }
  return scales;
}

inline constexpr double kInitialOpacity = 0.1;

/// One isotropic splat per point.
inline std::vector<Splat> init_splats(const WorldCloud& cloud) {
  if (cloud.empty()) throw std::invalid_argument("init_splats: empty cloud");
  const auto scales = knn_scales(cloud);
  std::vector<Splat> splats(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    auto& s = splats[i];
    s.position = cloud.points[i].position;
    s.color = cloud.points[i].color.cwiseMax(0.0).cwiseMin(1.0);
    s.log_scale = Vec3::Constant(std::log(scales[i]));
    s.rotation = Vec4(1.0, 0.0, 0.0, 0.0);
    s.opacity_logit = logit(kInitialOpacity);
  }
  return splats;
}

/// Per-splat screen-space footprint plus what the reverse pass needs.
struct Projected {
  bool visible = false;
  double depth = 0.0;
  Vec2 mean = Vec2::Zero();
  double conic_a = 0.0, conic_b = 0.0, conic_c = 0.0;
  double opacity = 0.0;
  int x_min = 0, x_max = -1, y_min = 0, y_max = -1;

  // Cached intermediates.
  Vec3 cam = Vec3::Zero();
  Vec4 unit_q = Vec4::Zero();
  double q_norm = 1.0;
  Vec3 scale = Vec3::Zero();
  Mat3 rot = Mat3::Identity();
  Mat3 cov_cam = Mat3::Zero();
  Eigen::Matrix<double, 2, 3> jac = Eigen::Matrix<double, 2, 3>::Zero();
  Mat2 conic = Mat2::Zero();
};

inline Projected project_splat(const Splat& s, const CameraIntrinsics& k, const CameraPose& pose) {
  Projected p;
  p.cam = pose.to_camera(s.position);
  const double tz = p.cam.z();
  if (!(tz > kNearPlane)) return p;
  p.q_norm = s.rotation.norm();
  if (!(p.q_norm > 0.0)) return p;
  p.unit_q = s.rotation / p.q_norm;
  p.rot = quat_to_matrix(p.unit_q);
  p.scale = s.log_scale.array().exp();
  const Mat3 m = p.rot * p.scale.asDiagonal();
  const Mat3 cov_world = m * m.transpose();
  p.cov_cam = pose.rotation * cov_world * pose.rotation.transpose();
  p.jac << k.fx / tz, 0.0, -k.fx * p.cam.x() / (tz * tz),
           0.0, k.fy / tz, -k.fy * p.cam.y() / (tz * tz);
  Mat2 cov2 = p.jac * p.cov_cam * p.jac.transpose();
  cov2(0, 0) += kDilation;
  cov2(1, 1) += kDilation;
  const double det = cov2.determinant();
  if (!(det > 0.0)) return p;
  p.conic << cov2(1, 1) / det, -cov2(0, 1) / det, -cov2(1, 0) / det, cov2(0, 0) / det;
  p.conic_a = p.conic(0, 0);
  p.conic_b = 0.5 * (p.conic(0, 1) + p.conic(1, 0));
  p.conic_c = p.conic(1, 1);
  p.mean = k.project(p.cam);
  p.depth = tz;
  p.opacity = sigmoid(s.opacity_logit);

  const double mid = 0.5 * (cov2(0, 0) + cov2(1, 1));
  const double lambda_max = mid + std::sqrt(std::max(0.0, mid * mid - det));
  const double radius = std::ceil(std::sqrt(kCutoff2 * lambda_max));
  const double x0 = std::max(0.0, std::ceil(p.mean.x() - radius));
  const double x1 = std::min(k.width - 1.0, std::floor(p.mean.x() + radius));
  const double y0 = std::max(0.0, std::ceil(p.mean.y() - radius));
  const double y1 = std::min(k.height - 1.0, std::floor(p.mean.y() + radius));
  if (!(x0 <= x1 && y0 <= y1)) return p;
  p.x_min = static_cast<int>(x0);
  p.x_max = static_cast<int>(x1);
  p.y_min = static_cast<int>(y0);
  p.y_max = static_cast<int>(y1);
  p.visible = true;
  return p;
}

struct Image2D {
  ColorImage color;
  Grid<double> alpha;
};

/// Gradient of a scalar w.r.t. every splat parameter.
struct SplatGrad {
  Vec3 position = Vec3::Zero();
  Vec3 log_scale = Vec3::Zero();
  Vec4 rotation = Vec4::Zero();
  double opacity_logit = 0.0;
  Rgb color = Rgb::Zero();
};

/// Projection + depth ordering + tile bins for one camera.
class Frame {
 public:
  Frame(const std::vector<Splat>& splats, const CameraIntrinsics& k, const CameraPose& pose)
      : splats_(&splats), k_(k), pose_(pose) {
    projected_.reserve(splats.size());
    for (const auto& s : splats) projected_.push_back(project_splat(s, k, pose));
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < splats.size(); ++i) {
      if (projected_[i].visible) order.push_back(i);
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return projected_[a].depth < projected_[b].depth;
    });
    tiles_x_ = (k.width + kTileSize - 1) / kTileSize;
    tiles_y_ = (k.height + kTileSize - 1) / kTileSize;
    bins_.assign(static_cast<std::size_t>(tiles_x_) * tiles_y_, {});
    for (std::size_t i : order) {
      const auto& p = projected_[i];
      for (int ty = p.y_min / kTileSize; ty <= p.y_max / kTileSize; ++ty) {
        for (int tx = p.x_min / kTileSize; tx <= p.x_max / kTileSize; ++tx) {
          bins_[static_cast<std::size_t>(ty) * tiles_x_ + tx].push_back(i);
        }
      }
    }
  }

  // Keeps a pointer to `splats`.
  Frame(std::vector<Splat>&&, const CameraIntrinsics&, const CameraPose&) = delete;

  std::size_t tile_count() const { return bins_.size(); }
  const std::vector<Projected>& projected() const { return projected_; }

  /// Front-to-back composite over a black background.
  Image2D render(unsigned workers) const {
    Image2D out{ColorImage(k_.width, k_.height, Rgb::Zero()),
                Grid<double>(k_.width, k_.height, 0.0)};
    parallel_for(bins_.size(), workers, [&](std::size_t begin, std::size_t end) {
      for (std::size_t t = begin; t < end; ++t) {
        for_each_pixel(t, [&](int x, int y) {
          Rgb c = Rgb::Zero();
          double transmit = 1.0;
          for (std::size_t i : bins_[t]) {
            const double a = alpha_at(projected_[i], x, y);
            if (a <= 0.0) continue;
            c += (*splats_)[i].color * (a * transmit);
            transmit *= 1.0 - a;
          }
          out.color(x, y) = c;
          out.alpha(x, y) = 1.0 - transmit;
        });
      }
    });
    return out;
  }

  /// Reverse pass: d(loss)/d(params) given d(loss)/d(rendered color).
  /// Pixels with zero upstream gradient are skipped. Per-tile partial sums
  /// are reduced in tile order, so the result is independent of `workers`.
  std::vector<SplatGrad> backward(const Grid<Rgb>& d_color, unsigned workers) const {
    require_same_shape(d_color, Grid<Rgb>(k_.width, k_.height), "backward");
    // Per-tile, per-entry screen-space gradients:
    // [mean_x, mean_y, conic_a, conic_b, conic_c, opacity_logit, r, g, b]
    using Screen = std::array<double, 9>;
    std::vector<std::vector<Screen>> tile_grads(bins_.size());
    parallel_for(bins_.size(), workers, [&](std::size_t begin, std::size_t end) {
      struct Hit {
        std::size_t entry;
        double alpha, transmit, dx, dy;
      };
      std::vector<Hit> hits;
      for (std::size_t t = begin; t < end; ++t) {
        const auto& bin = bins_[t];
        auto& acc = tile_grads[t];
        acc.assign(bin.size(), Screen{});
        for_each_pixel(t, [&](int x, int y) {
          const Rgb& g = d_color(x, y);
          if (g.isZero(0.0)) return;
          hits.clear();
          double transmit = 1.0;
          for (std::size_t e = 0; e < bin.size(); ++e) {
            const auto& p = projected_[bin[e]];
            const double a = alpha_at(p, x, y);
            if (a <= 0.0) continue;
            hits.push_back({e, a, transmit, x - p.mean.x(), y - p.mean.y()});
            transmit *= 1.0 - a;
          }
          Rgb behind = Rgb::Zero();  // composite of everything after the current hit
          for (auto it = hits.rbegin(); it != hits.rend(); ++it) {
            const std::size_t i = bin[it->entry];
            const auto& p = projected_[i];
            const Rgb& color = (*splats_)[i].color;
            auto& s = acc[it->entry];
            const double w = it->alpha * it->transmit;
            s[6] += g.x() * w;
            s[7] += g.y() * w;
            s[8] += g.z() * w;
            const double d_alpha = it->transmit * g.dot(color - behind);
            behind = color * it->alpha + behind * (1.0 - it->alpha);
            const double gauss = it->alpha / p.opacity;
            s[5] += d_alpha * gauss * p.opacity * (1.0 - p.opacity);
            const double d_q = -0.5 * it->alpha * d_alpha;
            const double dx = it->dx, dy = it->dy;
            s[0] += -d_q * (2.0 * p.conic_a * dx + 2.0 * p.conic_b * dy);
            s[1] += -d_q * (2.0 * p.conic_b * dx + 2.0 * p.conic_c * dy);
            s[2] += d_q * dx * dx;
            s[3] += d_q * 2.0 * dx * dy;
            s[4] += d_q * dy * dy;
          }
        });
      }
    });

    std::vector<Screen> screen(splats_->size(), Screen{});
    for (std::size_t t = 0; t < bins_.size(); ++t) {
      for (std::size_t e = 0; e < bins_[t].size(); ++e) {
        auto& dst = screen[bins_[t][e]];
        const auto& src = tile_grads[t][e];
        for (int j = 0; j < 9; ++j) dst[j] += src[j];
      }
    }

    std::vector<SplatGrad> grads(splats_->size());
    parallel_for(splats_->size(), workers, [&](std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i) {
        if (projected_[i].visible) grads[i] = splat_backward(i, screen[i]);
      }
    });
    return grads;
  }

 private:
  static double alpha_at(const Projected& p, int x, int y) {
    if (x < p.x_min || x > p.x_max || y < p.y_min || y > p.y_max) return 0.0;
    const double dx = x - p.mean.x();
    const double dy = y - p.mean.y();
    const double q = p.conic_a * dx * dx + 2.0 * p.conic_b * dx * dy + p.conic_c * dy * dy;
    if (q > kCutoff2) return 0.0;
    return p.opacity * std::exp(-0.5 * q);
  }

  template <typename Fn>
  void for_each_pixel(std::size_t tile, Fn&& fn) const {
    const int tx = static_cast<int>(tile % tiles_x_);
    const int ty = static_cast<int>(tile / tiles_x_);
    const int x_end = std::min(k_.width, (tx + 1) * kTileSize);
    const int y_end = std::min(k_.height, (ty + 1) * kTileSize);
    for (int y = ty * kTileSize; y < y_end; ++y) {
      for (int x = tx * kTileSize; x < x_end; ++x) fn(x, y);
    }
  }

  SplatGrad splat_backward(std::size_t i, const std::array<double, 9>& s) const {
    const auto& p = projected_[i];
    SplatGrad g;
    g.color = Rgb(s[6], s[7], s[8]);
    g.opacity_logit = s[5];

    // Conic -> 2D covariance -> camera covariance and Jacobian.
    Mat2 d_conic;
    d_conic << s[2], 0.5 * s[3], 0.5 * s[3], s[4];
    const Mat2 d_cov2 = -p.conic * d_conic * p.conic;
    const Mat3 d_cov_cam = p.jac.transpose() * d_cov2 * p.jac;
    const Eigen::Matrix<double, 2, 3> d_jac = 2.0 * d_cov2 * p.jac * p.cov_cam;

    // Camera covariance -> world covariance -> M = R * S.
    const Mat3& w = pose_.rotation;
    const Mat3 d_cov_world = w.transpose() * d_cov_cam * w;
    const Mat3 m = p.rot * p.scale.asDiagonal();
    const Mat3 d_m = 2.0 * d_cov_world * m;
    Mat3 d_rot;
    for (int c = 0; c < 3; ++c) {
      d_rot.col(c) = d_m.col(c) * p.scale[c];
      g.log_scale[c] = d_m.col(c).dot(p.rot.col(c)) * p.scale[c];
    }

    const double qw = p.unit_q[0], qx = p.unit_q[1], qy = p.unit_q[2], qz = p.unit_q[3];
    Vec4 d_unit;
    d_unit[0] = 2.0 * (-qz * d_rot(0, 1) + qy * d_rot(0, 2) + qz * d_rot(1, 0) -
                       qx * d_rot(1, 2) - qy * d_rot(2, 0) + qx * d_rot(2, 1));
    d_unit[1] = 2.0 * (qy * d_rot(0, 1) + qz * d_rot(0, 2) + qy * d_rot(1, 0) -
                       2.0 * qx * d_rot(1, 1) - qw * d_rot(1, 2) + qz * d_rot(2, 0) +
                       qw * d_rot(2, 1) - 2.0 * qx * d_rot(2, 2));
    d_unit[2] = 2.0 * (-2.0 * qy * d_rot(0, 0) + qx * d_rot(0, 1) + qw * d_rot(0, 2) +
                       qx * d_rot(1, 0) + qz * d_rot(1, 2) - qw * d_rot(2, 0) +
                       qz * d_rot(2, 1) - 2.0 * qy * d_rot(2, 2));
    d_unit[3] = 2.0 * (-2.0 * qz * d_rot(0, 0) - qw * d_rot(0, 1) + qx * d_rot(0, 2) +
                       qw * d_rot(1, 0) - 2.0 * qz * d_rot(1, 1) + qy * d_rot(1, 2) +
                       qx * d_rot(2, 0) + qy * d_rot(2, 1));
    g.rotation = (d_unit - p.unit_q * p.unit_q.dot(d_unit)) / p.q_norm;

    // Mean and Jacobian -> camera-space position -> world position.
    const double tx = p.cam.x(), ty = p.cam.y(), tz = p.cam.z();
    const double fx = k_.fx, fy = k_.fy;
    const double tz2 = tz * tz, tz3 = tz2 * tz;
    Vec3 d_cam;
    d_cam.x() = s[0] * fx / tz + d_jac(0, 2) * (-fx / tz2);
    d_cam.y() = s[1] * fy / tz + d_jac(1, 2) * (-fy / tz2);
    d_cam.z() = -s[0] * fx * tx / tz2 - s[1] * fy * ty / tz2 +
                d_jac(0, 0) * (-fx / tz2) + d_jac(0, 2) * (2.0 * fx * tx / tz3) +
                d_jac(1, 1) * (-fy / tz2) + d_jac(1, 2) * (2.0 * fy * ty / tz3);
    g.position = w.transpose() * d_cam;
    return g;
  }

  const std::vector<Splat>* splats_;
  CameraIntrinsics k_;
  CameraPose pose_;
  std::vector<Projected> projected_;
  int tiles_x_ = 0;
  int tiles_y_ = 0;
  std::vector<std::vector<std::size_t>> bins_;
};

inline Image2D rasterize(const std::vector<Splat>& splats, const CameraIntrinsics& k,
                         const CameraPose& pose, unsigned workers = 1) {
  k.validate();
  return Frame(splats, k, pose).render(workers);
}

}  // namespace worldseed::gsplat
