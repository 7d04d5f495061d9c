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

// Depth-consistency repair for newly lifted points. Depth mismatch between
// the existing cloud and a fresh depth estimate is measured on the mask
// boundary, spread over the inpainted region by inverse-distance weighting,
// and applied as a per-point scale along each camera ray.

#pragma once

#include "worldseed/geometry.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace worldseed::alignment {

inline constexpr double kMinFactor = 0.2;
inline constexpr double kMaxFactor = 5.0;
inline constexpr int kNeighbors = 8;

struct BandSample {
  int x = 0;
  int y = 0;
  double existing_depth = 0.0;
  double new_depth = 0.0;

  /// existing / new, clamped to [kMinFactor, kMaxFactor].
  double factor() const {
    return std::clamp(existing_depth / new_depth, kMinFactor, kMaxFactor);
  }
};

using BoundaryBand = std::vector<BandSample>;

/// Multiplicative depth factors; 1.0 means unchanged. `defined` marks the
/// pixels where the field carries a value (region and band).
struct ShiftField {
  Grid<double> factor;
  CoverageMask defined;
};

/// True when some 4-neighbour of (x, y) has a different mask value, i.e.
/// the forward or backward difference of the mask is nonzero.
inline bool on_mask_edge(const CoverageMask& mask, int x, int y) {
  const std::uint8_t m = mask(x, y) ? 1 : 0;
  constexpr int kDx[4] = {1, -1, 0, 0};
  constexpr int kDy[4] = {0, 0, 1, -1};
  for (int n = 0; n < 4; ++n) {
    const int nx = x + kDx[n];
    const int ny = y + kDy[n];
    if (mask.contains(nx, ny) && (mask(nx, ny) ? 1 : 0) != m) return true;
  }
  return false;
}

/// Band pixels in raster order. Empty when the mask is uniform.
inline BoundaryBand extract_boundary(const CoverageMask& mask, const DepthMap& existing_depth,
                                     const DepthMap& new_depth) {
  require_same_shape(mask, existing_depth, "extract_boundary");
  require_same_shape(mask, new_depth, "extract_boundary");
  BoundaryBand band;
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      if (!on_mask_edge(mask, x, y)) continue;
      const double e = existing_depth(x, y);
      const double n = new_depth(x, y);
      if (!depth_valid(e) || !depth_valid(n)) continue;
      band.push_back({x, y, e, n});
    }
  }
  return band;
}

/// Factor field over `region` (and the band itself). Each region pixel
/// takes the 1/distance weighted mean of its kNeighbors nearest band
/// samples (ties by band order); band pixels keep their own factor.
inline ShiftField interpolate_shift(const BoundaryBand& band, const CoverageMask& region,
                                    int neighbors = kNeighbors) {
  if (band.empty()) throw std::invalid_argument("interpolate_shift: empty boundary band");
  if (neighbors < 1) throw std::invalid_argument("interpolate_shift: neighbors must be >= 1");
  ShiftField field{Grid<double>(region.width(), region.height(), 1.0),
                   CoverageMask(region.width(), region.height(), 0)};
  Grid<int> band_index(region.width(), region.height(), -1);
  for (std::size_t b = 0; b < band.size(); ++b) {
    const auto& s = band[b];
    if (!region.contains(s.x, s.y)) {
      throw std::invalid_argument("interpolate_shift: band pixel outside region grid");
    }
    band_index(s.x, s.y) = static_cast<int>(b);
    field.factor(s.x, s.y) = s.factor();
    field.defined(s.x, s.y) = 1;
  }
  const std::size_t k = std::min<std::size_t>(neighbors, band.size());
  struct Candidate {
    double dist2;
    std::size_t index;
    bool operator<(const Candidate& o) const {
      return dist2 < o.dist2 || (dist2 == o.dist2 && index < o.index);
    }
  };
  std::vector<Candidate> cands(band.size());
  for (int y = 0; y < region.height(); ++y) {
    for (int x = 0; x < region.width(); ++x) {
      if (!region(x, y) || band_index(x, y) >= 0) continue;
      for (std::size_t b = 0; b < band.size(); ++b) {
        const double dx = band[b].x - x;
        const double dy = band[b].y - y;
        cands[b] = {dx * dx + dy * dy, b};
      }
      std::nth_element(cands.begin(), cands.begin() + (k - 1), cands.end());
      std::sort(cands.begin(), cands.begin() + k);
      double num = 0.0;
      double den = 0.0;
      for (std::size_t i = 0; i < k; ++i) {
        const double w = 1.0 / std::sqrt(cands[i].dist2);
        num += w * band[cands[i].index].factor();
        den += w;
      }
      field.factor(x, y) = num / den;
      field.defined(x, y) = 1;
    }
  }
  return field;
}

/// Scales each point's camera-space position by the factor of the pixel it
/// projects to. Ray direction and pixel are preserved.
inline WorldCloud apply_shift(const WorldCloud& new_points, const ShiftField& field,
                              const CameraIntrinsics& k, const CameraPose& pose) {
  require_same_shape(field.factor, field.defined, "apply_shift");
  if (field.factor.width() != k.width || field.factor.height() != k.height) {
    throw std::invalid_argument("apply_shift: field does not match intrinsics");
  }
  WorldCloud out = new_points;
  for (auto& p : out.points) {
    const Vec3 cam = pose.to_camera(p.position);
    if (!(cam.z() > kNearPlane)) {
      throw std::invalid_argument("apply_shift: point behind the camera");
    }
    const Vec2 px = k.project(cam);
    const double ru = std::nearbyint(px.x());
    const double rv = std::nearbyint(px.y());
    if (!(ru >= 0.0 && rv >= 0.0 && ru < k.width && rv < k.height)) {
      throw std::invalid_argument("apply_shift: point projects outside the field");
    }
    const int u = static_cast<int>(ru);
    const int v = static_cast<int>(rv);
    if (!field.defined(u, v)) {
      throw std::invalid_argument("apply_shift: no field value at the point's pixel");
    }
    const double f = field.factor(u, v);
    if (f == 1.0) continue;
    p.position = pose.to_world(f * cam);
  }
  return out;
}

/// Existing points first, then the new ones; no deduplication.
inline WorldCloud merge(const WorldCloud& existing, const WorldCloud& aligned_new) {
  WorldCloud out = existing;
  out.points.insert(out.points.end(), aligned_new.points.begin(), aligned_new.points.end());
  return out;
}

struct AlignmentResult {
  WorldCloud aligned;
  std::size_t band_size = 0;
  double mean_factor = 1.0;
};

/// The full repair: band, interpolated field over mask = 0 pixels, and the
/// shift. Identity when the band is empty.
inline AlignmentResult align(const WorldCloud& new_points, const CoverageMask& mask,
                             const DepthMap& existing_depth, const DepthMap& new_depth,
                             const CameraIntrinsics& k, const CameraPose& pose) {
  AlignmentResult r;
  const auto band = extract_boundary(mask, existing_depth, new_depth);
  r.band_size = band.size();
  if (band.empty()) {
    r.aligned = new_points;
    return r;
  }
  double sum = 0.0;
  for (const auto& s : band) sum += s.factor();
  r.mean_factor = sum / static_cast<double>(band.size());
  CoverageMask region(mask.width(), mask.height(), 0);
  for (std::size_t i = 0; i < mask.size(); ++i) region[i] = mask[i] ? 0 : 1;
  r.aligned = apply_shift(new_points, interpolate_shift(band, region), k, pose);
  return r;
}

inline nlohmann::json band_to_json(const BoundaryBand& band) {
  auto arr = nlohmann::json::array();
  for (const auto& s : band) {
    arr.push_back({{"x", s.x}, {"y", s.y}, {"existing", s.existing_depth},
                   {"new", s.new_depth}, {"factor", s.factor()}});
  }
  return arr;
}

}  // namespace worldseed::alignment
