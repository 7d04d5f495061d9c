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

// Depth-guided foreground/background layering of a single RGBD frame.

#pragma once

#include "worldseed/geometry.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <deque>
#include <stdexcept>
#include <string>
#include <vector>

namespace worldseed::layering {

struct CandidateSegment {
  CoverageMask mask;
  double score = 0.0;
};

struct LayerThresholds {
  double tau_iou = 0.85;
  double area_min = 0.005;
  double area_max = 0.60;
  double depth_percentile = 0.35;

  void validate() const {
    auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!in01(tau_iou) || !in01(area_min) || !in01(area_max) || !in01(depth_percentile)) {
      throw std::invalid_argument("layer thresholds must lie in [0,1]");
    }
    if (!(area_min < area_max)) {
      throw std::invalid_argument("layer thresholds: area_min must be < area_max");
    }
  }
};

struct LayerDecomposition {
  CoverageMask foreground;
  CoverageMask background;
  CoverageMask occlusion;
  double theta_d = 0.0;
  std::vector<double> kept_scores;
};

/// Keeps candidates with score > tau_iou and area within
/// [area_min * image_area, area_max * image_area].
inline std::vector<CandidateSegment> filter_segments(
    const std::vector<CandidateSegment>& cands, double tau_iou, double area_min,
    double area_max, double image_area) {
  LayerThresholds{tau_iou, area_min, area_max, 0.0}.validate();
  const double lo = area_min * image_area;
  const double hi = area_max * image_area;
  std::vector<CandidateSegment> kept;
  for (const auto& c : cands) {
    const auto area = static_cast<double>(count_ones(c.mask));
    if (c.score > tau_iou && area >= lo && area <= hi) kept.push_back(c);
  }
  return kept;
}

/// Lower median of the valid depths under `mask`.
inline double masked_median(const CoverageMask& mask, const DepthMap& depth) {
  require_same_shape(mask, depth, "masked_median");
  std::vector<double> values;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] && depth_valid(depth[i])) values.push_back(depth[i]);
  }
  if (values.empty()) {
    throw std::invalid_argument("segment covers no valid depth");
  }
  const std::size_t mid = (values.size() - 1) / 2;
  std::nth_element(values.begin(), values.begin() + mid, values.end());
  return values[mid];
}

inline CoverageMask classify_foreground(const std::vector<CandidateSegment>& valid,
                                        const DepthMap& depth, double theta_d) {
  CoverageMask fg(depth.width(), depth.height(), 0);
  for (const auto& seg : valid) {
    require_same_shape(seg.mask, depth, "classify_foreground");
    if (masked_median(seg.mask, depth) < theta_d) {
      for (std::size_t i = 0; i < fg.size(); ++i) {
        if (seg.mask[i]) fg[i] = 1;
      }
    }
  }
  return fg;
}

/// Foreground pixels lying behind theta_d (fg AND depth > theta_d).
inline CoverageMask occlusion_region(const CoverageMask& fg, const DepthMap& depth,
                                     double theta_d) {
  require_same_shape(fg, depth, "occlusion_region");
  CoverageMask omega(fg.width(), fg.height(), 0);
  for (std::size_t i = 0; i < fg.size(); ++i) {
    omega[i] = (fg[i] && depth_valid(depth[i]) && depth[i] > theta_d) ? 1 : 0;
  }
  return omega;
}

inline CoverageMask complement(const CoverageMask& mask) {
  CoverageMask out(mask.width(), mask.height(), 0);
  for (std::size_t i = 0; i < mask.size(); ++i) out[i] = mask[i] ? 0 : 1;
  return out;
}

/// Full decomposition from candidate segments.
inline LayerDecomposition decompose(const std::vector<CandidateSegment>& cands,
                                    const DepthMap& depth,
                                    const LayerThresholds& t = {}) {
  t.validate();
  LayerDecomposition out;
  const auto valid = filter_segments(cands, t.tau_iou, t.area_min, t.area_max,
                                     static_cast<double>(depth.size()));
  out.theta_d = percentile(depth, t.depth_percentile);
  out.foreground = classify_foreground(valid, depth, out.theta_d);
  out.background = complement(out.foreground);
  out.occlusion = occlusion_region(out.foreground, depth, out.theta_d);
  for (const auto& v : valid) out.kept_scores.push_back(v.score);
  return out;
}

/// Offline segmentation: 4-connected components of valid depth, split where
/// neighbouring depths jump by more than `relative_jump` of the smaller one.
/// Score = 1 - stddev / median of the component depth, clamped to [0,1].
inline std::vector<CandidateSegment> builtin_segment(const DepthMap& depth,
                                                     double relative_jump = 0.15) {
  const int w = depth.width();
  const int h = depth.height();
  Grid<int> label(w, h, -1);
  std::vector<CandidateSegment> segments;
  std::deque<std::pair<int, int>> queue;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (label(x, y) >= 0 || !depth_valid(depth(x, y))) continue;
      const int id = static_cast<int>(segments.size());
      CandidateSegment seg{CoverageMask(w, h, 0), 0.0};
      std::vector<double> values;
      label(x, y) = id;
      queue.emplace_back(x, y);
      while (!queue.empty()) {
        const auto [cx, cy] = queue.front();
        queue.pop_front();
        seg.mask(cx, cy) = 1;
        const double d = depth(cx, cy);
        values.push_back(d);
        constexpr int kDx[4] = {1, -1, 0, 0};
        constexpr int kDy[4] = {0, 0, 1, -1};
        for (int n = 0; n < 4; ++n) {
          const int nx = cx + kDx[n];
          const int ny = cy + kDy[n];
          if (!depth.contains(nx, ny) || label(nx, ny) >= 0) continue;
          const double nd = depth(nx, ny);
          if (!depth_valid(nd)) continue;
          if (std::abs(nd - d) > relative_jump * std::min(nd, d)) continue;
          label(nx, ny) = id;
          queue.emplace_back(nx, ny);
        }
      }
      double mean = 0.0;
      for (double v : values) mean += v;
      mean /= static_cast<double>(values.size());
      double var = 0.0;
      for (double v : values) var += (v - mean) * (v - mean);
      const double stddev = std::sqrt(var / static_cast<double>(values.size()));
      const std::size_t mid = (values.size() - 1) / 2;
      std::nth_element(values.begin(), values.begin() + mid, values.end());
      seg.score = std::clamp(1.0 - stddev / values[mid], 0.0, 1.0);
      segments.push_back(std::move(seg));
    }
  }
  return segments;
}

inline std::string build_prompt(const std::string& scene_category,
                                const std::vector<std::string>& colors) {
  if (scene_category.empty()) throw std::invalid_argument("build_prompt: empty scene category");
  if (colors.empty()) throw std::invalid_argument("build_prompt: no colors");
  std::string joined;
  for (std::size_t i = 0; i < colors.size(); ++i) {
    if (colors[i].empty()) throw std::invalid_argument("build_prompt: empty color name");
    if (i) joined += ", ";
    joined += colors[i];
  }
  return "high-resolution " + scene_category + " background with " + joined +
         " colors, photorealistic, 8K";
}

/// (D - D_min) / (D_max - D_min) over valid pixels; invalid pixels and
/// constant maps yield 0.
inline Grid<double> normalized_depth(const DepthMap& depth) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (double d : depth.values()) {
    if (!depth_valid(d)) continue;
    lo = std::min(lo, d);
    hi = std::max(hi, d);
  }
  Grid<double> out(depth.width(), depth.height(), 0.0);
  if (!(hi > lo)) return out;
  for (std::size_t i = 0; i < depth.size(); ++i) {
    if (depth_valid(depth[i])) out[i] = (depth[i] - lo) / (hi - lo);
  }
  return out;
}

inline nlohmann::json to_json(const LayerDecomposition& d) {
  return {{"theta_d", d.theta_d},
          {"kept_scores", d.kept_scores},
          {"foreground_pixels", count_ones(d.foreground)},
          {"occlusion_pixels", count_ones(d.occlusion)}};
}

}  // namespace worldseed::layering
