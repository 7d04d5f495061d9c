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

#include "worldseed/alignment.hpp"

#include "alignment_oracle.hpp"

#include <gtest/gtest.h>

#include <set>

namespace worldseed::alignment {
namespace {

TEST(Band, UniformMaskIsEmpty) {
  const DepthMap d(8, 8, 2.0);
  EXPECT_TRUE(extract_boundary(CoverageMask(8, 8, 1), d, d).empty());
  EXPECT_TRUE(extract_boundary(CoverageMask(8, 8, 0), d, d).empty());
}

TEST(Band, VerticalHalfPlaneMatchesPixelLoop) {
  CoverageMask m(8, 8, 0);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 4; ++x) m(x, y) = 1;
  }
  const DepthMap e(8, 8, 2.0), n(8, 8, 1.6);
  const auto band = extract_boundary(m, e, n);
  // Pixel loop: a pixel is on the band when its right or lower neighbour
  // differs (forward difference) or its left or upper neighbour differs.
  std::set<std::pair<int, int>> want;
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      const bool fwd = (x + 1 < 8 && m(x + 1, y) != m(x, y)) || (y + 1 < 8 && m(x, y + 1) != m(x, y));
      const bool bwd = (x > 0 && m(x - 1, y) != m(x, y)) || (y > 0 && m(x, y - 1) != m(x, y));
      if (fwd || bwd) want.insert({x, y});
    }
  }
  std::set<std::pair<int, int>> got;
  for (const auto& b : band) {
    got.insert({b.x, b.y});
    EXPECT_DOUBLE_EQ(b.factor(), 1.25);
  }
  EXPECT_EQ(got, want);
  EXPECT_EQ(got.size(), 16u);
  for (const auto& [x, y] : got) EXPECT_TRUE(x == 3 || x == 4);
}

TEST(Band, SkipsInvalidDepthAndChecksShape) {
  CoverageMask m(4, 1, 1);
  m(2, 0) = 0;
  m(3, 0) = 0;
  DepthMap e(4, 1, 3.0);
  e(2, 0) = kInvalidDepth;
  const auto band = extract_boundary(m, e, DepthMap(4, 1, 1.5));
  ASSERT_EQ(band.size(), 1u);
  EXPECT_EQ(band[0].x, 1);
  EXPECT_EQ(band[0].factor(), 2.0);
  EXPECT_THROW(extract_boundary(m, DepthMap(3, 1, 1.0), e), std::invalid_argument);
}

TEST(Band, FactorClamp) {
  EXPECT_EQ((BandSample{0, 0, 10.0, 1.0}).factor(), 5.0);
  EXPECT_EQ((BandSample{0, 0, 1.0, 10.0}).factor(), 0.2);
}

TEST(Interpolate, ConstantBand) {
  BoundaryBand band = {{0, 0, 3.0, 2.0}, {5, 5, 1.5, 1.0}, {2, 4, 0.3, 0.2}};
  const auto f = interpolate_shift(band, CoverageMask(6, 6, 1));
  for (std::size_t i = 0; i < f.factor.size(); ++i) {
    EXPECT_NEAR(f.factor[i], 1.5, 1e-15);
    EXPECT_EQ(f.defined[i], 1);
  }
}

TEST(Interpolate, EquidistantMidpoint) {
  BoundaryBand band = {{0, 0, 1.0, 1.0}, {4, 0, 2.0, 1.0}};
  CoverageMask region(5, 1, 0);
  region(2, 0) = 1;
  const auto f = interpolate_shift(band, region);
  EXPECT_DOUBLE_EQ(f.factor(2, 0), 1.5);
  EXPECT_EQ(f.factor(0, 0), 1.0);
  EXPECT_EQ(f.factor(4, 0), 2.0);
  EXPECT_EQ(f.factor(1, 0), 1.0);  // outside region and band
  EXPECT_EQ(f.defined(1, 0), 0);
  EXPECT_THROW(interpolate_shift({}, region), std::invalid_argument);
}

TEST(Interpolate, MatchesFullIdwWhenKCoversBand) {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> coord(0, 15);
  std::uniform_real_distribution<double> depth(0.5, 3.0);
  for (int trial = 0; trial < 100; ++trial) {
    BoundaryBand band;
    std::set<std::pair<int, int>> used;
    const int n = 1 + static_cast<int>(rng() % 8);
    while (static_cast<int>(band.size()) < n) {
      const int x = coord(rng), y = coord(rng);
      if (used.insert({x, y}).second) band.push_back({x, y, depth(rng), depth(rng)});
    }
    const auto region = testing::random_mask(16, 16, 0.5, rng);
    const auto f = interpolate_shift(band, region, 8);
    for (int y = 0; y < 16; ++y) {
      for (int x = 0; x < 16; ++x) {
        double want = 1.0;
        if (used.count({x, y})) {
          for (const auto& b : band) if (b.x == x && b.y == y) want = b.factor();
        } else if (region(x, y)) {
          double num = 0.0, den = 0.0;
          for (const auto& b : band) {
            const double w = 1.0 / std::hypot(b.x - x, b.y - y);
            num += w * b.factor();
            den += w;
          }
          want = num / den;
        }
        EXPECT_NEAR(f.factor(x, y), want, 1e-9);
      }
    }
  }
}

TEST(Interpolate, UsesOnlyNearestEight) {
  // Eight samples with factor 1 close by and one far sample with factor 5.
  BoundaryBand band;
  for (int i = 0; i < 8; ++i) band.push_back({i, 0, 1.0, 1.0});
  band.push_back({19, 19, 5.0, 1.0});
  CoverageMask region(20, 20, 0);
  region(3, 2) = 1;
  EXPECT_EQ(interpolate_shift(band, region).factor(3, 2), 1.0);
  EXPECT_GT(interpolate_shift(band, region, 9).factor(3, 2), 1.0);
}

TEST(Shift, IdentityFieldIsBitExact) {
  std::mt19937_64 rng(4);
  const auto step = testing::random_align_step(rng);
  const auto pts = testing::lift_new(step);
  ShiftField f{Grid<double>(step.k.width, step.k.height, 1.0), CoverageMask(step.k.width, step.k.height, 1)};
  const auto out = apply_shift(pts, f, step.k, step.pose);
  ASSERT_EQ(out.size(), pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) EXPECT_EQ(out.points[i].position, pts.points[i].position);
}

TEST(Shift, DoublesDepthOnSameRay) {
  CameraIntrinsics k{4.0, 4.0, 2.0, 2.0, 5, 5};
  WorldCloud c;
  c.points.push_back({Vec3(0.25, -0.25, 1.0), Rgb::Zero(), 3});
  ShiftField f{Grid<double>(5, 5, 2.0), CoverageMask(5, 5, 1)};
  const auto out = apply_shift(c, f, k, CameraPose::identity());
  EXPECT_EQ(out.points[0].position, Vec3(0.5, -0.5, 2.0));
  EXPECT_EQ(out.points[0].origin_step, 3);
}

TEST(Shift, Errors) {
  CameraIntrinsics k{4.0, 4.0, 2.0, 2.0, 5, 5};
  ShiftField f{Grid<double>(5, 5, 2.0), CoverageMask(5, 5, 1)};
  WorldCloud outside;
  outside.points.push_back({Vec3(10.0, 0.0, 1.0), Rgb::Zero(), 0});
  EXPECT_THROW(apply_shift(outside, f, k, CameraPose::identity()), std::invalid_argument);
  WorldCloud behind;
  behind.points.push_back({Vec3(0.0, 0.0, -1.0), Rgb::Zero(), 0});
  EXPECT_THROW(apply_shift(behind, f, k, CameraPose::identity()), std::invalid_argument);
  f.defined(2, 2) = 0;
  WorldCloud undefined;
  undefined.points.push_back({Vec3(0.0, 0.0, 1.0), Rgb::Zero(), 0});
  EXPECT_THROW(apply_shift(undefined, f, k, CameraPose::identity()), std::invalid_argument);
}

TEST(Merge, Concatenates) {
  WorldCloud a, b;
  a.points.push_back({Vec3(1, 0, 0), Rgb::Zero(), 0});
  b.points.push_back({Vec3(2, 0, 0), Rgb::Zero(), 1});
  b.points.push_back({Vec3(3, 0, 0), Rgb::Zero(), 1});
  EXPECT_EQ(merge(a, WorldCloud{}).size(), 1u);
  const auto m = merge(a, b);
  ASSERT_EQ(m.size(), 3u);
  EXPECT_EQ(m.points[0].position.x(), 1.0);
  EXPECT_EQ(m.points[2].position.x(), 3.0);
}

TEST(Align, RandomStepsKeepRaysPixelsAndBand) {
  std::mt19937_64 rng(1234);
  for (int trial = 0; trial < 100; ++trial) {
    const auto step = testing::random_align_step(rng);
    const auto c = testing::check_align_step(step);
    EXPECT_LT(c.max_ray_angle, 1e-12);
    EXPECT_EQ(c.pixel_moves, 0u);
    EXPECT_LT(c.max_band_rel_error, 1e-6);
    EXPECT_TRUE(c.monotone);
    EXPECT_GT(c.band, 0u);
  }
}

TEST(Align, UnitFactorsGiveIdentity) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    const auto c = testing::check_align_step(testing::random_align_step(rng, true));
    EXPECT_TRUE(c.identity_exact);
  }
  // Uniform mask: empty band, identity.
  auto step = testing::random_align_step(rng);
  const auto pts = testing::lift_new(step);
  const auto r = align(pts, CoverageMask(step.k.width, step.k.height, 0),
                       DepthMap(step.k.width, step.k.height, kInvalidDepth), step.fresh, step.k, step.pose);
  EXPECT_EQ(r.band_size, 0u);
  for (std::size_t i = 0; i < pts.size(); ++i) EXPECT_EQ(r.aligned.points[i].position, pts.points[i].position);
}

TEST(Align, BandJson) {
  const auto j = band_to_json({{1, 2, 2.0, 1.6}});
  EXPECT_EQ(j.size(), 1u);
  EXPECT_EQ(j[0]["x"], 1);
  EXPECT_DOUBLE_EQ(j[0]["factor"].get<double>(), 1.25);
}

}  // namespace
}  // namespace worldseed::alignment
