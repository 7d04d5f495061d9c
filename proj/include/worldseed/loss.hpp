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

// Masked photometric objective: (1 - lambda) * L1 + lambda * (1 - SSIM),
// evaluated only where the coverage mask is 1. Also masked PSNR.

#pragma once

#include "worldseed/core.hpp"

#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

namespace worldseed::loss {

inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kPsnrCap = 99.0;

struct LossParams {
  double ssim_weight = 0.2;
  int ssim_window = 11;

  void validate() const {
    if (!(ssim_weight >= 0.0 && ssim_weight <= 1.0)) {
      throw std::invalid_argument("ssim_weight must be in [0,1]");
    }
    if (ssim_window < 1 || ssim_window % 2 == 0) {
      throw std::invalid_argument("ssim_window must be a positive odd size");
    }
  }
};

struct LossValue {
  double total = 0.0;
  double l1 = 0.0;
  double ssim = 0.0;
};

namespace detail {

inline std::vector<double> gaussian_window(int size) {
  const int r = size / 2;
  std::vector<double> w(static_cast<std::size_t>(size) * size);
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      w[(dy + r) * size + (dx + r)] =
          std::exp(-(dx * dx + dy * dy) / (2.0 * kSsimSigma * kSsimSigma));
    }
  }
  return w;
}

inline void check_inputs(const ColorImage& render, const ColorImage& target,
                         const CoverageMask& mask) {
  require_same_shape(render, target, "masked loss");
  require_same_shape(render, mask, "masked loss");
  if (count_ones(mask) == 0) throw std::invalid_argument("masked loss: empty mask");
}

/// Mean masked SSIM over valid centers and channels; when `grad` is given,
/// accumulates d(mean SSIM)/d(render) into it.
inline double masked_ssim(const ColorImage& x, const ColorImage& y, const CoverageMask& mask,
                          int window, Grid<Rgb>* grad) {
  const int r = window / 2;
  const auto kernel = gaussian_window(window);
  const int w = x.width();
  const int h = x.height();
  const double n = static_cast<double>(count_ones(mask));
  double total = 0.0;
  for (int py = 0; py < h; ++py) {
    for (int px = 0; px < w; ++px) {
      if (!mask(px, py)) continue;
      double wsum = 0.0;
      Rgb mx = Rgb::Zero(), my = Rgb::Zero();
      Rgb sxx = Rgb::Zero(), syy = Rgb::Zero(), sxy = Rgb::Zero();
      for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
          const int qx = px + dx, qy = py + dy;
          if (!mask.contains(qx, qy) || !mask(qx, qy)) continue;
          const double k = kernel[(dy + r) * window + (dx + r)];
          const Rgb& a = x(qx, qy);
          const Rgb& b = y(qx, qy);
          wsum += k;
          mx += k * a;
          my += k * b;
          sxx += k * a.cwiseProduct(a);
          syy += k * b.cwiseProduct(b);
          sxy += k * a.cwiseProduct(b);
        }
      }
      mx /= wsum;
      my /= wsum;
      const Rgb vx = sxx / wsum - mx.cwiseProduct(mx);
      const Rgb vy = syy / wsum - my.cwiseProduct(my);
      const Rgb cxy = sxy / wsum - mx.cwiseProduct(my);
      Rgb d_mu, d_var, d_cov;
      for (int c = 0; c < 3; ++c) {
        const double a1 = 2.0 * mx[c] * my[c] + kSsimC1;
        const double b1 = 2.0 * cxy[c] + kSsimC2;
        const double c1 = mx[c] * mx[c] + my[c] * my[c] + kSsimC1;
        const double d1 = vx[c] + vy[c] + kSsimC2;
        const double s = (a1 * b1) / (c1 * d1);
        total += s;
        if (grad) {
          d_mu[c] = (2.0 * my[c] * b1) / (c1 * d1) - s * 2.0 * mx[c] / c1;
          d_var[c] = -s / d1;
          d_cov[c] = 2.0 * a1 / (c1 * d1);
        }
      }
      if (!grad) continue;
      for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
          const int qx = px + dx, qy = py + dy;
          if (!mask.contains(qx, qy) || !mask(qx, qy)) continue;
          const double k = kernel[(dy + r) * window + (dx + r)] / wsum;
          const Rgb& a = x(qx, qy);
          const Rgb& b = y(qx, qy);
          for (int c = 0; c < 3; ++c) {
            (*grad)(qx, qy)[c] += k *
                (d_mu[c] + 2.0 * d_var[c] * (a[c] - mx[c]) + d_cov[c] * (b[c] - my[c])) /
                (3.0 * n);
          }
        }
      }
    }
  }
  return total / (3.0 * n);
}

}  // namespace detail

/// Mean masked SSIM in [-1, 1] (1 for identical images).
inline double masked_ssim(const ColorImage& x, const ColorImage& y, const CoverageMask& mask,
                          int window = 11) {
  detail::check_inputs(x, y, mask);
  return detail::masked_ssim(x, y, mask, window, nullptr);
}

inline double masked_l1(const ColorImage& x, const ColorImage& y, const CoverageMask& mask) {
  detail::check_inputs(x, y, mask);
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (mask[i]) sum += (x[i] - y[i]).cwiseAbs().sum();
  }
  return sum / (3.0 * static_cast<double>(count_ones(mask)));
}

/// Loss and, optionally, its gradient w.r.t. `render` (zero at mask = 0).
inline LossValue masked_loss(const ColorImage& render, const ColorImage& target,
                             const CoverageMask& mask, const LossParams& params,
                             Grid<Rgb>* d_render = nullptr) {
  params.validate();
  detail::check_inputs(render, target, mask);
  LossValue v;
  const double n = static_cast<double>(count_ones(mask));
  if (d_render) *d_render = Grid<Rgb>(render.width(), render.height(), Rgb::Zero());
  double sum = 0.0;
  for (std::size_t i = 0; i < render.size(); ++i) {
    if (!mask[i]) continue;
    const Rgb diff = render[i] - target[i];
    sum += diff.cwiseAbs().sum();
    if (d_render) {
      for (int c = 0; c < 3; ++c) {
        const double sign = diff[c] > 0.0 ? 1.0 : (diff[c] < 0.0 ? -1.0 : 0.0);
        (*d_render)[i][c] = (1.0 - params.ssim_weight) * sign / (3.0 * n);
      }
    }
  }
  v.l1 = sum / (3.0 * n);
  const bool want_ssim_grad = d_render && params.ssim_weight > 0.0;
  Grid<Rgb> d_ssim;
  if (want_ssim_grad) d_ssim = Grid<Rgb>(render.width(), render.height(), Rgb::Zero());
  v.ssim = detail::masked_ssim(render, target, mask, params.ssim_window,
                               want_ssim_grad ? &d_ssim : nullptr);
  if (want_ssim_grad) {
    for (std::size_t i = 0; i < d_ssim.size(); ++i) {
      (*d_render)[i] -= params.ssim_weight * d_ssim[i];
    }
  }
  v.total = (1.0 - params.ssim_weight) * v.l1 + params.ssim_weight * (1.0 - v.ssim);
  return v;
}

/// 10 log10(1 / MSE) over mask = 1 pixels and channels, capped at 99 dB.
inline double masked_psnr(const ColorImage& x, const ColorImage& y, const CoverageMask& mask) {
  detail::check_inputs(x, y, mask);
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (mask[i]) sum += (x[i] - y[i]).squaredNorm();
  }
  const double mse = sum / (3.0 * static_cast<double>(count_ones(mask)));
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

}  // namespace worldseed::loss
