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

// Generative backends: inpainting, metric depth and captioning. Each has an
// offline builtin implementation and an HTTP client for the sidecar service.
//
// Wire protocol (HTTP/1.1 POST, JSON bodies):
//   /inpaint {width, height, image: b64 PNG, mask: b64 PNG (1 = known,
//             0 = fill), prompt, normalized_depth?: b64 float32 LE raster}
//            -> {image: b64 PNG}
//   /depth   {width, height, image: b64 PNG}
//            -> {depth: b64 float32 LE raster, scale: meters per unit}
//   /caption {width, height, image: b64 PNG} -> {category, colors: [..]}
// Rasters are row-major, top row first.

#pragma once

#include "worldseed/io.hpp"
#include "worldseed/layering.hpp"
#include "worldseed/scene.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cstdlib>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace worldseed::backends {

struct InpaintRequest {
  ColorImage image;
  CoverageMask mask;  // 1 = known, 0 = to fill
  std::string prompt;
  std::optional<Grid<double>> normalized_depth;

  void validate() const {
    require_same_shape(image, mask, "InpaintRequest");
    if (normalized_depth) require_same_shape(image, *normalized_depth, "InpaintRequest");
    if (count_ones(mask) == 0) {
      throw std::invalid_argument("InpaintRequest: mask has no known pixels");
    }
  }
};

struct Caption {
  std::string category;
  std::vector<std::string> colors;
};

class Inpainter {
 public:
  virtual ~Inpainter() = default;
  virtual ColorImage inpaint(const InpaintRequest& req) const = 0;
};

class DepthEstimator {
 public:
  virtual ~DepthEstimator() = default;
  /// Full-frame metric depth for `image` seen from (k, pose). Remote
  /// estimators see only the image.
  virtual DepthMap estimate(const ColorImage& image, const CameraIntrinsics& k,
                            const CameraPose& pose) const = 0;
};

class Captioner {
 public:
  virtual ~Captioner() = default;
  virtual Caption caption(const ColorImage& image) const = 0;
};

// ---------------------------------------------------------------------------
// Builtin inpainting: multiscale pull-push.

namespace detail {

struct Level {
  ColorImage color;
  Grid<std::uint8_t> known;
};

inline Level pull(const Level& fine) {
  const int w = (fine.color.width() + 1) / 2;
  const int h = (fine.color.height() + 1) / 2;
  Level coarse{ColorImage(w, h, Rgb::Zero()), Grid<std::uint8_t>(w, h, 0)};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      Rgb sum = Rgb::Zero();
      int n = 0;
      for (int dy = 0; dy < 2; ++dy) {
        for (int dx = 0; dx < 2; ++dx) {
          const int fx = 2 * x + dx;
          const int fy = 2 * y + dy;
          if (!fine.known.contains(fx, fy) || !fine.known(fx, fy)) continue;
          sum += fine.color(fx, fy);
          ++n;
        }
      }
      if (n > 0) {
        coarse.color(x, y) = sum / n;
        coarse.known(x, y) = 1;
      }
    }
  }
  return coarse;
}

/// Bilinear sample of a fully filled level at fine-pixel (x, y).
inline Rgb upsample_at(const ColorImage& coarse, int x, int y) {
  const double px = std::clamp(0.5 * x - 0.25, 0.0, coarse.width() - 1.0);
  const double py = std::clamp(0.5 * y - 0.25, 0.0, coarse.height() - 1.0);
  const int x0 = static_cast<int>(std::floor(px));
  const int y0 = static_cast<int>(std::floor(py));
  const int x1 = std::min(x0 + 1, coarse.width() - 1);
  const int y1 = std::min(y0 + 1, coarse.height() - 1);
  const double ax = px - x0;
  const double ay = py - y0;
  return (1 - ay) * ((1 - ax) * coarse(x0, y0) + ax * coarse(x1, y0)) +
         ay * ((1 - ax) * coarse(x0, y1) + ax * coarse(x1, y1));
}

}  // namespace detail

/// Pull: 2x2 averages of known pixels build a pyramid until every pixel of
/// a level is known. Push: coarse-to-fine, unknown pixels take the bilinear
/// upsample of the filled coarser level; known pixels pass through.
inline ColorImage pull_push_fill(const ColorImage& image, const CoverageMask& known) {
  require_same_shape(image, known, "pull_push_fill");
  if (count_ones(known) == 0) {
    throw std::invalid_argument("pull_push_fill: no known pixels");
  }
  std::vector<detail::Level> pyramid;
  pyramid.push_back({image, known});
  while (count_ones(pyramid.back().known) != pyramid.back().known.size()) {
    pyramid.push_back(detail::pull(pyramid.back()));
  }
  for (std::size_t l = pyramid.size() - 1; l-- > 0;) {
    auto& fine = pyramid[l];
    const auto& coarse = pyramid[l + 1].color;
    for (int y = 0; y < fine.color.height(); ++y) {
      for (int x = 0; x < fine.color.width(); ++x) {
        if (!fine.known(x, y)) fine.color(x, y) = detail::upsample_at(coarse, x, y);
      }
    }
  }
  ColorImage out = std::move(pyramid.front().color);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = known[i] ? image[i] : out[i].cwiseMax(0.0).cwiseMin(1.0);
  }
  return out;
}

class PullPushInpainter final : public Inpainter {
 public:
  ColorImage inpaint(const InpaintRequest& req) const override {
    return pull_push_fill(req.image, req.mask);
  }
};

// ---------------------------------------------------------------------------
// Builtin depth: ray-cast a registered analytic scene.

class SyntheticDepth final : public DepthEstimator {
 public:
  explicit SyntheticDepth(std::optional<scene::SyntheticScene> scene = std::nullopt)
      : scene_(std::move(scene)) {}

  DepthMap estimate(const ColorImage& image, const CameraIntrinsics& k,
                    const CameraPose& pose) const override {
    if (!scene_) {
      throw BackendError("builtin depth estimator has no synthetic scene registered");
    }
    if (image.width() != k.width || image.height() != k.height) {
      throw std::invalid_argument("depth estimate: image does not match intrinsics");
    }
    DepthMap depth(k.width, k.height, kInvalidDepth);
    for (int v = 0; v < k.height; ++v) {
      for (int u = 0; u < k.width; ++u) {
        const double d = scene_->cast(k, pose, u, v).depth;
        if (!depth_valid(d)) {
          throw BackendError("builtin depth: ray through pixel (" + std::to_string(u) +
                             "," + std::to_string(v) + ") misses the synthetic scene");
        }
        depth(u, v) = d;
      }
    }
    return depth;
  }

 private:
  std::optional<scene::SyntheticScene> scene_;
};

// ---------------------------------------------------------------------------
// Builtin caption: 3-means on pixel colors, named by the nearest palette entry.

struct PaletteEntry {
  const char* name;
  Rgb rgb;
};

inline const std::array<PaletteEntry, 12>& palette() {
  static const std::array<PaletteEntry, 12> kPalette = {{
      {"black", Rgb(0.0, 0.0, 0.0)},      {"white", Rgb(1.0, 1.0, 1.0)},
      {"gray", Rgb(0.5, 0.5, 0.5)},       {"red", Rgb(0.8, 0.1, 0.1)},
      {"orange", Rgb(1.0, 0.55, 0.0)},    {"yellow", Rgb(1.0, 0.9, 0.1)},
      {"green", Rgb(0.1, 0.6, 0.1)},      {"cyan", Rgb(0.0, 0.8, 0.8)},
      {"blue", Rgb(0.1, 0.2, 0.8)},       {"purple", Rgb(0.5, 0.1, 0.6)},
      {"pink", Rgb(1.0, 0.6, 0.75)},      {"brown", Rgb(0.45, 0.3, 0.15)},
  }};
  return kPalette;
}

/// Palette name closest to `c` in RGB; first entry wins ties.
inline std::string nearest_color_name(const Rgb& c) {
  const auto& pal = palette();
  std::size_t best = 0;
  double best_d = (c - pal[0].rgb).squaredNorm();
  for (std::size_t i = 1; i < pal.size(); ++i) {
    const double d = (c - pal[i].rgb).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return pal[best].name;
}

class PaletteCaptioner final : public Captioner {
 public:
  static constexpr int kClusters = 3;
  static constexpr std::size_t kMaxSamples = 4096;

  Caption caption(const ColorImage& image) const override {
    if (image.empty()) throw std::invalid_argument("caption: empty image");
    const std::size_t stride = std::max<std::size_t>(1, image.size() / kMaxSamples);
    std::vector<Rgb> samples;
    for (std::size_t i = 0; i < image.size(); i += stride) samples.push_back(image[i]);

    // Farthest-point seeding keeps the clustering deterministic.
    std::vector<Rgb> centers{samples.front()};
    while (static_cast<int>(centers.size()) < kClusters) {
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < samples.size(); ++i) {
        double d = std::numeric_limits<double>::infinity();
        for (const auto& c : centers) d = std::min(d, (samples[i] - c).squaredNorm());
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      centers.push_back(samples[far]);
    }
    std::vector<int> assign(samples.size(), 0);
    std::vector<std::size_t> counts(kClusters, 0);
    for (int iter = 0; iter < 20; ++iter) {
      for (std::size_t i = 0; i < samples.size(); ++i) {
        int best = 0;
        for (int c = 1; c < kClusters; ++c) {
          if ((samples[i] - centers[c]).squaredNorm() <
              (samples[i] - centers[best]).squaredNorm()) {
            best = c;
          }
        }
        assign[i] = best;
      }
      std::vector<Rgb> sums(kClusters, Rgb::Zero());
      std::fill(counts.begin(), counts.end(), 0);
      for (std::size_t i = 0; i < samples.size(); ++i) {
        sums[assign[i]] += samples[i];
        ++counts[assign[i]];
      }
      for (int c = 0; c < kClusters; ++c) {
        if (counts[c] > 0) centers[c] = sums[c] / static_cast<double>(counts[c]);
      }
    }
    std::vector<int> order(kClusters);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return counts[a] > counts[b]; });
    Caption out{"scene", {}};
    for (int c : order) {
      if (counts[c] == 0) continue;
      auto name = nearest_color_name(centers[c]);
      if (std::find(out.colors.begin(), out.colors.end(), name) == out.colors.end()) {
        out.colors.push_back(std::move(name));
      }
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Remote client.

struct RemoteEndpoint {
  std::string url;  // scheme://host:port
  double timeout_s = 60.0;
  int retries = 2;
};

class SidecarClient {
 public:
  explicit SidecarClient(RemoteEndpoint endpoint) : endpoint_(std::move(endpoint)) {
    if (endpoint_.url.empty()) throw ConfigError("sidecar URL is empty");
  }

  const RemoteEndpoint& endpoint() const { return endpoint_; }

  /// POSTs `body`; retries transport failures, 429 and 5xx responses.
  nlohmann::json post(const std::string& path, const nlohmann::json& body) const {
    httplib::Client client(endpoint_.url);
    const auto secs = static_cast<time_t>(endpoint_.timeout_s);
    const auto usecs = static_cast<time_t>((endpoint_.timeout_s - secs) * 1e6);
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);
    const std::string payload = body.dump();
    std::string last_error;
    for (int attempt = 0; attempt <= endpoint_.retries; ++attempt) {
      auto res = client.Post(path, payload, "application/json");
      if (!res) {
        last_error = httplib::to_string(res.error());
        continue;
      }
      if (res->status == 429 || res->status >= 500) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200) {
        throw BackendError(path + ": HTTP " + std::to_string(res->status) + ": " + res->body);
      }
      try {
        return nlohmann::json::parse(res->body);
      } catch (const nlohmann::json::exception& e) {
        throw BackendError(path + ": malformed JSON response: " + e.what());
      }
    }
    throw BackendError(path + ": request failed after " +
                       std::to_string(endpoint_.retries + 1) + " attempts (" +
                       last_error + ")");
  }

 private:
  RemoteEndpoint endpoint_;
};

namespace wire {

inline nlohmann::json image_body(const ColorImage& image) {
  return {{"width", image.width()},
          {"height", image.height()},
          {"image", io::base64_encode(io::encode_color_png(image))}};
}

inline nlohmann::json inpaint_body(const InpaintRequest& req) {
  auto body = image_body(req.image);
  body["mask"] = io::base64_encode(io::encode_mask_png(req.mask));
  body["prompt"] = req.prompt;
  if (req.normalized_depth) {
    body["normalized_depth"] = io::base64_encode(io::encode_float_raster(*req.normalized_depth));
  }
  return body;
}

template <typename Fn>
auto decode_field(const std::string& what, Fn&& fn) {
  try {
    return fn();
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(what + ": malformed response: " + e.what());
  } catch (const io::FormatError& e) {
    throw BackendError(what + ": malformed response: " + e.what());
  }
}

}  // namespace wire

class RemoteInpainter final : public Inpainter {
 public:
  explicit RemoteInpainter(RemoteEndpoint ep) : client_(std::move(ep)) {}

  ColorImage inpaint(const InpaintRequest& req) const override {
    const auto res = client_.post("/inpaint", wire::inpaint_body(req));
    auto image = wire::decode_field("/inpaint", [&] {
      return io::decode_color_png(io::base64_decode(res.at("image").get<std::string>()));
    });
    if (!image.same_shape(req.image)) throw BackendError("/inpaint: response size mismatch");
    return image;
  }

 private:
  SidecarClient client_;
};

class RemoteDepth final : public DepthEstimator {
 public:
  explicit RemoteDepth(RemoteEndpoint ep) : client_(std::move(ep)) {}

  DepthMap estimate(const ColorImage& image, const CameraIntrinsics&,
                    const CameraPose&) const override {
    const auto res = client_.post("/depth", wire::image_body(image));
    auto depth = wire::decode_field("/depth", [&] {
      const double scale = res.value("scale", 1.0);
      auto raster = io::decode_float_raster(
          io::base64_decode(res.at("depth").get<std::string>()), image.width(), image.height());
      for (auto& d : raster.values()) d *= scale;
      return raster;
    });
    for (double d : depth.values()) {
      if (!std::isfinite(d) || !(d > 0.0)) {
        throw BackendError("/depth: response contains non-positive or non-finite depth");
      }
    }
    return depth;
  }

 private:
  SidecarClient client_;
};

class RemoteCaptioner final : public Captioner {
 public:
  explicit RemoteCaptioner(RemoteEndpoint ep) : client_(std::move(ep)) {}

  Caption caption(const ColorImage& image) const override {
    const auto res = client_.post("/caption", wire::image_body(image));
    return wire::decode_field("/caption", [&] {
      return Caption{res.at("category").get<std::string>(),
                     res.at("colors").get<std::vector<std::string>>()};
    });
  }

 private:
  SidecarClient client_;
};

// ---------------------------------------------------------------------------
// Suite: applies the shared contracts on top of any implementation.

class BackendSuite {
 public:
  BackendSuite(std::shared_ptr<const Inpainter> inpainter,
               std::shared_ptr<const DepthEstimator> depth,
               std::shared_ptr<const Captioner> captioner)
      : inpainter_(std::move(inpainter)),
        depth_(std::move(depth)),
        captioner_(std::move(captioner)) {
    if (!inpainter_ || !depth_ || !captioner_) {
      throw ConfigError("backend suite requires inpainter, depth and caption backends");
    }
  }

  static BackendSuite builtin(std::optional<scene::SyntheticScene> scene = std::nullopt) {
    return {std::make_shared<PullPushInpainter>(),
            std::make_shared<SyntheticDepth>(std::move(scene)),
            std::make_shared<PaletteCaptioner>()};
  }

  /// Known pixels of the request are copied into the result bit-exactly.
  ColorImage inpaint(const InpaintRequest& req) const {
    req.validate();
    if (count_ones(req.mask) == req.mask.size()) return req.image;
    ColorImage out = inpainter_->inpaint(req);
    if (!out.same_shape(req.image)) throw BackendError("inpaint: result size mismatch");
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (req.mask[i]) {
        out[i] = req.image[i];
      } else {
        out[i] = out[i].cwiseMax(0.0).cwiseMin(1.0);
      }
    }
    return out;
  }

  /// Raw estimate; valid hint pixels override it exactly.
  DepthMap estimate_depth(const ColorImage& image, const std::optional<DepthMap>& hint,
                          const CameraIntrinsics& k, const CameraPose& pose) const {
    if (hint) require_same_shape(image, *hint, "estimate_depth");
    if (hint && count_ones(valid_mask(*hint)) == hint->size()) return *hint;
    DepthMap depth = raw_depth(image, k, pose);
    return hint ? apply_hint(depth, *hint) : depth;
  }

  /// `raw` with every valid `hint` pixel substituted.
  static DepthMap apply_hint(const DepthMap& raw, const DepthMap& hint) {
    require_same_shape(raw, hint, "apply_hint");
    DepthMap out = raw;
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (depth_valid(hint[i])) out[i] = hint[i];
    }
    return out;
  }

  DepthMap raw_depth(const ColorImage& image, const CameraIntrinsics& k,
                     const CameraPose& pose) const {
    DepthMap depth = depth_->estimate(image, k, pose);
    require_same_shape(image, depth, "estimate_depth");
    return depth;
  }

  Caption caption(const ColorImage& image) const {
    auto c = captioner_->caption(image);
    if (c.category.empty() || c.colors.empty()) {
      throw BackendError("caption: backend returned an empty category or color list");
    }
    return c;
  }

 private:
  std::shared_ptr<const Inpainter> inpainter_;
  std::shared_ptr<const DepthEstimator> depth_;
  std::shared_ptr<const Captioner> captioner_;
};

/// Backend selection. Each of "inpainter", "depth", "captioner" is
/// "builtin" or "remote"; remote ones use `sidecar_url` (overridden by the
/// WORLDSEED_SIDECAR_URL environment variable, then by `url_override`).
struct BackendConfig {
  std::string inpainter = "builtin";
  std::string depth = "builtin";
  std::string captioner = "builtin";
  std::string sidecar_url;
  double timeout_s = 60.0;
  int retries = 2;

  static BackendConfig from_json(const nlohmann::json& j) {
    BackendConfig c;
    c.inpainter = j.value("inpainter", c.inpainter);
    c.depth = j.value("depth", c.depth);
    c.captioner = j.value("captioner", c.captioner);
    c.sidecar_url = j.value("sidecar_url", c.sidecar_url);
    c.timeout_s = j.value("timeout_s", c.timeout_s);
    c.retries = j.value("retries", c.retries);
    for (const auto* v : {&c.inpainter, &c.depth, &c.captioner}) {
      if (*v != "builtin" && *v != "remote") {
        throw ConfigError("backend must be 'builtin' or 'remote', got '" + *v + "'");
      }
    }
    if (!(c.timeout_s > 0.0) || c.retries < 0) throw ConfigError("invalid backend timeout/retries");
    return c;
  }

  bool all_builtin() const {
    return inpainter == "builtin" && depth == "builtin" && captioner == "builtin";
  }
};

inline BackendSuite make_suite(const BackendConfig& cfg,
                               std::optional<scene::SyntheticScene> scene,
                               const std::optional<std::string>& url_override = std::nullopt) {
  RemoteEndpoint ep{cfg.sidecar_url, cfg.timeout_s, cfg.retries};
  if (const char* env = std::getenv("WORLDSEED_SIDECAR_URL"); env && *env) ep.url = env;
  if (url_override) ep.url = *url_override;
  auto need_url = [&] {
    if (ep.url.empty()) throw ConfigError("remote backend selected but no sidecar URL configured");
  };
  std::shared_ptr<const Inpainter> inp;
  std::shared_ptr<const DepthEstimator> dep;
  std::shared_ptr<const Captioner> cap;
  if (cfg.inpainter == "remote") { need_url(); inp = std::make_shared<RemoteInpainter>(ep); }
  else inp = std::make_shared<PullPushInpainter>();
  if (cfg.depth == "remote") { need_url(); dep = std::make_shared<RemoteDepth>(ep); }
  else dep = std::make_shared<SyntheticDepth>(std::move(scene));
  if (cfg.captioner == "remote") { need_url(); cap = std::make_shared<RemoteCaptioner>(ep); }
  else cap = std::make_shared<PaletteCaptioner>();
  return {inp, dep, cap};
}

}  // namespace worldseed::backends
