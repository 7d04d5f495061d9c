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

// File formats: PNG (color, 1-bit masks, 16-bit depth), PFM depth,
// binary little-endian PLY point clouds, base64 and camera JSON.

#pragma once

#include "worldseed/geometry.hpp"

#include <nlohmann/json.hpp>
#include <png.h>
#include <sodium.h>

#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace worldseed::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

using Bytes = std::vector<std::uint8_t>;

class FormatError : public Error {
 public:
  using Error::Error;
};

inline Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

// ---------------------------------------------------------------------------
// base64

inline std::string base64_encode(std::span<const std::uint8_t> bytes) {
  const std::size_t len =
      sodium_base64_ENCODED_LEN(bytes.size(), sodium_base64_VARIANT_ORIGINAL);
  std::string out(len, '\0');
  sodium_bin2base64(out.data(), len, bytes.data(), bytes.size(),
                    sodium_base64_VARIANT_ORIGINAL);
  out.resize(len - 1);  // drop the terminator
  return out;
}

inline Bytes base64_decode(std::string_view text) {
  Bytes out(text.size() / 4 * 3 + 3);
  std::size_t len = 0;
  if (sodium_base642bin(out.data(), out.size(), text.data(), text.size(),
                        " \n\r\t", &len, nullptr,
                        sodium_base64_VARIANT_ORIGINAL) != 0) {
    throw FormatError("invalid base64 payload");
  }
  out.resize(len);
  return out;
}

// ---------------------------------------------------------------------------
// PNG

namespace detail {

struct PngReadCursor {
  std::span<const std::uint8_t> data;
  std::size_t offset = 0;
};

inline void png_read_mem(png_structp png, png_bytep out, png_size_t count) {
  auto* cursor = static_cast<PngReadCursor*>(png_get_io_ptr(png));
  if (cursor->offset + count > cursor->data.size()) {
    png_error(png, "truncated PNG stream");
  }
  std::memcpy(out, cursor->data.data() + cursor->offset, count);
  cursor->offset += count;
}

inline void png_write_mem(png_structp png, png_bytep in, png_size_t count) {
  auto* out = static_cast<Bytes*>(png_get_io_ptr(png));
  out->insert(out->end(), in, in + count);
}

inline void png_flush_noop(png_structp) {}

[[noreturn]] inline void png_fail(png_structp png, png_const_charp msg) {
  auto* err = static_cast<std::string*>(png_get_error_ptr(png));
  if (err) *err = msg;
  png_longjmp(png, 1);
}

inline void png_warn_silent(png_structp, png_const_charp) {}

/// Decoded raster: channels in {1, 3}, depth in {8, 16}, samples unpacked
/// (sub-byte grayscale is expanded to 8 bits, 16-bit kept big-endian-free).
struct Raster {
  int width = 0;
  int height = 0;
  int channels = 0;
  int bit_depth = 0;
  std::vector<std::uint16_t> samples;
};

inline Raster decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
    throw FormatError("not a PNG stream");
  }
  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err,
                                           png_fail, png_warn_silent);
  png_infop info = png_create_info_struct(png);
  PngReadCursor cursor{bytes, 0};
  Raster raster;
  std::vector<png_bytep> rows;
  std::vector<std::uint8_t> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("PNG decode failed: " + err);
  }
  png_set_read_fn(png, &cursor, png_read_mem);
  png_read_info(png, info);

  const int color_type = png_get_color_type(png, info);
  int bit_depth = png_get_bit_depth(png, info);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) {
    png_set_expand_gray_1_2_4_to_8(png);
  }
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color_type & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS)) {
    png_set_strip_alpha(png);
  }
  if (bit_depth == 16) png_set_swap(png);
  png_read_update_info(png, info);

  raster.width = static_cast<int>(png_get_image_width(png, info));
  raster.height = static_cast<int>(png_get_image_height(png, info));
  raster.channels = png_get_channels(png, info);
  raster.bit_depth = png_get_bit_depth(png, info);
  const std::size_t row_bytes = png_get_rowbytes(png, info);
  buffer.resize(row_bytes * raster.height);
  rows.resize(raster.height);
  for (int y = 0; y < raster.height; ++y) rows[y] = buffer.data() + y * row_bytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  if (raster.channels != 1 && raster.channels != 3) {
    throw FormatError("unsupported PNG channel count");
  }
  const std::size_t n = static_cast<std::size_t>(raster.width) * raster.height *
                        raster.channels;
  raster.samples.resize(n);
  if (raster.bit_depth == 16) {
    for (std::size_t i = 0; i < n; ++i) {
      std::uint16_t v;
      std::memcpy(&v, buffer.data() + 2 * i, 2);
      raster.samples[i] = v;
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) raster.samples[i] = buffer[i];
  }
  return raster;
}

inline Bytes encode_png(int width, int height, int color_type, int bit_depth,
                        const std::vector<std::uint8_t>& packed_rows) {
  std::string err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err,
                                            png_fail, png_warn_silent);
  png_infop info = png_create_info_struct(png);
  Bytes out;
  const std::size_t row_bytes = packed_rows.size() / static_cast<std::size_t>(height);
  std::vector<png_const_bytep> rows(height);
  for (int y = 0; y < height; ++y) rows[y] = packed_rows.data() + y * row_bytes;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw FormatError("PNG encode failed: " + err);
  }
  png_set_write_fn(png, &out, png_write_mem, png_flush_noop);
  png_set_IHDR(png, info, width, height, bit_depth, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (bit_depth == 16) png_set_swap(png);
  png_write_image(png, const_cast<png_bytepp>(rows.data()));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

}  // namespace detail

inline std::uint8_t quantize8(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

/// 8-bit RGB PNG.
inline Bytes encode_color_png(const ColorImage& image) {
  std::vector<std::uint8_t> rows(image.size() * 3);
  for (std::size_t i = 0; i < image.size(); ++i) {
    for (int c = 0; c < 3; ++c) rows[3 * i + c] = quantize8(image[i][c]);
  }
  return detail::encode_png(image.width(), image.height(), PNG_COLOR_TYPE_RGB, 8, rows);
}

inline ColorImage decode_color_png(std::span<const std::uint8_t> bytes) {
  const auto r = detail::decode_png(bytes);
  const double scale = r.bit_depth == 16 ? 65535.0 : 255.0;
  ColorImage image(r.width, r.height);
  for (std::size_t i = 0; i < image.size(); ++i) {
    if (r.channels == 3) {
      image[i] = Rgb(r.samples[3 * i], r.samples[3 * i + 1], r.samples[3 * i + 2]) / scale;
    } else {
      image[i] = Rgb::Constant(r.samples[i] / scale);
    }
  }
  return image;
}

/// 1-bit grayscale PNG.
inline Bytes encode_mask_png(const CoverageMask& mask) {
  const std::size_t row_bytes = (static_cast<std::size_t>(mask.width()) + 7) / 8;
  std::vector<std::uint8_t> rows(row_bytes * mask.height(), 0);
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      if (mask(x, y)) rows[y * row_bytes + x / 8] |= static_cast<std::uint8_t>(0x80u >> (x % 8));
    }
  }
  return detail::encode_png(mask.width(), mask.height(), PNG_COLOR_TYPE_GRAY, 1, rows);
}

/// Any grayscale or RGB PNG; nonzero first channel means 1.
inline CoverageMask decode_mask_png(std::span<const std::uint8_t> bytes) {
  const auto r = detail::decode_png(bytes);
  CoverageMask mask(r.width, r.height, 0);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = r.samples[i * r.channels] != 0 ? 1 : 0;
  }
  return mask;
}

/// 16-bit grayscale depth PNG; stored value = round(depth / scale), 0 = invalid.
inline Bytes encode_depth_png16(const DepthMap& depth, double scale) {
  std::vector<std::uint8_t> rows(depth.size() * 2);
  for (std::size_t i = 0; i < depth.size(); ++i) {
    std::uint16_t v = 0;
    if (depth_valid(depth[i])) {
      v = static_cast<std::uint16_t>(std::clamp(std::lround(depth[i] / scale), 1L, 65535L));
    }
    std::memcpy(rows.data() + 2 * i, &v, 2);
  }
  return detail::encode_png(depth.width(), depth.height(), PNG_COLOR_TYPE_GRAY, 16, rows);
}

inline DepthMap decode_depth_png16(std::span<const std::uint8_t> bytes, double scale) {
  const auto r = detail::decode_png(bytes);
  if (r.channels != 1) throw FormatError("depth PNG must be grayscale");
  DepthMap depth(r.width, r.height, kInvalidDepth);
  for (std::size_t i = 0; i < depth.size(); ++i) {
    if (r.samples[i] != 0) depth[i] = r.samples[i] * scale;
  }
  return depth;
}

// ---------------------------------------------------------------------------
// PFM (single channel, little-endian, bottom-to-top rows). Invalid = 0.

inline Bytes encode_pfm(const DepthMap& depth) {
  std::ostringstream header;
  header << "Pf\n" << depth.width() << " " << depth.height() << "\n-1.0\n";
  const std::string h = header.str();
  Bytes out(h.begin(), h.end());
  out.reserve(out.size() + depth.size() * 4);
  for (int y = depth.height() - 1; y >= 0; --y) {
    for (int x = 0; x < depth.width(); ++x) {
      const double d = depth(x, y);
      const float f = depth_valid(d) ? static_cast<float>(d) : 0.0f;
      const auto bits = std::bit_cast<std::array<std::uint8_t, 4>>(f);
      out.insert(out.end(), bits.begin(), bits.end());
    }
  }
  return out;
}

inline DepthMap decode_pfm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
    return t;
  };
  if (token() != "Pf") throw FormatError("PFM: expected single-channel 'Pf' header");
  int w = 0, h = 0;
  double scale = 0.0;
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    scale = std::stod(token());
  } catch (const std::exception&) {
    throw FormatError("PFM: malformed header");
  }
  ++pos;  // single whitespace before raster
  if (w <= 0 || h <= 0 || bytes.size() < pos + static_cast<std::size_t>(w) * h * 4) {
    throw FormatError("PFM: truncated raster");
  }
  const bool little = scale < 0.0;
  DepthMap depth(w, h, kInvalidDepth);
  for (int y = h - 1; y >= 0; --y) {
    for (int x = 0; x < w; ++x) {
      std::array<std::uint8_t, 4> b;
      std::memcpy(b.data(), bytes.data() + pos, 4);
      pos += 4;
      if (!little) std::reverse(b.begin(), b.end());
      const double d = std::bit_cast<float>(b);
      depth(x, y) = (std::isfinite(d) && d > 0.0) ? d : kInvalidDepth;
    }
  }
  return depth;
}

/// Raw little-endian float32 raster, row-major top-to-bottom (wire format).
inline Bytes encode_float_raster(const Grid<double>& grid) {
  Bytes out(grid.size() * 4);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const auto f = static_cast<float>(grid[i]);
    std::memcpy(out.data() + 4 * i, &f, 4);
  }
  return out;
}

inline Grid<double> decode_float_raster(std::span<const std::uint8_t> bytes, int width, int height) {
  const std::size_t n = static_cast<std::size_t>(width) * height;
  if (bytes.size() != n * 4) throw FormatError("float raster size mismatch");
  Grid<double> grid(width, height);
  for (std::size_t i = 0; i < n; ++i) {
    float f;
    std::memcpy(&f, bytes.data() + 4 * i, 4);
    grid[i] = f;
  }
  return grid;
}

// ---------------------------------------------------------------------------
// PLY: binary_little_endian 1.0, vertex {x,y,z: float; red,green,blue: uchar}.

inline Bytes encode_ply(const WorldCloud& cloud) {
  std::ostringstream header;
  header << "ply\nformat binary_little_endian 1.0\n"
         << "element vertex " << cloud.size() << "\n"
         << "property float x\nproperty float y\nproperty float z\n"
         << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
         << "end_header\n";
  const std::string h = header.str();
  Bytes out(h.begin(), h.end());
  out.reserve(out.size() + cloud.size() * 15);
  for (const auto& p : cloud.points) {
    for (int a = 0; a < 3; ++a) {
      const auto bits = std::bit_cast<std::array<std::uint8_t, 4>>(static_cast<float>(p.position[a]));
      out.insert(out.end(), bits.begin(), bits.end());
    }
    for (int c = 0; c < 3; ++c) out.push_back(quantize8(p.color[c]));
  }
  return out;
}

/// Reads binary little-endian PLY vertices. Accepts float/double positions,
/// uchar/float colors, and skips unknown scalar properties.
inline WorldCloud decode_ply(std::span<const std::uint8_t> bytes) {
  const std::string_view all(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  const std::size_t end = all.find("end_header\n");
  if (all.substr(0, 4) != "ply\n" || end == std::string_view::npos) {
    throw FormatError("PLY: missing header");
  }
  std::istringstream header(std::string(all.substr(0, end)));
  std::string line;
  std::size_t vertex_count = 0;
  bool in_vertex = false;
  bool saw_format = false;
  struct Prop {
    std::string name;
    std::string type;
    std::size_t offset;
  };
  std::vector<Prop> props;
  std::size_t stride = 0;
  auto type_size = [](const std::string& t) -> std::size_t {
    if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
    if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
    if (t == "int" || t == "uint" || t == "float" || t == "int32" || t == "uint32" || t == "float32") return 4;
    if (t == "double" || t == "float64") return 8;
    throw FormatError("PLY: unsupported property type " + t);
  };
  while (std::getline(header, line)) {
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt != "binary_little_endian") throw FormatError("PLY: only binary_little_endian supported");
      saw_format = true;
    } else if (word == "element") {
      std::string name;
      ls >> name;
      in_vertex = name == "vertex";
      if (in_vertex) ls >> vertex_count;
      else if (vertex_count == 0) throw FormatError("PLY: vertex element must come first");
    } else if (word == "property" && in_vertex) {
      std::string type, name;
      ls >> type;
      if (type == "list") throw FormatError("PLY: list properties on vertex unsupported");
      ls >> name;
      props.push_back({name, type, stride});
      stride += type_size(type);
    }
  }
  if (!saw_format) throw FormatError("PLY: missing format line");
  auto find = [&](const std::string& name) -> const Prop* {
    for (const auto& p : props) if (p.name == name) return &p;
    return nullptr;
  };
  const Prop* pos[3] = {find("x"), find("y"), find("z")};
  const Prop* col[3] = {find("red"), find("green"), find("blue")};
  for (auto* p : pos) if (!p) throw FormatError("PLY: missing x/y/z");

  const std::size_t body = end + std::string_view("end_header\n").size();
  if (bytes.size() < body + vertex_count * stride) throw FormatError("PLY: truncated body");

  auto read_scalar = [&](const std::uint8_t* at, const std::string& type) -> double {
    if (type == "float" || type == "float32") { float f; std::memcpy(&f, at, 4); return f; }
    if (type == "double" || type == "float64") { double d; std::memcpy(&d, at, 8); return d; }
    if (type == "uchar" || type == "uint8") return at[0] / 255.0;
    if (type == "ushort" || type == "uint16") { std::uint16_t v; std::memcpy(&v, at, 2); return v / 65535.0; }
    throw FormatError("PLY: unsupported type for x/y/z/color: " + type);
  };
  WorldCloud cloud;
  cloud.points.resize(vertex_count);
  for (std::size_t i = 0; i < vertex_count; ++i) {
    const std::uint8_t* rec = bytes.data() + body + i * stride;
    auto& p = cloud.points[i];
    for (int a = 0; a < 3; ++a) p.position[a] = read_scalar(rec + pos[a]->offset, pos[a]->type);
    for (int c = 0; c < 3; ++c) {
      p.color[c] = col[c] ? read_scalar(rec + col[c]->offset, col[c]->type) : 0.0;
    }
  }
  return cloud;
}

// ---------------------------------------------------------------------------
// JSON for cameras.

inline nlohmann::json to_json(const CameraIntrinsics& k) {
  return {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy},
          {"width", k.width}, {"height", k.height}};
}

inline CameraIntrinsics intrinsics_from_json(const nlohmann::json& j) {
  CameraIntrinsics k;
  k.fx = j.at("fx").get<double>();
  k.fy = j.at("fy").get<double>();
  k.cx = j.at("cx").get<double>();
  k.cy = j.at("cy").get<double>();
  k.width = j.at("width").get<int>();
  k.height = j.at("height").get<int>();
  k.validate();
  return k;
}

/// {"rotation": [[r00,r01,r02],[...],[...]], "translation": [tx,ty,tz]}
inline nlohmann::json to_json(const CameraPose& pose) {
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < 3; ++r) {
    rows.push_back({pose.rotation(r, 0), pose.rotation(r, 1), pose.rotation(r, 2)});
  }
  return {{"rotation", rows},
          {"translation", {pose.translation.x(), pose.translation.y(), pose.translation.z()}}};
}

inline CameraPose pose_from_json(const nlohmann::json& j) {
  CameraPose pose;
  const auto& rows = j.at("rotation");
  const auto& t = j.at("translation");
  if (rows.size() != 3 || t.size() != 3) throw FormatError("pose JSON: bad shape");
  for (int r = 0; r < 3; ++r) {
    if (rows[r].size() != 3) throw FormatError("pose JSON: bad rotation row");
    for (int c = 0; c < 3; ++c) pose.rotation(r, c) = rows[r][c].get<double>();
    pose.translation[r] = t[r].get<double>();
  }
  pose.validate(1e-6);
  return pose;
}

}  // namespace worldseed::io
