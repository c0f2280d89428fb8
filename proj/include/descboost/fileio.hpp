// Copyright 2026 The descboost Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// On-disk formats. All integers and floats are little-endian, no padding.
//
// Feature file:
//   "FBF1" | u8 flags (bit0: 0 real, 1 binary) | u32 width | u32 height | u32 N | u32 D
//   N × { 5 × f32 (x_px, y_px, score, orientation_rad, scale) | payload }
//   payload: D × f32 (real) or ceil(D/8) bytes, bit j in byte j/8 at j%8 (binary)
//
// Checkpoint file:
//   "FBW1" | u32 D | u32 L | u8 head | u8 activation | u8 norm placement
//   per tensor in canonical order: u32 name length | name | u64 count | count × f64

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "descboost/booster.hpp"
#include "descboost/datagen.hpp"
#include "descboost/errors.hpp"
#include "descboost/types.hpp"

namespace descboost {

inline constexpr char kFeatureMagic[4] = {'F', 'B', 'F', '1'};
inline constexpr char kCheckpointMagic[4] = {'F', 'B', 'W', '1'};
inline constexpr std::size_t kFeatureHeaderBytes = 4 + 1 + 4 * 4;
inline constexpr std::size_t kGeometryBytes = 5 * 4;

namespace io {

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

  const std::vector<std::uint8_t>& data() const noexcept { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& b) : buf_(b) {}

  std::size_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return buf_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) throw FormatError(std::string("truncated file: expected ") + what, pos_);
  }
  std::uint8_t u8() {
    need(1, "u8");
    return buf_[pos_++];
  }
  std::uint32_t u32() {
    need(4, "u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8, "u64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::vector<std::uint8_t> bytes(std::size_t n) {
    need(n, "byte block");
    std::vector<std::uint8_t> out(buf_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                  buf_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return out;
  }

 private:
  const std::vector<std::uint8_t>& buf_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigurationError("cannot open '" + path + "' for reading");
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& data) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ConfigurationError("cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!f) throw ConfigurationError("write to '" + path + "' failed");
}

inline void expect_magic(ByteReader& r, const char (&magic)[4]) {
  const std::size_t at = r.offset();
  const auto m = r.bytes(4);
  for (int i = 0; i < 4; ++i) {
    if (m[i] != static_cast<std::uint8_t>(magic[i])) {
      throw FormatError(std::string("bad magic, expected ") + std::string(magic, 4), at);
    }
  }
}

}  // namespace io

// ---------------------------------------------------------------------------
// Feature files.

inline std::vector<std::uint8_t> encode_features(const FeatureSet& fs) {
  fs.validate();
  const double norm = fs.normalizer();
  io::ByteWriter w;
  w.bytes(kFeatureMagic, 4);
  w.u8(fs.kind() == DescriptorKind::Binary ? 1 : 0);
  w.u32(fs.width);
  w.u32(fs.height);
  w.u32(static_cast<std::uint32_t>(fs.size()));
  w.u32(static_cast<std::uint32_t>(fs.dim()));
  for (std::size_t i = 0; i < fs.size(); ++i) {
    const auto& g = fs.keypoints[i];
    w.f32(static_cast<float>(g.x * norm));
    w.f32(static_cast<float>(g.y * norm));
    w.f32(static_cast<float>(g.score));
    w.f32(static_cast<float>(g.orientation));
    w.f32(static_cast<float>(g.scale));
    const auto& d = fs.descriptors[i];
    if (d.kind() == DescriptorKind::Binary) {
      const auto bits = d.packed_bits();
      w.bytes(bits.data(), bits.size());
    } else {
      for (double v : d.real_values()) w.f32(static_cast<float>(v));
    }
  }
  return w.data();
}

/// Parses a feature file image. Coordinates are normalized by the largest
/// image dimension; expected_kind, when given, must match the flags.
inline FeatureSet decode_features(const std::vector<std::uint8_t>& bytes,
                                  std::optional<DescriptorKind> expected_kind = std::nullopt) {
  io::ByteReader r(bytes);
  io::expect_magic(r, kFeatureMagic);
  const std::size_t flags_at = r.offset();
  const std::uint8_t flags = r.u8();
  if (flags & ~1u) throw FormatError("unknown flag bits set", flags_at);
  const DescriptorKind kind = (flags & 1u) ? DescriptorKind::Binary : DescriptorKind::Real;
  if (expected_kind && *expected_kind != kind) {
    throw FormatError(std::string("descriptor kind is ") + to_string(kind) + ", expected " +
                          to_string(*expected_kind),
                      flags_at);
  }
  FeatureSet fs;
  fs.width = r.u32();
  fs.height = r.u32();
  const std::uint32_t n = r.u32();
  const std::uint32_t d = r.u32();
  fs.kind_hint = kind;
  fs.dim_hint = d;
  if (n > 0 && (fs.width == 0 || fs.height == 0)) throw FormatError("zero image dimension", 5);
  const std::uint64_t payload = kind == DescriptorKind::Binary ? DescriptorVector::packed_size(d) : 4ull * d;
  const std::uint64_t expected = kFeatureHeaderBytes + static_cast<std::uint64_t>(n) * (kGeometryBytes + payload);
  if (bytes.size() != expected) {
    throw FormatError("file length " + std::to_string(bytes.size()) + " does not match header (" +
                          std::to_string(expected) + " bytes)",
                      std::min<std::uint64_t>(bytes.size(), expected));
  }
  const double norm = fs.normalizer();
  fs.keypoints.reserve(n);
  fs.descriptors.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::size_t at = r.offset();
    KeypointGeometry g;
    g.x = static_cast<double>(r.f32()) / norm;
    g.y = static_cast<double>(r.f32()) / norm;
    g.score = r.f32();
    g.orientation = r.f32();
    g.scale = r.f32();
    if (!g.valid()) throw FormatError("keypoint " + std::to_string(i) + " has invalid geometry", at);
    fs.keypoints.push_back(g);
    if (kind == DescriptorKind::Binary) {
      auto bits = r.bytes(DescriptorVector::packed_size(d));
      auto dv = DescriptorVector::binary(d, bits);
      if (!std::equal(bits.begin(), bits.end(), dv.packed_bits().begin())) {
        throw FormatError("padding bits set in descriptor " + std::to_string(i), r.offset() - 1);
      }
      fs.descriptors.push_back(std::move(dv));
    } else {
      std::vector<double> v(d);
      for (auto& x : v) {
        x = r.f32();
        if (!std::isfinite(x)) throw FormatError("non-finite descriptor value", r.offset() - 4);
      }
      fs.descriptors.push_back(DescriptorVector::real(std::move(v)));
    }
  }
  return fs;
}

inline void save_features(const std::string& path, const FeatureSet& fs) {
  io::write_file(path, encode_features(fs));
}

inline FeatureSet load_features(const std::string& path,
                                std::optional<DescriptorKind> expected_kind = std::nullopt) {
  FeatureSet fs = decode_features(io::read_file(path), expected_kind);
  fs.image_id = path;
  return fs;
}

// ---------------------------------------------------------------------------
// Checkpoints.

inline std::vector<std::uint8_t> encode_checkpoint(const BoosterParams& p) {
  io::ByteWriter w;
  w.bytes(kCheckpointMagic, 4);
  w.u32(static_cast<std::uint32_t>(p.config.dim));
  w.u32(static_cast<std::uint32_t>(p.config.layers));
  w.u8(static_cast<std::uint8_t>(p.config.head));
  w.u8(static_cast<std::uint8_t>(Activation::ReLU));
  w.u8(static_cast<std::uint8_t>(p.config.norm));
  visit_weights(p.weights, [&](const std::string& name, const Tensor2& t) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u64(t.size());
    for (double v : t.values()) w.f64(v);
  });
  return w.data();
}

/// Parses a checkpoint. A given expectation must agree on D, L and head.
inline BoosterParams decode_checkpoint(const std::vector<std::uint8_t>& bytes,
                                       std::optional<BoosterConfig> expected = std::nullopt) {
  io::ByteReader r(bytes);
  io::expect_magic(r, kCheckpointMagic);
  BoosterConfig cfg;
  cfg.dim = r.u32();
  cfg.layers = r.u32();
  const std::size_t head_at = r.offset();
  const std::uint8_t head = r.u8();
  if (head > 1) throw FormatError("unknown head kind " + std::to_string(head), head_at);
  cfg.head = static_cast<HeadKind>(head);
  const std::uint8_t act = r.u8();
  if (act != static_cast<std::uint8_t>(Activation::ReLU)) {
    throw FormatError("unknown activation id " + std::to_string(act), head_at + 1);
  }
  const std::uint8_t norm = r.u8();
  if (norm > 1) throw FormatError("unknown norm placement " + std::to_string(norm), head_at + 2);
  cfg.norm = static_cast<NormPlacement>(norm);
  if (cfg.dim == 0 || cfg.layers == 0) throw FormatError("checkpoint declares an empty model", 4);
  if (expected && (expected->dim != cfg.dim || expected->layers != cfg.layers || expected->head != cfg.head)) {
    throw ConfigurationError("checkpoint is D=" + std::to_string(cfg.dim) + " L=" + std::to_string(cfg.layers) +
                             " head=" + to_string(cfg.head) + ", expected D=" + std::to_string(expected->dim) +
                             " L=" + std::to_string(expected->layers) + " head=" + to_string(expected->head));
  }
  BoosterParams p = BoosterParams::zeros(cfg);
  visit_weights(p.weights, [&](const std::string& name, Tensor2& t) {
    const std::size_t at = r.offset();
    const std::uint32_t len = r.u32();
    if (len != name.size()) throw FormatError("expected tensor '" + name + "'", at);
    const auto got = r.bytes(len);
    if (!std::equal(got.begin(), got.end(), name.begin())) {
      throw FormatError("expected tensor '" + name + "'", at + 4);
    }
    const std::size_t count_at = r.offset();
    const std::uint64_t count = r.u64();
    if (count != t.size()) {
      throw FormatError("tensor '" + name + "' has " + std::to_string(count) + " values, expected " +
                            std::to_string(t.size()),
                        count_at);
    }
    r.need(8 * count, "tensor values");
    for (double& v : t.values()) v = r.f64();
  });
  if (r.remaining() != 0) throw FormatError("trailing bytes after last tensor", r.offset());
  return p;
}

inline void save_checkpoint(const std::string& path, const BoosterParams& p) {
  io::write_file(path, encode_checkpoint(p));
}

inline BoosterParams load_checkpoint(const std::string& path,
                                     std::optional<BoosterConfig> expected = std::nullopt) {
  return decode_checkpoint(io::read_file(path), expected);
}

// ---------------------------------------------------------------------------
// Warps: nine row-major numbers, whitespace separated.

inline std::string format_warp(const PlanarWarp& w) {
  std::string out;
  char buf[64];
  const auto m = w.matrix();
  for (std::size_t i = 0; i < 9; ++i) {
    std::snprintf(buf, sizeof buf, "%.17g%c", m[i], i % 3 == 2 ? '\n' : ' ');
    out += buf;
  }
  return out;
}

inline PlanarWarp parse_warp(const std::string& text, const std::string& origin = "<warp>") {
  std::istringstream in(text);
  std::array<double, 9> m{};
  for (double& v : m) {
    if (!(in >> v)) throw ConfigurationError(origin + ": expected 9 numbers");
  }
  std::string extra;
  if (in >> extra) throw ConfigurationError(origin + ": trailing content after 9 numbers");
  return PlanarWarp(m);
}

inline void save_warp(const std::string& path, const PlanarWarp& w) {
  const std::string s = format_warp(w);
  io::write_file(path, {s.begin(), s.end()});
}

inline PlanarWarp load_warp(const std::string& path) {
  const auto b = io::read_file(path);
  return parse_warp({b.begin(), b.end()}, path);
}

// ---------------------------------------------------------------------------
// Labeled pairs: two feature files and a warp; labels are recomputed on load.

struct PairPaths {
  std::string a, b, warp;

  static PairPaths from_prefix(const std::string& prefix) {
    return {prefix + ".a.fbf", prefix + ".b.fbf", prefix + ".warp"};
  }
};

inline void save_pair(const PairPaths& paths, const LabeledPair& p) {
  save_features(paths.a, p.a);
  save_features(paths.b, p.b);
  save_warp(paths.warp, p.warp);
}

inline LabeledPair load_pair(const PairPaths& paths) {
  LabeledPair p{load_features(paths.a), load_features(paths.b), load_warp(paths.warp), {}};
  p.labels = label_from_warp(p.a, p.b, p.warp);
  return p;
}

}  // namespace descboost
