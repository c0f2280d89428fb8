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

// Synthetic two-view scenes: keypoints in image A, a random homography to
// image B, per-view descriptor corruption, and ground-truth labels from
// reprojection distance (< 3 px positive, > 15 px negative).

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "descboost/config.hpp"
#include "descboost/errors.hpp"
#include "descboost/tensor.hpp"
#include "descboost/types.hpp"

namespace descboost {

inline constexpr double kPositiveRadiusPx = 3.0;
inline constexpr double kNegativeRadiusPx = 15.0;
inline constexpr double kDetectorJitterPx = 1.0;
inline constexpr int kMaxWarpAttempts = 100;
// Non-maximum-suppression radius: keypoints of one image are at least this far apart.
inline constexpr double kMinSeparationPx = 8.0;

struct SceneSpec {
  std::uint32_t width = 640;
  std::uint32_t height = 480;
  std::size_t num_keypoints = 64;
  DescriptorKind kind = DescriptorKind::Real;
  std::size_t dim = 32;

  // Warp ranges: |rotation| ≤ rotation_deg, scale in [scale_min, scale_max],
  // |translation| ≤ translation_px per axis, |h31|,|h32| ≤ perspective
  // (in image-centered pixel units).
  double rotation_deg = 15.0;
  double scale_min = 0.85;
  double scale_max = 1.15;
  double translation_px = 32.0;
  double perspective = 2e-4;

  double sigma = 0.0;    // additive Gaussian std per component (real)
  double rho = 0.0;      // per-bit flip probability (binary)
  double dropout = 0.0;  // fraction of A keypoints without a counterpart in B
  // Fraction of keypoints whose ideal descriptor repeats another keypoint's
  // (repetitive texture). 0 makes every ideal descriptor unique.
  double repetition = 0.0;

  std::uint64_t seed = 0;

  void validate() const {
    if (width == 0 || height == 0) throw ConfigurationError("scene: image dims must be positive");
    if (num_keypoints < 8) throw ConfigurationError("scene: need at least 8 keypoints");
    if (dim < 2) throw ConfigurationError("scene: descriptor dim must be >= 2");
    if (!(sigma >= 0.0)) throw ConfigurationError("scene: sigma must be >= 0");
    if (!(rho >= 0.0 && rho < 0.5)) throw ConfigurationError("scene: rho must be in [0, 0.5)");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigurationError("scene: dropout must be in [0, 1)");
    if (!(repetition >= 0.0 && repetition < 1.0)) {
      throw ConfigurationError("scene: repetition must be in [0, 1)");
    }
    if (!(scale_min > 0.0 && scale_max >= scale_min)) throw ConfigurationError("scene: bad scale range");
    if (rotation_deg < 0.0 || translation_px < 0.0 || perspective < 0.0) {
      throw ConfigurationError("scene: warp ranges must be non-negative");
    }
  }

  /// Reads the documented keys; unknown keys are rejected.
  static SceneSpec from_config(KeyValueConfig& c) {
    SceneSpec s;
    s.width = c.get_int<std::uint32_t>("width", s.width);
    s.height = c.get_int<std::uint32_t>("height", s.height);
    s.num_keypoints = c.get_int<std::size_t>("num_keypoints", s.num_keypoints);
    s.kind = parse_descriptor_kind(c.get_string("kind", to_string(s.kind)));
    s.dim = c.get_int<std::size_t>("dim", s.dim);
    s.rotation_deg = c.get_double("rotation_deg", s.rotation_deg);
    s.scale_min = c.get_double("scale_min", s.scale_min);
    s.scale_max = c.get_double("scale_max", s.scale_max);
    s.translation_px = c.get_double("translation_px", s.translation_px);
    s.perspective = c.get_double("perspective", s.perspective);
    s.sigma = c.get_double("sigma", s.sigma);
    s.rho = c.get_double("rho", s.rho);
    s.dropout = c.get_double("dropout", s.dropout);
    s.repetition = c.get_double("repetition", s.repetition);
    s.seed = c.get_int<std::uint64_t>("seed", s.seed);
    c.reject_unknown();
    s.validate();
    return s;
  }
};

struct LabeledPair {
  FeatureSet a;
  FeatureSet b;
  PlanarWarp warp;  // A pixels → B pixels
  MatchLabels labels;
};

/// Labels implied by the warp for keypoints of A against keypoints of B.
inline MatchLabels label_from_warp(const FeatureSet& a, const FeatureSet& b, const PlanarWarp& warp) {
  MatchLabels labels;
  labels.anchors.resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto [ax, ay] = a.pixel(i);
    const auto proj = warp.apply(ax, ay);
    for (std::size_t j = 0; j < b.size(); ++j) {
      if (!proj) {
        labels.anchors[i].negatives.push_back(static_cast<std::uint32_t>(j));
        continue;
      }
      const auto [bx, by] = b.pixel(j);
      const double dist = std::hypot(proj->first - bx, proj->second - by);
      if (dist < kPositiveRadiusPx) {
        labels.anchors[i].positives.push_back(static_cast<std::uint32_t>(j));
      } else if (dist > kNegativeRadiusPx) {
        labels.anchors[i].negatives.push_back(static_cast<std::uint32_t>(j));
      }
    }
  }
  return labels;
}

/// Recomputes every label from the warp; throws LabelError listing the
/// anchors whose stored labels disagree.
inline bool verify_labels(const LabeledPair& pair) {
  const MatchLabels expected = label_from_warp(pair.a, pair.b, pair.warp);
  std::vector<std::size_t> bad;
  const std::size_t n = std::max(expected.anchors.size(), pair.labels.anchors.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (i >= expected.anchors.size() || i >= pair.labels.anchors.size() ||
        !(expected.anchors[i] == pair.labels.anchors[i])) {
      bad.push_back(i);
    }
  }
  if (!bad.empty()) {
    std::string msg = "labels disagree with warp at anchor(s):";
    for (std::size_t k = 0; k < bad.size() && k < 16; ++k) msg += " " + std::to_string(bad[k]);
    throw LabelError(msg, bad);
  }
  return true;
}

namespace detail {

inline double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

struct SampledWarp {
  PlanarWarp warp;
  double rotation = 0.0;
  double scale = 1.0;
};

inline SampledWarp sample_warp(const SceneSpec& s, Rng& rng) {
  const double phi = rng.uniform(-1.0, 1.0) * s.rotation_deg * std::numbers::pi / 180.0;
  const double sc = rng.uniform(s.scale_min, s.scale_max);
  const double tx = rng.uniform(-1.0, 1.0) * s.translation_px;
  const double ty = rng.uniform(-1.0, 1.0) * s.translation_px;
  const double p1 = rng.uniform(-1.0, 1.0) * s.perspective;
  const double p2 = rng.uniform(-1.0, 1.0) * s.perspective;
  const double cx = 0.5 * s.width, cy = 0.5 * s.height;
  // Centered similarity + perspective: H = T(c) · M · T(−c).
  const double m00 = sc * std::cos(phi), m01 = -sc * std::sin(phi), m02 = tx;
  const double m10 = sc * std::sin(phi), m11 = sc * std::cos(phi), m12 = ty;
  const double m20 = p1, m21 = p2, m22 = 1.0;
  auto row = [&](double a, double b, double c) { return std::array<double, 3>{a, b, c}; };
  const std::array<std::array<double, 3>, 3> m{row(m00, m01, m02), row(m10, m11, m12), row(m20, m21, m22)};
  const std::array<std::array<double, 3>, 3> tpos{row(1, 0, cx), row(0, 1, cy), row(0, 0, 1)};
  const std::array<std::array<double, 3>, 3> tneg{row(1, 0, -cx), row(0, 1, -cy), row(0, 0, 1)};
  auto mul = [](const auto& a, const auto& b) {
    std::array<std::array<double, 3>, 3> r{};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k) r[i][j] += a[i][k] * b[k][j];
    return r;
  };
  const auto h = mul(mul(tpos, m), tneg);
  std::array<double, 9> flat{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) flat[3 * i + j] = h[i][j];
  return {PlanarWarp(flat), phi, sc};
}

inline std::vector<double> random_unit_vector(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  double n = 0.0;
  while (n < 1e-6) {
    for (double& x : v) x = rng.normal();
    n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
  }
  for (double& x : v) x /= n;
  return v;
}

inline std::vector<std::uint8_t> random_bits(Rng& rng, std::size_t dim) {
  std::vector<std::uint8_t> packed(DescriptorVector::packed_size(dim), 0);
  for (std::size_t j = 0; j < dim; ++j)
    if (rng.bernoulli(0.5)) packed[j / 8] |= static_cast<std::uint8_t>(1u << (j % 8));
  return packed;
}

// Ideal descriptor: unit vector (real) or packed bits (binary).
struct Ideal {
  std::vector<double> real;
  std::vector<std::uint8_t> bits;
};

inline Ideal random_ideal(const SceneSpec& s, Rng& rng) {
  Ideal d;
  if (s.kind == DescriptorKind::Real) {
    d.real = random_unit_vector(rng, s.dim);
  } else {
    d.bits = random_bits(rng, s.dim);
  }
  return d;
}

inline DescriptorVector corrupt(const SceneSpec& s, const Ideal& ideal, Rng& rng) {
  if (s.kind == DescriptorKind::Real) {
    std::vector<double> v = ideal.real;
    for (double& x : v) x += s.sigma * rng.normal();
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    if (n < 1e-9) v = ideal.real, n = 1.0;
    for (double& x : v) x = to_f32(x / n);
    return DescriptorVector::real(std::move(v));
  }
  std::vector<std::uint8_t> bits = ideal.bits;
  for (std::size_t j = 0; j < s.dim; ++j)
    if (rng.bernoulli(s.rho)) bits[j / 8] ^= static_cast<std::uint8_t>(1u << (j % 8));
  return DescriptorVector::binary(s.dim, std::move(bits));
}

inline KeypointGeometry make_keypoint(double px, double py, double norm, double score, double angle,
                                      double scale) {
  KeypointGeometry g;
  g.x = std::clamp(to_f32(px) / norm, 0.0, 1.0);
  g.y = std::clamp(to_f32(py) / norm, 0.0, 1.0);
  g.score = to_f32(std::clamp(score, 0.0, 1.0));
  g.orientation = std::clamp(to_f32(wrap_angle(angle)), -std::numbers::pi, std::numbers::pi);
  g.scale = to_f32(std::max(0.0, scale));
  return g;
}

}  // namespace detail

/// Deterministic in spec (including spec.seed).
inline LabeledPair generate_pair(const SceneSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const double w = spec.width, h = spec.height;
  const double norm = std::max(w, h);
  const std::size_t n = spec.num_keypoints;
  auto inside = [&](double x, double y) { return x >= 0.0 && x < w && y >= 0.0 && y < h; };

  for (int attempt = 0; attempt < kMaxWarpAttempts; ++attempt) {
    const auto sw = detail::sample_warp(spec, rng);
    LabeledPair pair;
    pair.warp = sw.warp;
    for (FeatureSet* fs : {&pair.a, &pair.b}) {
      fs->width = spec.width;
      fs->height = spec.height;
      fs->kind_hint = spec.kind;
      fs->dim_hint = spec.dim;
    }
    pair.a.image_id = "A";
    pair.b.image_id = "B";

    // Palette of ideal descriptors; keypoint i uses entry i mod size.
    const auto palette_size = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(static_cast<double>(n) * (1.0 - spec.repetition))));
    std::vector<detail::Ideal> palette;
    for (std::size_t k = 0; k < palette_size; ++k) palette.push_back(detail::random_ideal(spec, rng));

    std::vector<std::pair<double, double>> placed_a, placed_b;
    auto clear_of = [](const std::vector<std::pair<double, double>>& pts, double x, double y) {
      for (const auto& [px, py] : pts)
        if (std::hypot(px - x, py - y) < kMinSeparationPx) return false;
      return true;
    };
    bool ok = true;
    for (std::size_t i = 0; i < n && ok; ++i) {
      const bool shared = !rng.bernoulli(spec.dropout);
      double ax = 0, ay = 0, bx = 0, by = 0;
      bool placed = false;
      for (int tries = 0; tries < 200 && !placed; ++tries) {
        ax = rng.uniform(0.0, w);
        ay = rng.uniform(0.0, h);
        if (!clear_of(placed_a, ax, ay)) continue;
        if (!shared) {
          bx = rng.uniform(0.0, w);
          by = rng.uniform(0.0, h);
          placed = clear_of(placed_b, bx, by);
          continue;
        }
        const auto p = sw.warp.apply(ax, ay);
        if (!p) continue;
        const double r = kDetectorJitterPx * std::sqrt(rng.uniform());
        const double t = rng.uniform(0.0, 2.0 * std::numbers::pi);
        bx = p->first + r * std::cos(t);
        by = p->second + r * std::sin(t);
        placed = inside(bx, by) && clear_of(placed_b, bx, by);
      }
      if (!placed) {
        ok = false;
        break;
      }
      placed_a.emplace_back(ax, ay);
      placed_b.emplace_back(bx, by);
      const double score = rng.uniform(0.2, 1.0);
      const double angle = rng.uniform(-std::numbers::pi, std::numbers::pi);
      const double scale = rng.uniform(1.0, 4.0);
      pair.a.keypoints.push_back(detail::make_keypoint(ax, ay, norm, score, angle, scale));
      if (shared) {
        pair.b.keypoints.push_back(detail::make_keypoint(
            bx, by, norm, score + 0.05 * rng.normal(), angle + sw.rotation + 0.05 * rng.normal(),
            scale * sw.scale * (1.0 + 0.02 * rng.normal())));
      } else {
        pair.b.keypoints.push_back(detail::make_keypoint(bx, by, norm, rng.uniform(0.2, 1.0),
                                                         rng.uniform(-std::numbers::pi, std::numbers::pi),
                                                         rng.uniform(1.0, 4.0)));
      }
      const detail::Ideal& ideal = palette[i % palette_size];
      pair.a.descriptors.push_back(detail::corrupt(spec, ideal, rng));
      if (shared) {
        pair.b.descriptors.push_back(detail::corrupt(spec, ideal, rng));
      } else {
        pair.b.descriptors.push_back(detail::corrupt(spec, detail::random_ideal(spec, rng), rng));
      }
    }
    if (!ok) continue;
    pair.labels = label_from_warp(pair.a, pair.b, pair.warp);
    return pair;
  }
  throw GenerationError("generate_pair: no usable warp after " + std::to_string(kMaxWarpAttempts) +
                        " attempts");
}

/// Spec copy with a derived seed, for drawing independent pairs from one stream.
inline SceneSpec with_seed(SceneSpec s, std::uint64_t seed) {
  s.seed = seed;
  return s;
}

}  // namespace descboost
