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

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "descboost/errors.hpp"
#include "descboost/tensor.hpp"

namespace descboost {

enum class DescriptorKind : std::uint8_t { Real = 0, Binary = 1 };

inline const char* to_string(DescriptorKind k) { return k == DescriptorKind::Real ? "real" : "binary"; }

inline DescriptorKind parse_descriptor_kind(const std::string& s) {
  if (s == "real") return DescriptorKind::Real;
  if (s == "binary") return DescriptorKind::Binary;
  throw ConfigurationError("unknown descriptor kind '" + s + "' (expected real|binary)");
}

/// Geometry of one keypoint. x and y are normalized by the largest image
/// dimension; orientation is in radians; scale is 0 when the extractor has none.
struct KeypointGeometry {
  double x = 0.0;
  double y = 0.0;
  double score = 0.0;
  double orientation = 0.0;
  double scale = 0.0;

  bool valid() const noexcept {
    return x >= 0.0 && x <= 1.0 && y >= 0.0 && y <= 1.0 && score >= 0.0 && score <= 1.0 &&
           orientation >= -std::numbers::pi && orientation <= std::numbers::pi && scale >= 0.0;
  }

  std::array<double, 5> as_array() const noexcept { return {x, y, score, orientation, scale}; }

  bool operator==(const KeypointGeometry&) const = default;
};

/// Wraps an angle into [-π, π].
inline double wrap_angle(double a) {
  const double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a + std::numbers::pi, two_pi);
  if (a < 0.0) a += two_pi;
  return std::clamp(a - std::numbers::pi, -std::numbers::pi, std::numbers::pi);
}

/// A real-valued D-vector or a D-bit binary string. Bits are packed with
/// bit j in byte j/8 at position j%8; the arithmetic view maps 1→+1, 0→−1.
class DescriptorVector {
 public:
  DescriptorVector() = default;

  static DescriptorVector real(std::vector<double> values) {
    DescriptorVector d;
    d.kind_ = DescriptorKind::Real;
    d.dim_ = values.size();
    d.real_ = std::move(values);
    return d;
  }

  static DescriptorVector binary(std::size_t dim, std::vector<std::uint8_t> packed) {
    if (packed.size() != packed_size(dim)) {
      throw DimensionError("binary descriptor of " + std::to_string(dim) + " bits needs " +
                           std::to_string(packed_size(dim)) + " bytes, got " +
                           std::to_string(packed.size()));
    }
    DescriptorVector d;
    d.kind_ = DescriptorKind::Binary;
    d.dim_ = dim;
    d.bits_ = std::move(packed);
    // Padding bits past dim are always zero so byte comparisons are exact.
    if (dim % 8 != 0) d.bits_.back() &= static_cast<std::uint8_t>((1u << (dim % 8)) - 1u);
    return d;
  }

  /// Bit j set iff values[j] >= 0 (sign(0) = +1).
  static DescriptorVector binary_from_signs(std::span<const double> values) {
    std::vector<std::uint8_t> packed(packed_size(values.size()), 0);
    for (std::size_t j = 0; j < values.size(); ++j) {
      if (values[j] >= 0.0) packed[j / 8] |= static_cast<std::uint8_t>(1u << (j % 8));
    }
    return binary(values.size(), std::move(packed));
  }

  static std::size_t packed_size(std::size_t dim) noexcept { return (dim + 7) / 8; }

  DescriptorKind kind() const noexcept { return kind_; }
  std::size_t dim() const noexcept { return dim_; }
  std::span<const double> real_values() const noexcept { return real_; }
  std::span<const std::uint8_t> packed_bits() const noexcept { return bits_; }

  bool bit(std::size_t j) const noexcept { return (bits_[j / 8] >> (j % 8)) & 1u; }

  /// Float view: real values, or ±1 per bit.
  double value(std::size_t j) const noexcept {
    if (kind_ == DescriptorKind::Real) return real_[j];
    return bit(j) ? 1.0 : -1.0;
  }

  std::vector<double> as_floats() const {
    std::vector<double> out(dim_);
    for (std::size_t j = 0; j < dim_; ++j) out[j] = value(j);
    return out;
  }

  bool operator==(const DescriptorVector&) const = default;

 private:
  DescriptorKind kind_ = DescriptorKind::Real;
  std::size_t dim_ = 0;
  std::vector<double> real_;
  std::vector<std::uint8_t> bits_;
};

inline std::size_t hamming_distance(const DescriptorVector& a, const DescriptorVector& b) {
  auto pa = a.packed_bits();
  auto pb = b.packed_bits();
  std::size_t d = 0;
  for (std::size_t i = 0; i < pa.size(); ++i) d += std::popcount(static_cast<unsigned>(pa[i] ^ pb[i]));
  return d;
}

/// All keypoints of one image.
struct FeatureSet {
  std::string image_id;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<KeypointGeometry> keypoints;
  std::vector<DescriptorVector> descriptors;

  std::size_t size() const noexcept { return keypoints.size(); }
  bool empty() const noexcept { return keypoints.empty(); }

  /// Largest image dimension; the coordinate normalizer.
  double normalizer() const noexcept { return static_cast<double>(std::max(width, height)); }

  DescriptorKind kind() const {
    if (descriptors.empty()) return kind_hint;
    return descriptors.front().kind();
  }
  std::size_t dim() const {
    if (descriptors.empty()) return dim_hint;
    return descriptors.front().dim();
  }

  // Kind and dimension of an empty set; ignored once descriptors exist.
  DescriptorKind kind_hint = DescriptorKind::Real;
  std::size_t dim_hint = 0;

  void validate() const {
    if (keypoints.size() != descriptors.size()) {
      throw ContractError("feature set has " + std::to_string(keypoints.size()) +
                          " keypoints but " + std::to_string(descriptors.size()) +
                          " descriptors");
    }
    for (const auto& d : descriptors) {
      if (d.kind() != descriptors.front().kind() || d.dim() != descriptors.front().dim()) {
        throw ContractError("feature set mixes descriptor kinds or dimensions");
      }
    }
  }

  /// N×D float view of the descriptors (binary mapped to ±1).
  Tensor2 descriptor_matrix() const {
    Tensor2 m(size(), dim());
    for (std::size_t i = 0; i < size(); ++i)
      for (std::size_t j = 0; j < dim(); ++j) m(i, j) = descriptors[i].value(j);
    return m;
  }

  /// N×5 geometry matrix (x, y, score, orientation, scale).
  Tensor2 geometry_matrix() const {
    Tensor2 m(size(), 5);
    for (std::size_t i = 0; i < size(); ++i) {
      const auto a = keypoints[i].as_array();
      for (std::size_t j = 0; j < 5; ++j) m(i, j) = a[j];
    }
    return m;
  }

  /// Pixel coordinates of keypoint i.
  std::pair<double, double> pixel(std::size_t i) const {
    return {keypoints[i].x * normalizer(), keypoints[i].y * normalizer()};
  }

  bool operator==(const FeatureSet& o) const {
    return width == o.width && height == o.height && keypoints == o.keypoints &&
           descriptors == o.descriptors && kind() == o.kind() && dim() == o.dim();
  }
};

/// Positive and negative candidate indices (into the other image) of one anchor.
struct AnchorLabels {
  std::vector<std::uint32_t> positives;
  std::vector<std::uint32_t> negatives;

  bool operator==(const AnchorLabels&) const = default;
};

struct MatchLabels {
  std::vector<AnchorLabels> anchors;

  bool operator==(const MatchLabels&) const = default;

  /// Checks disjointness and index range against the candidate set size.
  void validate(std::size_t candidates) const {
    for (std::size_t i = 0; i < anchors.size(); ++i) {
      auto pos = anchors[i].positives;
      auto neg = anchors[i].negatives;
      std::sort(pos.begin(), pos.end());
      std::sort(neg.begin(), neg.end());
      std::vector<std::uint32_t> both;
      std::set_intersection(pos.begin(), pos.end(), neg.begin(), neg.end(), std::back_inserter(both));
      if (!both.empty()) {
        throw ContractError("anchor " + std::to_string(i) + " has an index in both M+ and M-");
      }
      for (auto j : pos)
        if (j >= candidates) throw ContractError("positive index out of range");
      for (auto j : neg)
        if (j >= candidates) throw ContractError("negative index out of range");
    }
  }

  /// Labels seen from the other image's anchors.
  MatchLabels transposed(std::size_t candidates) const {
    MatchLabels t;
    t.anchors.resize(candidates);
    for (std::size_t i = 0; i < anchors.size(); ++i) {
      for (auto j : anchors[i].positives) t.anchors[j].positives.push_back(static_cast<std::uint32_t>(i));
      for (auto j : anchors[i].negatives) t.anchors[j].negatives.push_back(static_cast<std::uint32_t>(i));
    }
    return t;
  }
};

/// 3×3 homography mapping image-A pixels to image-B pixels.
class PlanarWarp {
 public:
  PlanarWarp() : h_{1, 0, 0, 0, 1, 0, 0, 0, 1} {}

  explicit PlanarWarp(const std::array<double, 9>& m) : h_(m) {
    if (!(std::abs(h_[8]) > 1e-15)) throw ContractError("homography has zero bottom-right entry");
    for (double& v : h_) v /= m[8];
    if (!(std::abs(determinant()) > 1e-12)) throw ContractError("homography is not invertible");
  }

  const std::array<double, 9>& matrix() const noexcept { return h_; }

  double determinant() const noexcept {
    const auto& m = h_;
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
  }

  std::optional<std::pair<double, double>> apply(double x, double y) const noexcept {
    const auto& m = h_;
    const double w = m[6] * x + m[7] * y + m[8];
    if (!(std::abs(w) > 1e-12)) return std::nullopt;
    return std::pair{(m[0] * x + m[1] * y + m[2]) / w, (m[3] * x + m[4] * y + m[5]) / w};
  }

  PlanarWarp inverse() const {
    const auto& m = h_;
    const double det = determinant();
    std::array<double, 9> inv{
        (m[4] * m[8] - m[5] * m[7]) / det, (m[2] * m[7] - m[1] * m[8]) / det,
        (m[1] * m[5] - m[2] * m[4]) / det, (m[5] * m[6] - m[3] * m[8]) / det,
        (m[0] * m[8] - m[2] * m[6]) / det, (m[2] * m[3] - m[0] * m[5]) / det,
        (m[3] * m[7] - m[4] * m[6]) / det, (m[1] * m[6] - m[0] * m[7]) / det,
        (m[0] * m[4] - m[1] * m[3]) / det};
    return PlanarWarp(inv);
  }

  bool operator==(const PlanarWarp&) const = default;

 private:
  std::array<double, 9> h_;
};

}  // namespace descboost
