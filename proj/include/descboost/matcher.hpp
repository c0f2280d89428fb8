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
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "descboost/errors.hpp"
#include "descboost/types.hpp"

namespace descboost {

enum class Metric : std::uint8_t { Euclidean, Hamming };

inline Metric parse_metric(const std::string& s) {
  if (s == "euclidean" || s == "l2") return Metric::Euclidean;
  if (s == "hamming") return Metric::Hamming;
  throw ConfigurationError("unknown metric '" + s + "' (expected euclidean|hamming)");
}

inline Metric default_metric(DescriptorKind k) {
  return k == DescriptorKind::Real ? Metric::Euclidean : Metric::Hamming;
}

struct Match {
  std::uint32_t i = 0;  // query index
  std::uint32_t j = 0;  // train index
  double distance = 0.0;
  std::optional<double> ratio;  // nearest / second-nearest distance

  bool operator==(const Match&) const = default;
};

struct MatchSet {
  std::vector<Match> matches;

  std::size_t size() const noexcept { return matches.size(); }
  bool empty() const noexcept { return matches.empty(); }
  bool operator==(const MatchSet&) const = default;
};

inline double descriptor_distance(const DescriptorVector& a, const DescriptorVector& b, Metric m) {
  if (m == Metric::Hamming) return static_cast<double>(hamming_distance(a, b));
  double s = 0.0;
  auto va = a.real_values();
  auto vb = b.real_values();
  for (std::size_t k = 0; k < va.size(); ++k) s += (va[k] - vb[k]) * (va[k] - vb[k]);
  return std::sqrt(s);
}

inline void require_metric(const FeatureSet& fs, Metric m) {
  if (fs.empty()) return;
  const bool ok = (m == Metric::Hamming) == (fs.kind() == DescriptorKind::Binary);
  if (!ok) {
    throw ConfigurationError(std::string("metric ") + (m == Metric::Hamming ? "hamming" : "euclidean") +
                             " does not fit " + to_string(fs.kind()) + " descriptors");
  }
}

/// For every descriptor of a, its nearest neighbor in b (ties go to the
/// smallest index) plus the nearest/second-nearest ratio when |b| >= 2.
inline MatchSet nn_match(const FeatureSet& a, const FeatureSet& b, Metric metric) {
  require_metric(a, metric);
  require_metric(b, metric);
  if (!a.empty() && !b.empty() && a.dim() != b.dim()) {
    throw ConfigurationError("nn_match: descriptor dimensions differ");
  }
  MatchSet ms;
  if (b.empty()) return ms;
  ms.matches.reserve(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    double second = std::numeric_limits<double>::infinity();
    std::size_t best_j = 0;
    for (std::size_t j = 0; j < b.size(); ++j) {
      const double d = descriptor_distance(a.descriptors[i], b.descriptors[j], metric);
      if (d < best) {
        second = best;
        best = d;
        best_j = j;
      } else if (d < second) {
        second = d;
      }
    }
    Match m{static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(best_j), best, std::nullopt};
    if (b.size() >= 2) m.ratio = second > 0.0 ? best / second : 1.0;
    ms.matches.push_back(m);
  }
  return ms;
}

/// Keeps (i, j) from fwd (A→B) iff bwd (B→A) maps j back to i.
inline MatchSet mutual_check(const MatchSet& fwd, const MatchSet& bwd) {
  std::unordered_map<std::uint32_t, std::uint32_t> back;
  for (const auto& m : bwd.matches) back[m.i] = m.j;
  MatchSet out;
  for (const auto& m : fwd.matches) {
    auto it = back.find(m.j);
    if (it != back.end() && it->second == m.i) out.matches.push_back(m);
  }
  return out;
}

inline MatchSet mutual_nn_match(const FeatureSet& a, const FeatureSet& b, Metric metric) {
  return mutual_check(nn_match(a, b, metric), nn_match(b, a, metric));
}

struct MatchFilter {
  enum class Mode { Ratio, Distance } mode = Mode::Ratio;
  double threshold = 1.0;

  /// "ratio:0.8" or "dist:45"
  static MatchFilter parse(const std::string& s) {
    const auto colon = s.find(':');
    if (colon == std::string::npos) throw ConfigurationError("filter must be ratio:τ or dist:τ");
    const std::string kind = s.substr(0, colon);
    double tau = 0.0;
    try {
      std::size_t pos = 0;
      tau = std::stod(s.substr(colon + 1), &pos);
      if (pos != s.size() - colon - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ConfigurationError("filter threshold is not a number: " + s);
    }
    if (kind == "ratio") return {Mode::Ratio, tau};
    if (kind == "dist" || kind == "distance") return {Mode::Distance, tau};
    throw ConfigurationError("unknown filter '" + kind + "' (expected ratio|dist)");
  }
};

/// Lowe's recommended ratio for SIFT-family descriptors.
inline constexpr double kLoweRatio = 0.8;

inline MatchSet filter_matches(const MatchSet& ms, const MatchFilter& f) {
  MatchSet out;
  for (const auto& m : ms.matches) {
    if (f.mode == MatchFilter::Mode::Ratio) {
      if (!m.ratio) throw ContractError("ratio filter on matches without ratios");
      if (*m.ratio <= f.threshold) out.matches.push_back(m);
    } else if (m.distance <= f.threshold) {
      out.matches.push_back(m);
    }
  }
  return out;
}

inline constexpr std::size_t kMmaThresholds = 10;
using MmaCurve = std::array<double, kMmaThresholds>;

/// Fraction of matches with reprojection error ≤ t pixels, t = 1..10.
inline MmaCurve mma(const MatchSet& ms, const PlanarWarp& warp, const FeatureSet& a, const FeatureSet& b) {
  MmaCurve curve{};
  if (ms.empty()) return curve;
  std::array<std::size_t, kMmaThresholds> hits{};
  for (const auto& m : ms.matches) {
    const auto [ax, ay] = a.pixel(m.i);
    const auto [bx, by] = b.pixel(m.j);
    const auto p = warp.apply(ax, ay);
    if (!p) continue;
    const double err = std::hypot(p->first - bx, p->second - by);
    for (std::size_t t = 0; t < kMmaThresholds; ++t)
      if (err <= static_cast<double>(t + 1)) ++hits[t];
  }
  for (std::size_t t = 0; t < kMmaThresholds; ++t)
    curve[t] = static_cast<double>(hits[t]) / static_cast<double>(ms.size());
  return curve;
}

// ---------------------------------------------------------------------------
// Ratio / distance threshold calibration.

struct CalibrationOptions {
  std::size_t bins = 64;
  double reject_target = 0.9;   // fraction of incorrect matches to filter out
  std::size_t min_samples = 100;
};

struct Calibration {
  double threshold = 0.0;
  double retained_correct = 0.0;
  double rejected_incorrect = 0.0;
  bool separable = false;
  std::vector<double> edges;          // bins + 1 edges
  std::vector<double> pdf_correct;    // density per bin
  std::vector<double> pdf_incorrect;
};

/// Histogram PDFs of a lower-is-better statistic for correct and incorrect
/// matches, and the bin edge that keeps the most correct matches while
/// rejecting at least reject_target of the incorrect ones. Ties prefer the
/// smaller edge. The split is flagged non-separable when the kept correct
/// fraction is not at least twice the leaked incorrect fraction.
inline Calibration calibrate_threshold(std::span<const double> correct, std::span<const double> incorrect,
                                       const CalibrationOptions& opt = {}) {
  if (correct.size() < opt.min_samples || incorrect.size() < opt.min_samples) {
    throw CalibrationError("calibration needs at least " + std::to_string(opt.min_samples) +
                           " samples per class (got " + std::to_string(correct.size()) + " correct, " +
                           std::to_string(incorrect.size()) + " incorrect)");
  }
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double v : correct) lo = std::min(lo, v), hi = std::max(hi, v);
  for (double v : incorrect) lo = std::min(lo, v), hi = std::max(hi, v);
  if (!(hi > lo)) hi = lo + 1.0;

  Calibration c;
  const double width = (hi - lo) / static_cast<double>(opt.bins);
  c.edges.resize(opt.bins + 1);
  for (std::size_t k = 0; k <= opt.bins; ++k) c.edges[k] = lo + width * static_cast<double>(k);
  c.edges.back() = hi;

  auto pdf = [&](std::span<const double> s) {
    std::vector<double> h(opt.bins, 0.0);
    for (double v : s) {
      auto k = static_cast<std::size_t>((v - lo) / width);
      h[std::min(k, opt.bins - 1)] += 1.0;
    }
    for (double& x : h) x /= static_cast<double>(s.size()) * width;
    return h;
  };
  c.pdf_correct = pdf(correct);
  c.pdf_incorrect = pdf(incorrect);

  auto frac_at_most = [](std::span<const double> s, double tau) {
    return static_cast<double>(std::count_if(s.begin(), s.end(), [&](double v) { return v <= tau; })) /
           static_cast<double>(s.size());
  };
  bool found = false;
  for (double tau : c.edges) {
    const double rejected = 1.0 - frac_at_most(incorrect, tau);
    if (rejected < opt.reject_target) continue;
    const double kept = frac_at_most(correct, tau);
    if (!found || kept > c.retained_correct) {
      c.threshold = tau;
      c.retained_correct = kept;
      c.rejected_incorrect = rejected;
      found = true;
    }
  }
  if (found) {
    const double leaked = 1.0 - c.rejected_incorrect;
    c.separable = c.retained_correct > 0.0 && c.retained_correct >= 2.0 * leaked;
  }
  return c;
}

}  // namespace descboost
