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

// Average-precision training objective.
//
// Distances between an anchor and its candidates are soft-binned onto a
// uniform grid with a triangular kernel; precision and recall are then read
// off the cumulative histograms:
//
//   AP = (1/|M+|) Σ_k h+_k · H+_k / max(H_k, ε)
//
// The pair loss averages 1 − AP over anchors of both images and adds the
// hinge max(0, AP_raw/AP_boosted − 1) weighted by λ.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "descboost/diffkernel.hpp"
#include "descboost/errors.hpp"
#include "descboost/tensor.hpp"
#include "descboost/types.hpp"

namespace descboost {

inline constexpr double kHistogramEps = 1e-12;
inline constexpr double kApRatioFloor = 1e-6;
inline constexpr double kUnitNormTolerance = 1e-6;

enum class Label : std::uint8_t { Negative = 0, Positive = 1 };

/// b uniformly spaced bin centers spanning [lo, hi] (both ends are centers).
struct QuantizationGrid {
  std::size_t bins = 10;
  double lo = 0.0;
  double hi = 4.0;

  QuantizationGrid() = default;
  QuantizationGrid(std::size_t b, double l, double h) : bins(b), lo(l), hi(h) {
    if (bins < 2) throw ConfigurationError("quantization grid needs at least 2 bins");
    if (!(hi > lo)) throw ConfigurationError("quantization grid range is empty");
  }

  /// [0, 4] for unit-norm real descriptors, [0, D] for D-bit binary ones.
  static QuantizationGrid for_metric(DescriptorKind kind, std::size_t dim, std::size_t bins = 10) {
    if (kind == DescriptorKind::Real) return {bins, 0.0, 4.0};
    return {bins, 0.0, static_cast<double>(dim)};
  }

  double delta() const noexcept { return (hi - lo) / static_cast<double>(bins - 1); }
  double center(std::size_t k) const noexcept { return lo + static_cast<double>(k) * delta(); }

  /// Distance from z to the nearest kernel kink (a bin center).
  double kink_distance(double z) const noexcept {
    const double t = (z - lo) / delta();
    const double nearest = std::clamp(std::round(t), 0.0, static_cast<double>(bins - 1));
    return std::abs(z - center(static_cast<std::size_t>(nearest)));
  }
};

// ---------------------------------------------------------------------------
// Distance heads.

/// Squared Euclidean distance 2 − 2⟨d, d'⟩ between unit vectors, clamped to [0, 4].
inline std::vector<double> distances_real(std::span<const double> d, const Tensor2& others) {
  if (others.cols() != d.size()) {
    throw DimensionError("distances_real: anchor has " + std::to_string(d.size()) +
                         " dims, candidates have " + std::to_string(others.cols()));
  }
  auto check_unit = [](std::span<const double> v, const char* what) {
    if (std::abs(kernel::l2_norm(v) - 1.0) > kUnitNormTolerance) {
      throw ContractError(std::string("distances_real: ") + what + " is not unit-norm");
    }
  };
  check_unit(d, "anchor");
  std::vector<double> z(others.rows());
  for (std::size_t j = 0; j < others.rows(); ++j) {
    auto row = others.row_span(j);
    check_unit(row, "candidate");
    double dot = 0.0;
    for (std::size_t k = 0; k < d.size(); ++k) dot += d[k] * row[k];
    z[j] = std::clamp(2.0 - 2.0 * dot, 0.0, 4.0);
  }
  return z;
}

/// (D − ⟨d, d'⟩)/2 for ±1 vectors: the Hamming distance.
inline std::vector<double> distances_binary(std::span<const double> d, const Tensor2& others) {
  if (others.cols() != d.size()) {
    throw DimensionError("distances_binary: anchor has " + std::to_string(d.size()) +
                         " dims, candidates have " + std::to_string(others.cols()));
  }
  auto check_signs = [](std::span<const double> v) {
    for (double x : v)
      if (x != 1.0 && x != -1.0) throw ContractError("distances_binary: entries must be ±1");
  };
  check_signs(d);
  const auto dim = static_cast<double>(d.size());
  std::vector<double> z(others.rows());
  for (std::size_t j = 0; j < others.rows(); ++j) {
    auto row = others.row_span(j);
    check_signs(row);
    double dot = 0.0;
    for (std::size_t k = 0; k < d.size(); ++k) dot += d[k] * row[k];
    z[j] = 0.5 * (dim - dot);
  }
  return z;
}

/// All-pairs distances between the rows of a and b under the given metric.
inline Tensor2 distance_matrix(const Tensor2& a, const Tensor2& b, DescriptorKind metric) {
  Tensor2 z(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto row = metric == DescriptorKind::Real ? distances_real(a.row_span(i), b)
                                                     : distances_binary(a.row_span(i), b);
    std::copy(row.begin(), row.end(), z.row_span(i).begin());
  }
  return z;
}

// ---------------------------------------------------------------------------
// Average precision.

struct ApResult {
  double ap = 0.0;
  std::vector<double> grad;  // dAP/dZ, empty unless requested
};

inline std::size_t count_positives(std::span<const Label> labels) {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), Label::Positive));
}

/// Quantized soft-histogram AP of one anchor. Entries are the labeled
/// candidates only (ignored ones removed by the caller).
inline ApResult fastap_with_gradient(std::span<const double> z, std::span<const Label> labels,
                                     const QuantizationGrid& grid, bool want_grad = true) {
  if (z.size() != labels.size()) {
    throw DimensionError("fastap: " + std::to_string(z.size()) + " distances, " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t npos = count_positives(labels);
  if (npos == 0) throw UndefinedApError("fastap: anchor has no positives");

  const std::size_t b = grid.bins;
  const double delta = grid.delta();
  std::vector<double> hpos(b, 0.0), hall(b, 0.0);
  for (std::size_t j = 0; j < z.size(); ++j) {
    // Only the two centers bracketing z can receive mass.
    const double t = (z[j] - grid.lo) / delta;
    const auto k0 = static_cast<std::ptrdiff_t>(std::floor(t));
    for (std::ptrdiff_t k = k0; k <= k0 + 1; ++k) {
      if (k < 0 || k >= static_cast<std::ptrdiff_t>(b)) continue;
      const double w = std::max(0.0, 1.0 - std::abs(z[j] - grid.center(static_cast<std::size_t>(k))) / delta);
      hall[static_cast<std::size_t>(k)] += w;
      if (labels[j] == Label::Positive) hpos[static_cast<std::size_t>(k)] += w;
    }
  }

  std::vector<double> cpos(b), call(b);
  double rp = 0.0, ra = 0.0;
  for (std::size_t k = 0; k < b; ++k) {
    rp += hpos[k];
    ra += hall[k];
    cpos[k] = rp;
    call[k] = ra;
  }
  const double inv_p = 1.0 / static_cast<double>(npos);
  double ap = 0.0;
  for (std::size_t k = 0; k < b; ++k) ap += hpos[k] * cpos[k] / std::max(call[k], kHistogramEps);
  ap *= inv_p;

  ApResult r;
  r.ap = ap;
  if (!want_grad) return r;

  // Reverse-accumulated sensitivities of AP to each histogram bin.
  std::vector<double> d_hpos(b), d_hall(b);
  double tail_pos = 0.0, tail_all = 0.0;
  for (std::size_t k = b; k-- > 0;) {
    const double denom = std::max(call[k], kHistogramEps);
    tail_pos += hpos[k] / denom;
    if (call[k] >= kHistogramEps) tail_all += hpos[k] * cpos[k] / (call[k] * call[k]);
    d_hpos[k] = inv_p * (cpos[k] / denom + tail_pos);
    d_hall[k] = -inv_p * tail_all;
  }
  r.grad.assign(z.size(), 0.0);
  for (std::size_t j = 0; j < z.size(); ++j) {
    const double t = (z[j] - grid.lo) / delta;
    const auto k0 = static_cast<std::ptrdiff_t>(std::floor(t));
    double g = 0.0;
    // z lies in [c_k0, c_k0+1): the lower weight falls and the upper one
    // rises. On a center this is the derivative for increasing z.
    for (std::ptrdiff_t k = k0; k <= k0 + 1; ++k) {
      if (k < 0 || k >= static_cast<std::ptrdiff_t>(b)) continue;
      const double dw = k == k0 ? -1.0 / delta : 1.0 / delta;
      const auto ku = static_cast<std::size_t>(k);
      g += dw * (d_hall[ku] + (labels[j] == Label::Positive ? d_hpos[ku] : 0.0));
    }
    r.grad[j] = g;
  }
  return r;
}

inline double fastap(std::span<const double> z, std::span<const Label> labels,
                     const QuantizationGrid& grid) {
  return fastap_with_gradient(z, labels, grid, false).ap;
}

/// Exact AP over an integer-distance ranking. Tied candidates form one group
/// and every positive in a group gets the precision at the group's end.
inline double exact_ap_binary(std::span<const int> z, std::span<const Label> labels) {
  if (z.size() != labels.size()) throw DimensionError("exact_ap_binary: size mismatch");
  const std::size_t npos = count_positives(labels);
  if (npos == 0) throw UndefinedApError("exact_ap_binary: anchor has no positives");
  std::vector<std::size_t> order(z.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return z[a] < z[b]; });
  double ap = 0.0;
  std::size_t seen = 0, seen_pos = 0;
  for (std::size_t g = 0; g < order.size();) {
    std::size_t e = g, group_pos = 0;
    while (e < order.size() && z[order[e]] == z[order[g]]) {
      if (labels[order[e]] == Label::Positive) ++group_pos;
      ++e;
    }
    seen += e - g;
    seen_pos += group_pos;
    ap += static_cast<double>(group_pos) * static_cast<double>(seen_pos) / static_cast<double>(seen);
    g = e;
  }
  return ap / static_cast<double>(npos);
}

// ---------------------------------------------------------------------------
// Pair loss.

struct LossConfig {
  double lambda = 10.0;
  std::size_t bins = 10;
};

struct LossBreakdown {
  double total = 0.0;
  double ap_loss = 0.0;
  double boost_loss = 0.0;
  double mean_ap_boosted = 0.0;
  double mean_ap_raw = 0.0;
  std::size_t anchors = 0;
  double kink_margin = std::numeric_limits<double>::infinity();
};

namespace detail {

// Gathers the labeled entries of one anchor from a distance row (or column).
struct AnchorView {
  std::vector<std::size_t> index;
  std::vector<double> z;
  std::vector<Label> labels;
};

template <class Get>
AnchorView gather(const AnchorLabels& al, Get&& get) {
  AnchorView v;
  for (auto j : al.positives) {
    v.index.push_back(j);
    v.z.push_back(get(j));
    v.labels.push_back(Label::Positive);
  }
  for (auto j : al.negatives) {
    v.index.push_back(j);
    v.z.push_back(get(j));
    v.labels.push_back(Label::Negative);
  }
  return v;
}

}  // namespace detail

/// Per-anchor raw-descriptor AP for both directions (NaN where an anchor has
/// no positives). Constant with respect to the booster.
struct RawApTable {
  std::vector<double> forward;   // anchors in A, candidates in B
  std::vector<double> backward;  // anchors in B, candidates in A
};

inline RawApTable raw_ap_table(const Tensor2& z_raw, const MatchLabels& labels,
                               const QuantizationGrid& grid) {
  const std::size_t na = z_raw.rows(), nb = z_raw.cols();
  if (labels.anchors.size() != na) throw DimensionError("raw_ap_table: label count mismatch");
  const MatchLabels back = labels.transposed(nb);
  RawApTable t;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  t.forward.assign(na, nan);
  t.backward.assign(nb, nan);
  for (std::size_t i = 0; i < na; ++i) {
    if (labels.anchors[i].positives.empty()) continue;
    auto v = detail::gather(labels.anchors[i], [&](std::size_t j) { return z_raw(i, j); });
    t.forward[i] = fastap(v.z, v.labels, grid);
  }
  for (std::size_t j = 0; j < nb; ++j) {
    if (back.anchors[j].positives.empty()) continue;
    auto v = detail::gather(back.anchors[j], [&](std::size_t i) { return z_raw(i, j); });
    t.backward[j] = fastap(v.z, v.labels, grid);
  }
  return t;
}

/// Loss from the boosted distance matrix z (rows: A, cols: B). When dz is
/// given it receives dLoss/dz. Anchors of both images enter one mean.
inline LossBreakdown ap_objective(const Tensor2& z, const RawApTable& raw, const MatchLabels& labels,
                                  const QuantizationGrid& grid, double lambda,
                                  Tensor2* dz = nullptr) {
  const std::size_t na = z.rows(), nb = z.cols();
  if (labels.anchors.size() != na || raw.forward.size() != na || raw.backward.size() != nb) {
    throw DimensionError("ap_objective: labels/raw AP do not match a " + z.shape_string() +
                         " distance matrix");
  }
  const MatchLabels back = labels.transposed(nb);

  struct Term {
    bool row;  // A anchor (row of z) or B anchor (column of z)
    std::size_t anchor;
    detail::AnchorView view;
    ApResult ap;
    double raw;
  };
  std::vector<Term> terms;
  LossBreakdown out;
  for (std::size_t i = 0; i < na; ++i) {
    if (labels.anchors[i].positives.empty()) continue;
    auto v = detail::gather(labels.anchors[i], [&](std::size_t j) { return z(i, j); });
    auto ap = fastap_with_gradient(v.z, v.labels, grid, dz != nullptr);
    terms.push_back({true, i, std::move(v), std::move(ap), raw.forward[i]});
  }
  for (std::size_t j = 0; j < nb; ++j) {
    if (back.anchors[j].positives.empty()) continue;
    auto v = detail::gather(back.anchors[j], [&](std::size_t i) { return z(i, j); });
    auto ap = fastap_with_gradient(v.z, v.labels, grid, dz != nullptr);
    terms.push_back({false, j, std::move(v), std::move(ap), raw.backward[j]});
  }
  if (terms.empty()) throw EmptyBatchError("pair loss: no anchor has a positive");

  const double inv_n = 1.0 / static_cast<double>(terms.size());
  if (dz) *dz = Tensor2(na, nb);
  for (const auto& t : terms) {
    const double ap = t.ap.ap;
    const double denom = std::max(ap, kApRatioFloor);
    const double ratio = t.raw / denom;
    const bool hinge_active = ratio - 1.0 > 0.0;
    out.ap_loss += (1.0 - ap) * inv_n;
    if (hinge_active) out.boost_loss += (ratio - 1.0) * inv_n;
    out.mean_ap_boosted += ap * inv_n;
    out.mean_ap_raw += t.raw * inv_n;
    if (ratio != 1.0) out.kink_margin = std::min(out.kink_margin, std::abs(ratio - 1.0));
    for (double zv : t.view.z) out.kink_margin = std::min(out.kink_margin, grid.kink_distance(zv));

    if (dz) {
      double dl_dap = -inv_n;
      if (hinge_active && ap >= kApRatioFloor) dl_dap += lambda * inv_n * (-t.raw / (ap * ap));
      for (std::size_t e = 0; e < t.view.index.size(); ++e) {
        const double g = dl_dap * t.ap.grad[e];
        if (t.row) {
          (*dz)(t.anchor, t.view.index[e]) += g;
        } else {
          (*dz)(t.view.index[e], t.anchor) += g;
        }
      }
    }
  }
  out.anchors = terms.size();
  out.total = out.ap_loss + lambda * out.boost_loss;
  return out;
}

/// Loss on already-boosted feature sets. Raw AP uses the raw descriptors'
/// own metric and grid.
inline LossBreakdown pair_loss(const FeatureSet& a_boosted, const FeatureSet& b_boosted,
                               const FeatureSet& a_raw, const FeatureSet& b_raw,
                               const MatchLabels& labels, const LossConfig& cfg = {}) {
  if (a_boosted.size() != a_raw.size() || b_boosted.size() != b_raw.size()) {
    throw ContractError("pair_loss: raw and boosted sets are not index-aligned");
  }
  labels.validate(b_raw.size());
  const auto grid = QuantizationGrid::for_metric(a_boosted.kind(), a_boosted.dim(), cfg.bins);
  const auto raw_grid = QuantizationGrid::for_metric(a_raw.kind(), a_raw.dim(), cfg.bins);
  const Tensor2 z = distance_matrix(a_boosted.descriptor_matrix(), b_boosted.descriptor_matrix(),
                                    a_boosted.kind());
  const Tensor2 z_raw =
      distance_matrix(a_raw.descriptor_matrix(), b_raw.descriptor_matrix(), a_raw.kind());
  return ap_objective(z, raw_ap_table(z_raw, labels, raw_grid), labels, grid, cfg.lambda);
}

namespace ad {

/// Differentiable distance matrix between head outputs (rows of a and b).
inline Var pairwise_distance(Tape& t, Var a, Var b, DescriptorKind metric) {
  Var dots = matmul_bt(t, a, b);
  if (metric == DescriptorKind::Real) return clamp(t, scale_shift(t, dots, -2.0, 2.0), 0.0, 4.0);
  const double dim = static_cast<double>(t.value(a).cols());
  return scale_shift(t, dots, -0.5, 0.5 * dim);
}

/// Scalar loss node over a distance-matrix node; the raw AP table is constant.
inline Var ap_objective(Tape& t, Var z, const RawApTable& raw, const MatchLabels& labels,
                        const QuantizationGrid& grid, double lambda, LossBreakdown* report = nullptr) {
  Tensor2 dz;
  const LossBreakdown lb = descboost::ap_objective(t.value(z), raw, labels, grid, lambda, &dz);
  t.note_kink_margin(lb.kink_margin);
  if (report) *report = lb;
  return t.push(Tensor2(1, 1, lb.total), [z, dz = std::move(dz)](Tape& tp, const Tensor2& g) {
    Tensor2 gz = dz;
    for (double& v : gz.values()) v *= g(0, 0);
    tp.accumulate(z, gz);
  });
}

}  // namespace ad

}  // namespace descboost
