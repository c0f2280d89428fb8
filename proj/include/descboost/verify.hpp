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

// Self-check suites runnable outside a test harness: finite-difference
// gradient checks and brute-force oracles. Each check yields one table row.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "descboost/booster.hpp"
#include "descboost/diffkernel.hpp"
#include "descboost/fastap.hpp"
#include "descboost/matcher.hpp"
#include "descboost/trainer.hpp"

namespace descboost::verify {

struct CheckRow {
  std::string suite;
  std::string name;
  std::size_t instances = 0;
  double measured = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

inline constexpr double kOpRelTolerance = 1e-6;
inline constexpr double kLossRelTolerance = 1e-4;
inline constexpr double kAbsFloorTolerance = 1e-9;
inline constexpr double kKinkMargin = 1e-3;
inline constexpr std::size_t kGradInstances = 100;

// Coordinates whose analytic gradient is below these magnitudes are checked
// against kAbsFloorTolerance instead: there the central difference is at its
// roundoff floor and a relative error says nothing.
inline constexpr double kOpScaledGradient = 1e-4;
inline constexpr double kLossScaledGradient = 1e-3;

inline CheckRow make_row(std::string suite, std::string name, std::size_t n, double measured, double tol) {
  return {std::move(suite), std::move(name), n, measured, tol, measured <= tol};
}

inline void print_table(std::ostream& os, const std::vector<CheckRow>& rows) {
  char line[256];
  std::snprintf(line, sizeof line, "%-10s %-34s %9s %12s %10s  %s\n", "suite", "check", "instances", "measured",
                "tolerance", "result");
  os << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-10s %-34s %9zu %12.3e %10.1e  %s\n", r.suite.c_str(), r.name.c_str(),
                  r.instances, r.measured, r.tolerance, r.pass ? "PASS" : "FAIL");
    os << line;
  }
}

inline bool all_pass(const std::vector<CheckRow>& rows) {
  return std::all_of(rows.begin(), rows.end(), [](const CheckRow& r) { return r.pass; });
}

// ---------------------------------------------------------------------------
// Gradient checks.

struct GradOutcome {
  double rel = 0.0;  // worst relative error on scaled coordinates
  double abs = 0.0;  // worst absolute error on floor coordinates
  std::size_t checked = 0;
};

/// Splits coordinates by gradient magnitude and checks both groups. `limit`
/// caps the scaled coordinates checked (sampled with rng); 0 checks all.
inline GradOutcome check_gradient(const std::function<double(std::span<const double>)>& f,
                                  const std::vector<double>& theta, const std::vector<double>& grad,
                                  double scaled_threshold, Rng& rng, std::size_t limit = 0) {
  std::vector<std::size_t> scaled, floor;
  for (std::size_t i = 0; i < grad.size(); ++i) (std::abs(grad[i]) >= scaled_threshold ? scaled : floor).push_back(i);
  auto sample = [&](std::vector<std::size_t>& v) {
    if (limit == 0 || v.size() <= limit) return;
    for (std::size_t k = 0; k < limit; ++k) std::swap(v[k], v[k + rng.below(v.size() - k)]);
    v.resize(limit);
  };
  sample(scaled);
  sample(floor);
  GradOutcome out;
  if (!scaled.empty()) out.rel = grad_check(f, theta, grad, kGradCheckStep, scaled).max_rel_error;
  for (std::size_t i : floor) {
    auto probe = theta;
    probe[i] += kGradCheckStep;
    const double fp = f(probe);
    probe[i] -= 2 * kGradCheckStep;
    const double fm = f(probe);
    out.abs = std::max(out.abs, std::abs((fp - fm) / (2 * kGradCheckStep) - grad[i]));
  }
  out.checked = scaled.size() + floor.size();
  return out;
}

struct OpSpec {
  std::string name;
  std::vector<std::pair<std::size_t, std::size_t>> shapes;
  std::function<ad::Var(ad::Tape&, std::span<const ad::Var>)> op;
  std::function<bool(const std::vector<Tensor2>&)> admissible = nullptr;
  bool surrogate = false;
};

inline bool clear_of(const Tensor2& x, double a, double b) {
  for (double v : x.values())
    if (std::abs(v - a) < kKinkMargin || std::abs(v - b) < kKinkMargin) return false;
  return true;
}

inline std::vector<OpSpec> differentiable_ops() {
  using ad::Tape;
  using ad::Var;
  using Args = std::span<const Var>;
  return {
      {"affine", {{4, 3}, {3, 5}, {1, 5}}, [](Tape& t, Args v) { return ad::affine(t, v[0], v[1], v[2]); }},
      {"relu", {{4, 5}}, [](Tape& t, Args v) { return ad::relu(t, v[0]); }},
      {"sigmoid", {{4, 5}}, [](Tape& t, Args v) { return ad::sigmoid(t, v[0]); }},
      {"tanh", {{4, 5}}, [](Tape& t, Args v) { return ad::tanh_act(t, v[0]); }},
      {"softmax_over_context", {{6, 4}}, [](Tape& t, Args v) { return ad::softmax_over_context(t, v[0]); }},
      {"l2_normalize_rows", {{5, 6}}, [](Tape& t, Args v) { return ad::l2_normalize_rows(t, v[0]); }},
      {"layer_norm", {{5, 6}, {1, 6}, {1, 6}}, [](Tape& t, Args v) { return ad::layer_norm(t, v[0], v[1], v[2]); }},
      {"add", {{3, 4}, {3, 4}}, [](Tape& t, Args v) { return ad::add(t, v[0], v[1]); }},
      {"hadamard", {{3, 4}, {3, 4}}, [](Tape& t, Args v) { return ad::hadamard(t, v[0], v[1]); }},
      {"mul_rows", {{5, 4}, {1, 4}}, [](Tape& t, Args v) { return ad::mul_rows(t, v[0], v[1]); }},
      {"column_sum", {{5, 4}}, [](Tape& t, Args v) { return ad::column_sum(t, v[0]); }},
      {"matmul_bt", {{4, 3}, {5, 3}}, [](Tape& t, Args v) { return ad::matmul_bt(t, v[0], v[1]); }},
      {"scale_shift", {{3, 3}}, [](Tape& t, Args v) { return ad::scale_shift(t, v[0], -2.0, 2.0); }},
      {"clamp", {{4, 4}}, [](Tape& t, Args v) { return ad::clamp(t, v[0], -1.0, 1.0); },
       [](const std::vector<Tensor2>& in) { return clear_of(in[0], -1.0, 1.0); }},
      {"sum", {{3, 4}}, [](Tape& t, Args v) { return ad::sum(t, v[0]); }},
      {"binarize_st (surrogate)", {{3, 4}}, [](Tape& t, Args v) { return ad::binarize_st(t, v[0]); }, nullptr, true},
      {"aft_simple", {{6, 4}, {4, 4}, {4, 4}, {4, 4}},
       [](Tape& t, Args v) { return ad::aft_simple(t, v[0], v[1], v[2], v[3]); }},
      {"pairwise_distance (real)", {{4, 5}, {3, 5}},
       [](Tape& t, Args v) {
         return ad::pairwise_distance(t, ad::l2_normalize_rows(t, v[0]), ad::l2_normalize_rows(t, v[1]),
                                      DescriptorKind::Real);
       }},
  };
}

/// One op over `instances` random inputs; the output is reduced with fixed
/// random weights so every output entry contributes.
inline CheckRow check_op(const OpSpec& spec, std::size_t instances, std::uint64_t seed) {
  Rng rng(derive_seed(seed, std::hash<std::string>{}(spec.name)));
  GradOutcome worst;
  std::size_t done = 0, checked = 0;
  while (done < instances) {
    std::vector<Tensor2> in;
    for (auto [r, c] : spec.shapes) in.push_back(random_tensor(rng, r, c, -2.0, 2.0));
    if (spec.admissible && !spec.admissible(in)) continue;
    std::optional<Tensor2> w;
    Rng wrng(rng.next());
    auto fn = [&](ad::Tape& t, std::span<const ad::Var> v) {
      ad::Var y = spec.op(t, v);
      if (!w) w = random_tensor(wrng, t.value(y).rows(), t.value(y).cols(), -1.0, 1.0);
      return ad::weighted_sum(t, y, *w);
    };
    const auto base = evaluate_on_tape(fn, in, true, spec.surrogate);
    if (base.kink_margin < kKinkMargin) continue;
    auto f = [&](std::span<const double> theta) {
      return evaluate_on_tape(fn, unflatten(theta, in), false, spec.surrogate).value;
    };
    const auto o = check_gradient(f, flatten(in), base.gradient, kOpScaledGradient, rng);
    worst.rel = std::max(worst.rel, o.rel);
    worst.abs = std::max(worst.abs, o.abs);
    checked += o.checked;
    ++done;
  }
  // A floor violation is reported on the relative scale so one number decides.
  const double measured = checked == 0 ? INFINITY
                                       : std::max(worst.rel, worst.abs > kAbsFloorTolerance ? INFINITY : 0.0);
  return make_row("gradcheck", spec.name, done, measured, kOpRelTolerance);
}

/// A labeled pair of random sets with a ring of positives, for loss checks.
inline TrainingPair random_training_pair(Rng& rng, std::size_t n, std::size_t d, DescriptorKind kind) {
  auto features = [&] {
    FeatureSet fs;
    fs.width = 640;
    fs.height = 480;
    fs.kind_hint = kind;
    fs.dim_hint = d;
    for (std::size_t i = 0; i < n; ++i) {
      fs.keypoints.push_back({rng.uniform(), rng.uniform(0, 0.75), rng.uniform(), rng.uniform(-3, 3), rng.uniform(1, 4)});
      std::vector<double> v(d);
      for (double& x : v) x = rng.normal();
      fs.descriptors.push_back(kind == DescriptorKind::Real ? DescriptorVector::real(kernel::l2_normalize(v))
                                                            : DescriptorVector::binary_from_signs(v));
    }
    return fs;
  };
  LabeledPair lp;
  lp.a = features();
  lp.b = features();
  lp.labels.anchors.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const bool pos = i == j || (j == (i + 1) % n && rng.bernoulli(0.3));
      (pos ? lp.labels.anchors[i].positives : lp.labels.anchors[i].negatives).push_back(static_cast<std::uint32_t>(j));
    }
  return prepare_pair(std::move(lp), 10);
}

/// Full pair loss through the booster, cycling real post-norm, real
/// pre-norm and binary (straight-through surrogate) models.
inline CheckRow check_pair_loss(std::size_t instances, std::uint64_t seed, std::size_t coords_per_instance = 48) {
  Rng rng(derive_seed(seed, 0x70616972));
  GradOutcome worst;
  std::size_t checked = 0;
  for (std::size_t s = 0; s < instances; ++s) {
    const int variant = static_cast<int>(s % 3);
    const HeadKind head = variant == 2 ? HeadKind::Binary : HeadKind::Real;
    const NormPlacement norm = variant == 1 ? NormPlacement::Pre : NormPlacement::Post;
    const bool surrogate = head == HeadKind::Binary;
    const std::size_t n = 3 + rng.below(6), d = rng.bernoulli(0.5) ? 4 : 8;
    TrainingPair tp;
    BoosterParams p;
    PairGradient base;
    do {
      tp = random_training_pair(rng, n, d, head);
      p = BoosterParams::initialize({d, 1, head, norm}, rng.next());
      base = pair_loss_and_gradient(p, tp, 10.0, 10, true, surrogate);
    } while (base.loss.kink_margin < kKinkMargin);
    auto f = [&](std::span<const double> q) {
      BoosterParams pp = p;
      pp.assign(q);
      return pair_loss_and_gradient(pp, tp, 10.0, 10, false, surrogate).loss.total;
    };
    const auto o = check_gradient(f, p.flatten(), base.grad, kLossScaledGradient, rng, coords_per_instance);
    worst.rel = std::max(worst.rel, o.rel);
    worst.abs = std::max(worst.abs, o.abs);
    checked += o.checked;
  }
  const double measured = checked == 0 ? INFINITY
                                       : std::max(worst.rel, worst.abs > kAbsFloorTolerance ? INFINITY : 0.0);
  return make_row("gradcheck", "pair_loss (full booster)", instances, measured, kLossRelTolerance);
}

inline std::vector<CheckRow> gradcheck_suite(std::size_t instances = kGradInstances, std::uint64_t seed = 0) {
  std::vector<CheckRow> rows;
  for (const auto& op : differentiable_ops()) rows.push_back(check_op(op, instances, seed));
  rows.push_back(check_pair_loss(instances, seed));
  return rows;
}

// ---------------------------------------------------------------------------
// Brute-force oracles.

/// AFT-Simple written out entry by entry.
inline Tensor2 aft_literal(const Tensor2& x, const Tensor2& wq, const Tensor2& wk, const Tensor2& wv) {
  const std::size_t n = x.rows(), din = x.cols(), d = wq.cols();
  auto proj = [&](const Tensor2& w, std::size_t i, std::size_t c) {
    double s = 0.0;
    for (std::size_t k = 0; k < din; ++k) s += x(i, k) * w(k, c);
    return s;
  };
  Tensor2 out(n, d);
  for (std::size_t c = 0; c < d; ++c) {
    double num = 0.0, den = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double e = std::exp(proj(wk, j, c));
      num += e * proj(wv, j, c);
      den += e;
    }
    for (std::size_t i = 0; i < n; ++i) out(i, c) = num / den / (1.0 + std::exp(-proj(wq, i, c)));
  }
  return out;
}

inline CheckRow oracle_aft(std::size_t seeds = 200) {
  double worst = 0.0;
  for (std::size_t s = 0; s < seeds; ++s) {
    Rng rng(derive_seed(0xAF7, s));
    const std::size_t n = 1 + rng.below(16), d = 1 + rng.below(8);
    const auto x = random_tensor(rng, n, d), wq = random_tensor(rng, d, d), wk = random_tensor(rng, d, d),
               wv = random_tensor(rng, d, d);
    worst = std::max(worst, max_abs_diff(aft_simple(x, wq, wk, wv), aft_literal(x, wq, wk, wv)));
  }
  return make_row("oracles", "aft_simple vs literal", seeds, worst, 1e-12);
}

/// Average over positives of the precision at the positive's tie group.
inline double ap_by_enumeration(std::span<const int> z, std::span<const Label> labels) {
  double total = 0.0;
  std::size_t npos = 0;
  for (std::size_t p = 0; p < z.size(); ++p) {
    if (labels[p] != Label::Positive) continue;
    ++npos;
    std::size_t within = 0, pos_within = 0;
    for (std::size_t j = 0; j < z.size(); ++j) {
      if (z[j] > z[p]) continue;
      ++within;
      pos_within += labels[j] == Label::Positive;
    }
    total += static_cast<double>(pos_within) / static_cast<double>(within);
  }
  return total / static_cast<double>(npos);
}

/// FastAP with one bin per integer Hamming distance against exact AP.
inline CheckRow oracle_fastap_exact(std::size_t instances = 500) {
  double worst = 0.0;
  Rng rng(0xFA57);
  for (std::size_t s = 0; s < instances; ++s) {
    const std::size_t dim = 1 + rng.below(16), n = 1 + rng.below(40);
    const auto grid = QuantizationGrid::for_metric(DescriptorKind::Binary, dim, dim + 1);
    std::vector<int> zi(n);
    std::vector<double> zd(n);
    std::vector<Label> lab(n);
    for (std::size_t j = 0; j < n; ++j) {
      zi[j] = static_cast<int>(rng.below(dim + 1));
      zd[j] = static_cast<double>(zi[j]);
      lab[j] = rng.bernoulli(0.3) ? Label::Positive : Label::Negative;
    }
    lab[rng.below(n)] = Label::Positive;
    const double fast = fastap(zd, lab, grid);
    worst = std::max({worst, std::abs(fast - exact_ap_binary(zi, lab)), std::abs(fast - ap_by_enumeration(zi, lab))});
  }
  return make_row("oracles", "fastap(b=D) vs exact AP", instances, worst, 1e-9);
}

inline CheckRow oracle_real_head(std::size_t pairs = 10000) {
  double worst = 0.0;
  // Analytic cases with exactly representable unit vectors.
  const double h = 0.5;
  const std::vector<std::pair<std::vector<double>, std::vector<double>>> cases{
      {{1, 0, 0, 0}, {1, 0, 0, 0}}, {{h, h, h, h}, {h, h, h, h}},   // identical: 0
      {{1, 0, 0, 0}, {0, 1, 0, 0}}, {{h, h, h, h}, {h, -h, h, -h}},  // orthogonal: 2
      {{0, 0, 1, 0}, {0, 0, -1, 0}}, {{h, h, h, h}, {-h, -h, -h, -h}}};  // opposite: 4
  for (std::size_t k = 0; k < cases.size(); ++k) {
    const double want = 2.0 * static_cast<double>(k / 2);
    const double got = distances_real(cases[k].first, Tensor2::row(cases[k].second))[0];
    if (got != want) worst = INFINITY;
  }
  Rng rng(0x5E);
  for (std::size_t s = 0; s < pairs; ++s) {
    const std::size_t d = 1 + rng.below(64);
    std::vector<double> a(d), b(d);
    for (double& v : a) v = rng.normal();
    for (double& v : b) v = rng.normal();
    a = kernel::l2_normalize(a);
    b = kernel::l2_normalize(b);
    const double z = distances_real(a, Tensor2::row(b))[0];
    if (!(z >= 0.0 && z <= 4.0)) worst = INFINITY;
    double sq = 0.0;
    for (std::size_t k = 0; k < d; ++k) sq += (a[k] - b[k]) * (a[k] - b[k]);
    worst = std::max(worst, std::abs(z - sq));
  }
  return make_row("oracles", "real head: range, 0/2/4, sq-euclid", pairs, worst, 1e-12);
}

inline CheckRow oracle_binary_head(std::size_t pairs = 10000) {
  constexpr std::size_t kDim = 256;
  double worst = 0.0;
  Rng rng(0xB1);
  for (std::size_t s = 0; s < pairs; ++s) {
    std::vector<double> a(kDim), b(kDim);
    for (double& v : a) v = rng.bernoulli(0.5) ? 1.0 : -1.0;
    for (double& v : b) v = rng.bernoulli(0.5) ? 1.0 : -1.0;
    const auto pa = DescriptorVector::binary_from_signs(a), pb = DescriptorVector::binary_from_signs(b);
    std::size_t differ = 0;
    for (std::size_t k = 0; k < kDim; ++k) differ += a[k] != b[k];
    const double z = distances_binary(a, Tensor2::row(b))[0];
    worst = std::max({worst, std::abs(z - static_cast<double>(hamming_distance(pa, pb))),
                      std::abs(z - static_cast<double>(differ))});
  }
  return make_row("oracles", "binary head vs popcount (D=256)", pairs, worst, 0.0);
}

inline FeatureSet random_set(Rng& rng, std::size_t n, std::size_t d, DescriptorKind kind) {
  FeatureSet fs;
  fs.width = fs.height = 100;
  fs.kind_hint = kind;
  fs.dim_hint = d;
  for (std::size_t i = 0; i < n; ++i) {
    fs.keypoints.push_back({rng.uniform(), rng.uniform(), 1.0, 0.0, 1.0});
    std::vector<double> v(d);
    for (double& x : v) x = rng.normal();
    fs.descriptors.push_back(kind == DescriptorKind::Real ? DescriptorVector::real(kernel::l2_normalize(v))
                                                          : DescriptorVector::binary_from_signs(v));
  }
  return fs;
}

/// Nearest neighbors by sorting every candidate, and mutual pairs by set
/// intersection.
inline CheckRow oracle_matcher(std::size_t instances = 100) {
  bool ok = true;
  Rng rng(0x3A7C);
  for (std::size_t s = 0; s < instances && ok; ++s) {
    const bool hamming = s % 2 == 1;
    const auto kind = hamming ? DescriptorKind::Binary : DescriptorKind::Real;
    const auto metric = hamming ? Metric::Hamming : Metric::Euclidean;
    const std::size_t d = hamming ? 16 : 6;
    const auto a = random_set(rng, 1 + rng.below(25), d, kind), b = random_set(rng, 1 + rng.below(25), d, kind);
    auto scan = [&](const FeatureSet& q, const FeatureSet& t) {
      std::vector<std::pair<std::size_t, std::size_t>> best;
      for (std::size_t i = 0; i < q.size(); ++i) {
        std::vector<std::pair<double, std::size_t>> all;
        for (std::size_t j = 0; j < t.size(); ++j)
          all.push_back({descriptor_distance(q.descriptors[i], t.descriptors[j], metric), j});
        std::sort(all.begin(), all.end());
        best.push_back({i, all.front().second});
      }
      return best;
    };
    const auto fwd = scan(a, b), bwd = scan(b, a);
    const auto got = nn_match(a, b, metric);
    for (std::size_t i = 0; i < fwd.size(); ++i) ok = ok && got.matches[i].j == fwd[i].second;
    std::set<std::pair<std::size_t, std::size_t>> want_mutual;
    for (auto [i, j] : fwd)
      if (bwd[j].second == i) want_mutual.insert({i, j});
    std::set<std::pair<std::size_t, std::size_t>> got_mutual;
    for (const auto& m : mutual_nn_match(a, b, metric).matches) got_mutual.insert({m.i, m.j});
    ok = ok && got_mutual == want_mutual;
  }
  return make_row("oracles", "nn/mutual match vs exhaustive scan", instances, ok ? 0.0 : 1.0, 0.0);
}

inline std::vector<CheckRow> oracles_suite() {
  return {oracle_aft(), oracle_fastap_exact(), oracle_real_head(), oracle_binary_head(), oracle_matcher()};
}

}  // namespace descboost::verify
