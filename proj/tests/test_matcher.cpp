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

#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "descboost/datagen.hpp"
#include "descboost/matcher.hpp"

namespace descboost {
namespace {

FeatureSet real_set(Rng& rng, std::size_t n, std::size_t d) {
  FeatureSet fs;
  fs.width = 100;
  fs.height = 100;
  for (std::size_t i = 0; i < n; ++i) {
    fs.keypoints.push_back({rng.uniform(), rng.uniform(), 0.5, 0.0, 1.0});
    std::vector<double> v(d);
    for (double& x : v) x = rng.normal();
    fs.descriptors.push_back(DescriptorVector::real(std::move(v)));
  }
  return fs;
}

FeatureSet binary_set(Rng& rng, std::size_t n, std::size_t d) {
  FeatureSet fs;
  fs.width = 100;
  fs.height = 100;
  for (std::size_t i = 0; i < n; ++i) {
    fs.keypoints.push_back({rng.uniform(), rng.uniform(), 0.5, 0.0, 1.0});
    std::vector<double> v(d);
    for (double& x : v) x = rng.bernoulli(0.5) ? 1.0 : -1.0;
    fs.descriptors.push_back(DescriptorVector::binary_from_signs(v));
  }
  return fs;
}

FeatureSet from_rows(const std::vector<std::vector<double>>& rows) {
  FeatureSet fs;
  fs.width = fs.height = 10;
  for (const auto& r : rows) {
    fs.keypoints.push_back({});
    fs.descriptors.push_back(DescriptorVector::real(r));
  }
  return fs;
}

// Sorts all distances of one query and reads off nearest and second.
MatchSet scan_oracle(const FeatureSet& a, const FeatureSet& b, Metric m) {
  MatchSet ms;
  for (std::size_t i = 0; i < a.size(); ++i) {
    std::vector<std::pair<double, std::size_t>> d;
    for (std::size_t j = 0; j < b.size(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.dim(); ++k) {
        const double diff = a.descriptors[i].value(k) - b.descriptors[j].value(k);
        s += m == Metric::Hamming ? (diff != 0.0 ? 1.0 : 0.0) : diff * diff;
      }
      d.push_back({m == Metric::Hamming ? s : std::sqrt(s), j});
    }
    std::sort(d.begin(), d.end());
    Match mt{static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(d[0].second), d[0].first, std::nullopt};
    if (d.size() >= 2) mt.ratio = d[1].first > 0.0 ? d[0].first / d[1].first : 1.0;
    ms.matches.push_back(mt);
  }
  return ms;
}

TEST(Metric, ParseAndDefaults) {
  EXPECT_EQ(parse_metric("hamming"), Metric::Hamming);
  EXPECT_EQ(parse_metric("euclidean"), Metric::Euclidean);
  EXPECT_THROW(parse_metric("cosine"), ConfigurationError);
  EXPECT_EQ(default_metric(DescriptorKind::Binary), Metric::Hamming);
}

TEST(NnMatch, WorkedExample) {
  const auto a = from_rows({{0, 0}, {10, 0}});
  const auto b = from_rows({{1, 0}, {9, 0}, {0, 3}});
  const auto ms = nn_match(a, b, Metric::Euclidean);
  ASSERT_EQ(ms.size(), 2u);
  EXPECT_EQ(ms.matches[0].j, 0u);
  EXPECT_DOUBLE_EQ(ms.matches[0].distance, 1.0);
  EXPECT_DOUBLE_EQ(*ms.matches[0].ratio, 1.0 / 3.0);
  EXPECT_EQ(ms.matches[1].j, 1u);
  EXPECT_DOUBLE_EQ(*ms.matches[1].ratio, 1.0 / 9.0);
}

TEST(NnMatch, TiesGoToSmallestIndex) {
  const auto a = from_rows({{0, 0}});
  const auto b = from_rows({{0, 2}, {2, 0}, {0, -2}});
  const auto ms = nn_match(a, b, Metric::Euclidean);
  EXPECT_EQ(ms.matches[0].j, 0u);
  EXPECT_EQ(*ms.matches[0].ratio, 1.0);
}

TEST(NnMatch, RatioEdgeCases) {
  // Exact duplicate: d1 = 0 gives ratio 0 unless d2 is also 0.
  const auto a = from_rows({{1, 1}});
  EXPECT_EQ(*nn_match(a, from_rows({{1, 1}, {5, 5}}), Metric::Euclidean).matches[0].ratio, 0.0);
  EXPECT_EQ(*nn_match(a, from_rows({{1, 1}, {1, 1}}), Metric::Euclidean).matches[0].ratio, 1.0);
  EXPECT_FALSE(nn_match(a, from_rows({{3, 1}}), Metric::Euclidean).matches[0].ratio.has_value());
}

TEST(NnMatch, EmptyInputs) {
  Rng rng(1);
  const auto b = real_set(rng, 5, 4);
  EXPECT_TRUE(nn_match(FeatureSet{}, b, Metric::Euclidean).empty());
  EXPECT_TRUE(nn_match(b, FeatureSet{}, Metric::Euclidean).empty());
}

TEST(NnMatch, MetricMustFitKind) {
  Rng rng(2);
  const auto r = real_set(rng, 3, 8), bin = binary_set(rng, 3, 8);
  EXPECT_THROW(nn_match(r, r, Metric::Hamming), ConfigurationError);
  EXPECT_THROW(nn_match(bin, bin, Metric::Euclidean), ConfigurationError);
  EXPECT_THROW(nn_match(r, real_set(rng, 3, 6), Metric::Euclidean), ConfigurationError);
}

TEST(NnMatch, MatchesExhaustiveScan) {
  Rng rng(3);
  for (int s = 0; s < 40; ++s) {
    const auto a = real_set(rng, 1 + rng.below(30), 6), b = real_set(rng, 1 + rng.below(30), 6);
    const auto got = nn_match(a, b, Metric::Euclidean), want = scan_oracle(a, b, Metric::Euclidean);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t k = 0; k < got.size(); ++k) {
      EXPECT_EQ(got.matches[k].j, want.matches[k].j);
      EXPECT_NEAR(got.matches[k].distance, want.matches[k].distance, 1e-12);
      ASSERT_EQ(got.matches[k].ratio.has_value(), want.matches[k].ratio.has_value());
      if (got.matches[k].ratio) {
        EXPECT_NEAR(*got.matches[k].ratio, *want.matches[k].ratio, 1e-12);
      }
    }
    const auto ha = binary_set(rng, 1 + rng.below(30), 24), hb = binary_set(rng, 2 + rng.below(30), 24);
    EXPECT_EQ(nn_match(ha, hb, Metric::Hamming), scan_oracle(ha, hb, Metric::Hamming));
  }
}

TEST(NnMatch, HammingRanksLikeSignEuclidean) {
  // For ±1 vectors ||a−b||² = 4·hamming, so both metrics pick the same neighbor.
  Rng rng(4);
  for (int s = 0; s < 30; ++s) {
    const auto a = binary_set(rng, 20, 32), b = binary_set(rng, 25, 32);
    auto as_real = [](const FeatureSet& fs) {
      FeatureSet r = fs;
      for (auto& d : r.descriptors) d = DescriptorVector::real(d.as_floats());
      return r;
    };
    const auto h = nn_match(a, b, Metric::Hamming), e = nn_match(as_real(a), as_real(b), Metric::Euclidean);
    for (std::size_t k = 0; k < h.size(); ++k) {
      EXPECT_EQ(h.matches[k].j, e.matches[k].j);
      EXPECT_NEAR(4.0 * h.matches[k].distance, e.matches[k].distance * e.matches[k].distance, 1e-9);
    }
  }
}

TEST(MutualCheck, WorkedExample) {
  MatchSet fwd{{{0, 1, 1.0, {}}, {1, 1, 2.0, {}}, {2, 0, 1.0, {}}}};
  MatchSet bwd{{{0, 2, 1.0, {}}, {1, 0, 1.0, {}}}};
  const auto m = mutual_check(fwd, bwd);
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m.matches[0].i, 0u);
  EXPECT_EQ(m.matches[1].i, 2u);
}

TEST(MutualCheck, EqualsSetIntersection) {
  Rng rng(5);
  for (int s = 0; s < 40; ++s) {
    const auto a = real_set(rng, 1 + rng.below(25), 4), b = real_set(rng, 1 + rng.below(25), 4);
    const auto fwd = nn_match(a, b, Metric::Euclidean), bwd = nn_match(b, a, Metric::Euclidean);
    std::set<std::pair<std::uint32_t, std::uint32_t>> f, g, both;
    for (const auto& m : fwd.matches) f.insert({m.i, m.j});
    for (const auto& m : bwd.matches) g.insert({m.j, m.i});
    std::set_intersection(f.begin(), f.end(), g.begin(), g.end(), std::inserter(both, both.end()));
    std::set<std::pair<std::uint32_t, std::uint32_t>> got;
    for (const auto& m : mutual_nn_match(a, b, Metric::Euclidean).matches) got.insert({m.i, m.j});
    EXPECT_EQ(got, both);
    // Mutual matches are one-to-one.
    std::set<std::uint32_t> js;
    for (auto [i, j] : got) EXPECT_TRUE(js.insert(j).second);
  }
}

TEST(Filter, ParseForms) {
  auto r = MatchFilter::parse("ratio:0.8");
  EXPECT_EQ(r.mode, MatchFilter::Mode::Ratio);
  EXPECT_EQ(r.threshold, 0.8);
  auto d = MatchFilter::parse("dist:45");
  EXPECT_EQ(d.mode, MatchFilter::Mode::Distance);
  EXPECT_EQ(d.threshold, 45.0);
  EXPECT_THROW(MatchFilter::parse("ratio"), ConfigurationError);
  EXPECT_THROW(MatchFilter::parse("ratio:x"), ConfigurationError);
  EXPECT_THROW(MatchFilter::parse("ratio:0.8x"), ConfigurationError);
  EXPECT_THROW(MatchFilter::parse("score:1"), ConfigurationError);
}

TEST(Filter, RatioNeedsRatios) {
  MatchSet ms{{{0, 0, 1.0, std::nullopt}}};
  EXPECT_THROW(filter_matches(ms, {MatchFilter::Mode::Ratio, 0.8}), ContractError);
  EXPECT_EQ(filter_matches(ms, {MatchFilter::Mode::Distance, 1.0}).size(), 1u);
}

TEST(Filter, MonotoneInThreshold) {
  Rng rng(6);
  const auto a = real_set(rng, 60, 8), b = real_set(rng, 60, 8);
  const auto ms = nn_match(a, b, Metric::Euclidean);
  for (auto mode : {MatchFilter::Mode::Ratio, MatchFilter::Mode::Distance}) {
    std::size_t prev = 0;
    for (double tau = 0.0; tau <= 6.0; tau += 0.05) {
      const auto kept = filter_matches(ms, {mode, tau});
      EXPECT_GE(kept.size(), prev);
      for (const auto& m : kept.matches) EXPECT_LE(mode == MatchFilter::Mode::Ratio ? *m.ratio : m.distance, tau);
      prev = kept.size();
    }
    EXPECT_EQ(prev, ms.size());
  }
}

// ---------------------------------------------------------------------------
// Mean matching accuracy.

TEST(Mma, ExactReprojectionIsPerfect) {
  FeatureSet a, b;
  a.width = b.width = 100;
  a.height = b.height = 100;
  const PlanarWarp shift({1, 0, 5, 0, 1, -3, 0, 0, 1});
  for (int i = 0; i < 4; ++i) {
    a.keypoints.push_back({0.2 + 0.1 * i, 0.5, 0, 0, 0});
    b.keypoints.push_back({0.25 + 0.1 * i, 0.47, 0, 0, 0});
  }
  MatchSet ms;
  for (std::uint32_t i = 0; i < 4; ++i) ms.matches.push_back({i, i, 0.0, {}});
  for (double v : mma(ms, shift, a, b)) EXPECT_NEAR(v, 1.0, 1e-12);
  // A 2.5 px miss counts from threshold 3 on.
  b.keypoints[0].x += 0.025;
  const auto curve = mma(ms, shift, a, b);
  EXPECT_DOUBLE_EQ(curve[1], 0.75);
  EXPECT_DOUBLE_EQ(curve[2], 1.0);
}

TEST(Mma, EmptyIsZeroAndCurveIsMonotone) {
  for (double v : mma({}, PlanarWarp{}, {}, {})) EXPECT_EQ(v, 0.0);
  Rng rng(7);
  const auto a = real_set(rng, 50, 4), b = real_set(rng, 50, 4);
  const auto curve = mma(nn_match(a, b, Metric::Euclidean), PlanarWarp{}, a, b);
  for (std::size_t t = 1; t < curve.size(); ++t) EXPECT_GE(curve[t], curve[t - 1]);
  for (double v : curve) EXPECT_LE(v, 1.0);
}

// ---------------------------------------------------------------------------
// Threshold calibration.

TEST(Calibration, SeparableClassesGetAThresholdBetweenThem) {
  Rng rng(8);
  std::vector<double> good(500), bad(500);
  for (double& v : good) v = rng.uniform(0.0, 0.4);
  for (double& v : bad) v = rng.uniform(0.6, 1.0);
  const auto c = calibrate_threshold(good, bad);
  EXPECT_TRUE(c.separable);
  EXPECT_GE(c.threshold, 0.4 - 1e-9);
  EXPECT_LT(c.threshold, 0.6);
  EXPECT_DOUBLE_EQ(c.retained_correct, 1.0);
  EXPECT_DOUBLE_EQ(c.rejected_incorrect, 1.0);
  EXPECT_EQ(c.edges.size(), 65u);
}

TEST(Calibration, OverlappingClassesAreFlagged) {
  Rng rng(9);
  std::vector<double> good(400), bad(400);
  for (double& v : good) v = rng.uniform(0.0, 1.0);
  for (double& v : bad) v = rng.uniform(0.0, 1.0);
  const auto c = calibrate_threshold(good, bad);
  EXPECT_FALSE(c.separable);
  EXPECT_GE(c.rejected_incorrect, 0.9);
}

TEST(Calibration, MeetsRejectTargetAndPdfsIntegrateToOne) {
  Rng rng(10);
  for (int s = 0; s < 20; ++s) {
    std::vector<double> good(300), bad(300);
    for (double& v : good) v = std::abs(rng.normal()) * 0.3;
    for (double& v : bad) v = 0.5 + std::abs(rng.normal()) * 0.3;
    const auto c = calibrate_threshold(good, bad);
    EXPECT_GE(c.rejected_incorrect, 0.9);
    double ig = 0.0, ib = 0.0;
    for (std::size_t k = 0; k < c.pdf_correct.size(); ++k) {
      const double w = c.edges[k + 1] - c.edges[k];
      ig += c.pdf_correct[k] * w;
      ib += c.pdf_incorrect[k] * w;
    }
    EXPECT_NEAR(ig, 1.0, 1e-9);
    EXPECT_NEAR(ib, 1.0, 1e-9);
  }
}

TEST(Calibration, TooFewSamplesThrows) {
  std::vector<double> few(50, 0.1), many(200, 0.9);
  EXPECT_THROW(calibrate_threshold(few, many), CalibrationError);
  EXPECT_THROW(calibrate_threshold(many, few), CalibrationError);
}

TEST(Calibration, DegenerateSamplesStillReturn) {
  std::vector<double> same(150, 0.5);
  const auto c = calibrate_threshold(same, same);
  EXPECT_FALSE(c.separable);
}

// ---------------------------------------------------------------------------
// Synthetic sanity.

TEST(Matching, NoiselessPairsMatchPerfectly) {
  SceneSpec s;
  s.num_keypoints = 40;
  s.seed = 3;
  const auto p = generate_pair(s);
  const auto ms = mutual_nn_match(p.a, p.b, Metric::Euclidean);
  EXPECT_EQ(ms.size(), p.a.size());
  EXPECT_DOUBLE_EQ(mma(ms, p.warp, p.a, p.b)[2], 1.0);
}

}  // namespace
}  // namespace descboost
