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
#include "descboost/fastap.hpp"

namespace descboost {
namespace {

SceneSpec small_scene(DescriptorKind kind = DescriptorKind::Real) {
  SceneSpec s;
  s.num_keypoints = 48;
  s.kind = kind;
  s.dim = kind == DescriptorKind::Real ? 32 : 64;
  return s;
}

// Anchor-weighted FastAP of the raw descriptors, A anchors only.
double raw_ap(const LabeledPair& p) {
  const auto grid = QuantizationGrid::for_metric(p.a.kind(), p.a.dim());
  const auto z = distance_matrix(p.a.descriptor_matrix(), p.b.descriptor_matrix(), p.a.kind());
  const auto t = raw_ap_table(z, p.labels, grid);
  double s = 0.0;
  int n = 0;
  for (double v : t.forward)
    if (!std::isnan(v)) s += v, ++n;
  return s / n;
}

TEST(Scene, ValidationRejectsBadRanges) {
  auto bad = [](auto mutate) {
    SceneSpec s;
    mutate(s);
    EXPECT_THROW(s.validate(), ConfigurationError);
  };
  bad([](SceneSpec& s) { s.width = 0; });
  bad([](SceneSpec& s) { s.num_keypoints = 3; });
  bad([](SceneSpec& s) { s.sigma = -0.1; });
  bad([](SceneSpec& s) { s.rho = 0.5; });
  bad([](SceneSpec& s) { s.dropout = 1.0; });
  bad([](SceneSpec& s) { s.repetition = 1.0; });
  bad([](SceneSpec& s) { s.scale_min = 2.0; });
  bad([](SceneSpec& s) { s.perspective = -1.0; });
}

TEST(Scene, ConfigKeys) {
  auto c = KeyValueConfig::parse("kind = binary\ndim = 64\nrho = 0.1\nrepetition = 0.5 # texture\nseed=9\n");
  const auto s = SceneSpec::from_config(c);
  EXPECT_EQ(s.kind, DescriptorKind::Binary);
  EXPECT_EQ(s.dim, 64u);
  EXPECT_EQ(s.rho, 0.1);
  EXPECT_EQ(s.repetition, 0.5);
  EXPECT_EQ(s.seed, 9u);
  auto unknown = KeyValueConfig::parse("sigmaa = 0.2\n");
  EXPECT_THROW(SceneSpec::from_config(unknown), ConfigurationError);
  auto notnum = KeyValueConfig::parse("sigma = big\n");
  EXPECT_THROW(SceneSpec::from_config(notnum), ConfigurationError);
}

TEST(Generate, DeterministicInSeed) {
  auto s = small_scene();
  s.sigma = 0.2;
  const auto a = generate_pair(with_seed(s, 4)), b = generate_pair(with_seed(s, 4)),
             c = generate_pair(with_seed(s, 5));
  EXPECT_EQ(a.a, b.a);
  EXPECT_EQ(a.b, b.b);
  EXPECT_EQ(a.warp, b.warp);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_FALSE(a.a == c.a);
}

TEST(Generate, ShapesAndGeometryAreValid) {
  for (auto kind : {DescriptorKind::Real, DescriptorKind::Binary}) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto p = generate_pair(with_seed(small_scene(kind), seed));
      ASSERT_EQ(p.a.size(), 48u);
      ASSERT_EQ(p.b.size(), 48u);
      EXPECT_EQ(p.a.kind(), kind);
      for (const FeatureSet* fs : {&p.a, &p.b}) {
        EXPECT_NO_THROW(fs->validate());
        for (const auto& k : fs->keypoints) EXPECT_TRUE(k.valid());
        for (std::size_t i = 0; i < fs->size(); ++i)
          for (std::size_t j = i + 1; j < fs->size(); ++j) {
            const auto [xi, yi] = fs->pixel(i);
            const auto [xj, yj] = fs->pixel(j);
            // float32 storage can shave a hair off the placement distance.
            EXPECT_GE(std::hypot(xi - xj, yi - yj), kMinSeparationPx - 1e-3);
          }
      }
      if (kind == DescriptorKind::Real) {
        for (const auto& d : p.a.descriptors) EXPECT_NEAR(kernel::l2_norm(d.real_values()), 1.0, 1e-6);
      }
    }
  }
}

TEST(Generate, LabelsFollowTheWarp) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto p = generate_pair(with_seed(small_scene(), seed));
    EXPECT_TRUE(verify_labels(p));
    EXPECT_NO_THROW(p.labels.validate(p.b.size()));
    for (std::size_t i = 0; i < p.a.size(); ++i) {
      const auto [ax, ay] = p.a.pixel(i);
      const auto q = p.warp.apply(ax, ay);
      ASSERT_TRUE(q.has_value());
      for (std::size_t j = 0; j < p.b.size(); ++j) {
        const auto [bx, by] = p.b.pixel(j);
        const double d = std::hypot(q->first - bx, q->second - by);
        const auto& al = p.labels.anchors[i];
        const bool pos = std::count(al.positives.begin(), al.positives.end(), j) > 0;
        const bool neg = std::count(al.negatives.begin(), al.negatives.end(), j) > 0;
        EXPECT_EQ(pos, d < kPositiveRadiusPx);
        EXPECT_EQ(neg, d > kNegativeRadiusPx);
      }
    }
  }
}

TEST(Generate, SharedKeypointsLandWithinJitter) {
  const auto p = generate_pair(with_seed(small_scene(), 7));
  for (std::size_t i = 0; i < p.a.size(); ++i) {
    const auto [ax, ay] = p.a.pixel(i);
    const auto q = p.warp.apply(ax, ay);
    const auto [bx, by] = p.b.pixel(i);
    EXPECT_LE(std::hypot(q->first - bx, q->second - by), kDetectorJitterPx + 1e-3);
    // The counterpart is always labeled positive.
    const auto& pos = p.labels.anchors[i].positives;
    EXPECT_NE(std::find(pos.begin(), pos.end(), i), pos.end());
  }
}

TEST(Generate, TamperedLabelsAreReported) {
  auto p = generate_pair(with_seed(small_scene(), 8));
  p.labels.anchors[5].positives.clear();
  p.labels.anchors[11].negatives.pop_back();
  try {
    verify_labels(p);
    FAIL() << "expected LabelError";
  } catch (const LabelError& e) {
    EXPECT_EQ(e.offending_anchors, (std::vector<std::size_t>{5, 11}));
  }
}

TEST(Generate, DropoutIsBinomial) {
  // Anchors without a counterpart have no positive (placement is random).
  auto s = small_scene();
  s.num_keypoints = 64;
  s.dropout = 0.3;
  std::size_t dropped = 0, total = 0;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const auto p = generate_pair(with_seed(s, seed));
    for (std::size_t i = 0; i < p.a.size(); ++i) {
      const auto [ax, ay] = p.a.pixel(i);
      const auto q = p.warp.apply(ax, ay);
      const auto [bx, by] = p.b.pixel(i);
      dropped += std::hypot(q->first - bx, q->second - by) > kDetectorJitterPx + 1e-3;
      ++total;
    }
  }
  const double n = static_cast<double>(total), mean = 0.3 * n, sd = std::sqrt(n * 0.3 * 0.7);
  EXPECT_NEAR(static_cast<double>(dropped), mean, 4 * sd);
}

TEST(Generate, NoiselessDescriptorsAreExactCopies) {
  const auto p = generate_pair(with_seed(small_scene(DescriptorKind::Binary), 2));
  for (std::size_t i = 0; i < p.a.size(); ++i) EXPECT_EQ(p.a.descriptors[i], p.b.descriptors[i]);
}

TEST(Generate, BitFlipRateMatchesRho) {
  auto s = small_scene(DescriptorKind::Binary);
  s.dim = 256;
  s.rho = 0.1;
  std::size_t flips = 0, bits = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto p = generate_pair(with_seed(s, seed));
    for (std::size_t i = 0; i < p.a.size(); ++i) {
      flips += hamming_distance(p.a.descriptors[i], p.b.descriptors[i]);
      bits += 256;
    }
  }
  // Two independent corruptions differ with probability 2ρ(1−ρ).
  const double q = 2 * 0.1 * 0.9, n = static_cast<double>(bits);
  EXPECT_NEAR(static_cast<double>(flips), q * n, 4 * std::sqrt(n * q * (1 - q)));
}

TEST(Generate, RepetitionSharesIdealDescriptors) {
  auto s = small_scene(DescriptorKind::Binary);
  s.repetition = 0.75;
  const auto p = generate_pair(with_seed(s, 3));
  std::set<std::vector<std::uint8_t>> distinct;
  for (const auto& d : p.a.descriptors) distinct.insert({d.packed_bits().begin(), d.packed_bits().end()});
  EXPECT_EQ(distinct.size(), 12u);
}

TEST(Generate, RawApFallsWithNoise) {
  for (auto kind : {DescriptorKind::Real, DescriptorKind::Binary}) {
    double prev = 2.0;
    for (double level : {0.0, 0.1, 0.25, 0.4}) {
      auto s = small_scene(kind);
      (kind == DescriptorKind::Real ? s.sigma : s.rho) = kind == DescriptorKind::Real ? 2 * level : level;
      double mean = 0.0;
      for (std::uint64_t seed = 0; seed < 8; ++seed) mean += raw_ap(generate_pair(with_seed(s, seed))) / 8;
      EXPECT_LT(mean, prev + 1e-9) << to_string(kind) << " level " << level;
      if (level == 0.0) {
        EXPECT_NEAR(mean, 1.0, 1e-9);
      }
      prev = mean;
    }
  }
}

TEST(Generate, ImpossibleSceneThrows) {
  SceneSpec s;
  s.width = 24;
  s.height = 24;
  s.num_keypoints = 200;
  EXPECT_THROW(generate_pair(s), GenerationError);
}

TEST(Warp, InverseRoundTrips) {
  Rng rng(1);
  for (int k = 0; k < 20; ++k) {
    const auto p = generate_pair(with_seed(small_scene(), static_cast<std::uint64_t>(k)));
    const auto inv = p.warp.inverse();
    for (int t = 0; t < 10; ++t) {
      const double x = rng.uniform(0, 640), y = rng.uniform(0, 480);
      const auto q = p.warp.apply(x, y);
      const auto r = inv.apply(q->first, q->second);
      EXPECT_NEAR(r->first, x, 1e-8);
      EXPECT_NEAR(r->second, y, 1e-8);
    }
  }
  EXPECT_THROW(PlanarWarp({1, 2, 0, 2, 4, 0, 0, 0, 1}), ContractError);
  EXPECT_THROW(PlanarWarp({1, 0, 0, 0, 1, 0, 0, 0, 0}), ContractError);
}

TEST(Labels, TransposeIsAnInvolution) {
  const auto p = generate_pair(with_seed(small_scene(), 9));
  const auto back = p.labels.transposed(p.b.size());
  auto sorted = [](MatchLabels l) {
    for (auto& a : l.anchors) {
      std::sort(a.positives.begin(), a.positives.end());
      std::sort(a.negatives.begin(), a.negatives.end());
    }
    return l;
  };
  EXPECT_EQ(sorted(back.transposed(p.a.size())), sorted(p.labels));
}

}  // namespace
}  // namespace descboost
