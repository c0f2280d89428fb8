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

// Prints the MMA curve of a stored pair (as written by `descboost gen`),
// optionally after boosting both sides with a checkpoint.
//
//   sample_match_report <prefix> [checkpoint]

#include <cstdio>

#include "descboost/fileio.hpp"
#include "descboost/matcher.hpp"

int main(int argc, char** argv) {
  using namespace descboost;
  if (argc < 2) {
    std::fprintf(stderr, "usage: %s <prefix> [checkpoint]\n", argv[0]);
    return 2;
  }
  try {
    LabeledPair p = load_pair(PairPaths::from_prefix(argv[1]));
    if (argc > 2) {
      const auto params = load_checkpoint(argv[2]);
      p.a = boost(p.a, params);
      p.b = boost(p.b, params);
    }
    const Metric metric = default_metric(p.a.kind());
    const MatchSet ms = mutual_nn_match(p.a, p.b, metric);
    const MmaCurve curve = mma(ms, p.warp, p.a, p.b);
    std::printf("%zu x %zu keypoints, %zu mutual matches\n", p.a.size(), p.b.size(), ms.size());
    for (std::size_t t = 0; t < curve.size(); ++t) std::printf("  MMA@%zupx  %.3f\n", t + 1, curve[t]);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
