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

// Attention scaling benchmark: median wall time and peak transient tensor
// allocation of one forward pass per context size N.

#include <algorithm>
#include <chrono>
#include <ostream>
#include <string>
#include <vector>

#include "descboost/booster.hpp"

namespace descboost {

enum class AttentionKind { Aft, Mha };

inline AttentionKind parse_attention(const std::string& s) {
  if (s == "aft") return AttentionKind::Aft;
  if (s == "mha") return AttentionKind::Mha;
  throw ConfigurationError("unknown attention '" + s + "' (expected aft or mha)");
}

inline const char* to_string(AttentionKind a) { return a == AttentionKind::Aft ? "aft" : "mha"; }

struct BenchRow {
  AttentionKind attention = AttentionKind::Aft;
  std::size_t n = 0;
  std::size_t d = 0;
  std::size_t trials = 0;
  double median_ms = 0.0;
  std::size_t peak_bytes = 0;  // above the live level at call entry
  std::size_t out_rows = 0;
  std::size_t out_cols = 0;
};

inline constexpr const char* kBenchHeader = "attention,n,d,trials,median_ms,peak_transient_bytes";

/// MHA uses 4 heads when D allows it, else one.
inline std::size_t bench_heads(std::size_t d) { return d % 4 == 0 ? 4 : 1; }

inline BenchRow bench_attention(AttentionKind kind, std::size_t n, std::size_t d, std::size_t trials,
                                std::uint64_t seed = 0) {
  if (n == 0 || d == 0 || trials == 0) throw ConfigurationError("bench: n, d and trials must be >= 1");
  Rng rng(derive_seed(seed, n));
  const Tensor2 x = random_tensor(rng, n, d);
  const Tensor2 wq = random_tensor(rng, d, d), wk = random_tensor(rng, d, d), wv = random_tensor(rng, d, d);
  std::vector<HeadWeights> heads(bench_heads(d));
  for (auto& h : heads) {
    const std::size_t dk = d / heads.size();
    h = {random_tensor(rng, d, dk), random_tensor(rng, d, dk), random_tensor(rng, d, dk)};
  }
  BenchRow row{kind, n, d, trials};
  auto run = [&] { return kind == AttentionKind::Aft ? aft_simple(x, wq, wk, wv) : mha_reference(x, heads); };
  run();  // warm-up: first-touch page faults and cold caches
  std::vector<double> ms;
  for (std::size_t t = 0; t < trials; ++t) {
    reset_alloc_peak();
    const std::size_t live = alloc_stats().live_bytes;
    const auto t0 = std::chrono::steady_clock::now();
    const Tensor2 out = run();
    const auto t1 = std::chrono::steady_clock::now();
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    row.peak_bytes = std::max(row.peak_bytes, alloc_stats().peak_bytes - live);
    row.out_rows = out.rows();
    row.out_cols = out.cols();
  }
  std::sort(ms.begin(), ms.end());
  row.median_ms = ms.size() % 2 ? ms[ms.size() / 2] : 0.5 * (ms[ms.size() / 2 - 1] + ms[ms.size() / 2]);
  return row;
}

inline void write_bench_csv(std::ostream& os, const std::vector<BenchRow>& rows) {
  os << kBenchHeader << '\n';
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.6f", r.median_ms);
    os << to_string(r.attention) << ',' << r.n << ',' << r.d << ',' << r.trials << ',' << buf << ','
       << r.peak_bytes << '\n';
  }
}

}  // namespace descboost
