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

// Descriptor booster network.
//
//   self-boosting   d' = MLP_desc(d) + d + MLP_geo(x, y, score, orientation, scale)
//   cross-boosting  L encoder layers, each an AFT-Simple attention sublayer
//                   followed by a 2-layer feed-forward sublayer
//   head            L2 normalization (real) or tanh + sign (binary)
//
// Weights are described once by the BoosterWeights<T> template and
// instantiated with T = Tensor2 for storage and T = ad::Var on a tape.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "descboost/diffkernel.hpp"
#include "descboost/errors.hpp"
#include "descboost/tensor.hpp"
#include "descboost/types.hpp"

namespace descboost {

using HeadKind = DescriptorKind;

enum class NormPlacement : std::uint8_t { Post = 0, Pre = 1 };

/// Hidden-layer activation id as stored in checkpoints.
enum class Activation : std::uint8_t { ReLU = 0 };

inline constexpr std::array<std::size_t, 3> kGeoHiddenDims{32, 64, 128};
inline constexpr std::size_t kGeometryInputs = 5;

struct BoosterConfig {
  std::size_t dim = 32;
  std::size_t layers = 2;
  HeadKind head = HeadKind::Real;
  NormPlacement norm = NormPlacement::Post;

  void validate() const {
    if (dim < 2) throw ConfigurationError("descriptor dimension must be >= 2");
    if (layers < 1) throw ConfigurationError("at least one encoder layer is required");
  }

  bool operator==(const BoosterConfig&) const = default;
};

/// Named presets for common extractor families.
inline BoosterConfig preset_config(const std::string& family) {
  if (family == "sift") return {128, 4, HeadKind::Real, NormPlacement::Post};
  if (family == "orb") return {256, 4, HeadKind::Binary, NormPlacement::Post};
  if (family == "superpoint") return {256, 9, HeadKind::Real, NormPlacement::Post};
  if (family == "alike") return {64, 9, HeadKind::Real, NormPlacement::Post};
  if (family == "synthetic") return {32, 2, HeadKind::Real, NormPlacement::Post};
  throw ConfigurationError("unknown preset '" + family + "'");
}

template <class T>
struct LinearWeights {
  T weight;  // in × out
  T bias;    // 1 × out
};

template <class T>
struct EncoderLayerWeights {
  T query, key, value;  // D × D each
  LinearWeights<T> ffn_in;   // D → 2D
  LinearWeights<T> ffn_out;  // 2D → D
  T norm1_gain, norm1_bias, norm2_gain, norm2_bias;
};

template <class T>
struct BoosterWeights {
  std::array<LinearWeights<T>, 2> desc_mlp;  // D → 2D → D
  std::array<LinearWeights<T>, 5> geo_mlp;   // 5 → 32 → 64 → 128 → D → D
  std::vector<EncoderLayerWeights<T>> encoder;
};

/// Visits every weight tensor in the canonical (checkpoint) order.
template <class W, class F>
void visit_weights(W& w, F&& f) {
  for (std::size_t i = 0; i < w.desc_mlp.size(); ++i) {
    f("desc_mlp." + std::to_string(i) + ".weight", w.desc_mlp[i].weight);
    f("desc_mlp." + std::to_string(i) + ".bias", w.desc_mlp[i].bias);
  }
  for (std::size_t i = 0; i < w.geo_mlp.size(); ++i) {
    f("geo_mlp." + std::to_string(i) + ".weight", w.geo_mlp[i].weight);
    f("geo_mlp." + std::to_string(i) + ".bias", w.geo_mlp[i].bias);
  }
  for (std::size_t l = 0; l < w.encoder.size(); ++l) {
    auto& e = w.encoder[l];
    const std::string p = "encoder." + std::to_string(l) + ".";
    f(p + "query", e.query);
    f(p + "key", e.key);
    f(p + "value", e.value);
    f(p + "ffn_in.weight", e.ffn_in.weight);
    f(p + "ffn_in.bias", e.ffn_in.bias);
    f(p + "ffn_out.weight", e.ffn_out.weight);
    f(p + "ffn_out.bias", e.ffn_out.bias);
    f(p + "norm1.gain", e.norm1_gain);
    f(p + "norm1.bias", e.norm1_bias);
    f(p + "norm2.gain", e.norm2_gain);
    f(p + "norm2.bias", e.norm2_bias);
  }
}

/// Expected (rows, cols) of every tensor, in canonical order.
inline std::vector<std::pair<std::size_t, std::size_t>> weight_shapes(std::size_t dim,
                                                                      std::size_t layers) {
  std::vector<std::pair<std::size_t, std::size_t>> s;
  s.push_back({dim, 2 * dim});
  s.push_back({1, 2 * dim});
  s.push_back({2 * dim, dim});
  s.push_back({1, dim});
  const std::array<std::size_t, 6> geo{kGeometryInputs, kGeoHiddenDims[0], kGeoHiddenDims[1],
                                       kGeoHiddenDims[2], dim, dim};
  for (std::size_t i = 0; i + 1 < geo.size(); ++i) {
    s.push_back({geo[i], geo[i + 1]});
    s.push_back({1, geo[i + 1]});
  }
  for (std::size_t l = 0; l < layers; ++l) {
    s.push_back({dim, dim});
    s.push_back({dim, dim});
    s.push_back({dim, dim});
    s.push_back({dim, 2 * dim});
    s.push_back({1, 2 * dim});
    s.push_back({2 * dim, dim});
    s.push_back({1, dim});
    for (int k = 0; k < 4; ++k) s.push_back({1, dim});
  }
  return s;
}

struct BoosterParams {
  BoosterConfig config;
  BoosterWeights<Tensor2> weights;

  /// All-zero weights with identity layer norms (gain 1, bias 0).
  static BoosterParams zeros(const BoosterConfig& cfg) {
    cfg.validate();
    BoosterParams p;
    p.config = cfg;
    p.weights.encoder.resize(cfg.layers);
    const auto shapes = weight_shapes(cfg.dim, cfg.layers);
    std::size_t k = 0;
    visit_weights(p.weights, [&](const std::string& name, Tensor2& t) {
      t = Tensor2(shapes[k].first, shapes[k].second);
      if (name.find(".gain") != std::string::npos) t.fill(1.0);
      ++k;
    });
    return p;
  }

  /// Kaiming-style uniform init: weights in ±sqrt(6/fan_in), biases in
  /// ±1/sqrt(fan_in); layer norms start as identity.
  static BoosterParams initialize(const BoosterConfig& cfg, std::uint64_t seed) {
    BoosterParams p = zeros(cfg);
    Rng rng(seed);
    Tensor2* last_weight = nullptr;
    visit_weights(p.weights, [&](const std::string& name, Tensor2& t) {
      if (name.find("norm") != std::string::npos) return;
      const bool is_bias = name.ends_with(".bias");
      const double fan_in = static_cast<double>(is_bias && last_weight ? last_weight->rows() : t.rows());
      const double bound = is_bias ? 1.0 / std::sqrt(fan_in) : std::sqrt(6.0 / fan_in);
      for (double& v : t.values()) v = rng.uniform(-bound, bound);
      if (!is_bias) last_weight = &t;
    });
    return p;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    visit_weights(weights, [&](const std::string&, const Tensor2& t) { n += t.size(); });
    return n;
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(parameter_count());
    visit_weights(weights, [&](const std::string&, const Tensor2& t) {
      out.insert(out.end(), t.values().begin(), t.values().end());
    });
    return out;
  }

  void assign(std::span<const double> flat) {
    if (flat.size() != parameter_count()) {
      throw DimensionError("parameter vector has " + std::to_string(flat.size()) +
                           " entries, model has " + std::to_string(parameter_count()));
    }
    std::size_t off = 0;
    visit_weights(weights, [&](const std::string&, Tensor2& t) {
      std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), t.size(), t.values().begin());
      off += t.size();
    });
  }

  bool operator==(const BoosterParams& o) const { return config == o.config && flatten() == o.flatten(); }
};

/// Closed-form parameter count for (D, L).
inline std::size_t parameter_count(std::size_t dim, std::size_t layers) {
  std::size_t n = 0;
  for (auto [r, c] : weight_shapes(dim, layers)) n += r * c;
  return n;
}

// ---------------------------------------------------------------------------
// Attention kernels (forward only).

/// AFT-Simple: out[i] = sigmoid(Q[i]) ⊙ Σ_j softmax_over_context(K)[j] ⊙ V[j].
/// O(N·D) time and memory; the N×N attention matrix is never formed.
inline Tensor2 aft_simple(const Tensor2& x, const Tensor2& wq, const Tensor2& wk, const Tensor2& wv) {
  if (x.rows() == 0) throw DimensionError("aft_simple: empty context");
  const Tensor2 q = kernel::matmul(x, wq);
  Tensor2 pooled(1, wv.cols());
  {
    const Tensor2 weights = kernel::softmax_over_context(kernel::matmul(x, wk));
    const Tensor2 v = kernel::matmul(x, wv);
    pooled = kernel::column_sum(kernel::hadamard(weights, v));
  }
  return kernel::mul_rows(kernel::sigmoid(q), pooled);
}

struct HeadWeights {
  Tensor2 query, key, value;  // D × D/H each
};

/// Multi-head dot-product attention; the quadratic baseline. Scores are
/// divided by D_k, or by sqrt(D_k) when sqrt_scaling is set.
inline Tensor2 mha_reference(const Tensor2& x, std::span<const HeadWeights> heads,
                             bool sqrt_scaling = false) {
  const std::size_t n = x.rows(), d = x.cols();
  if (heads.empty() || d % heads.size() != 0) {
    throw ConfigurationError("mha_reference: D=" + std::to_string(d) + " not divisible by H=" +
                             std::to_string(heads.size()));
  }
  const std::size_t dk = d / heads.size();
  for (const auto& h : heads) {
    if (h.query.rows() != d || h.query.cols() != dk || h.key.rows() != d || h.key.cols() != dk ||
        h.value.rows() != d || h.value.cols() != dk) {
      throw DimensionError("mha_reference: head weights must be " + std::to_string(d) + "x" +
                           std::to_string(dk));
    }
  }
  const double scale = sqrt_scaling ? std::sqrt(static_cast<double>(dk)) : static_cast<double>(dk);
  Tensor2 out(n, d);
  for (std::size_t h = 0; h < heads.size(); ++h) {
    const Tensor2 q = kernel::matmul(x, heads[h].query);
    const Tensor2 k = kernel::matmul(x, heads[h].key);
    const Tensor2 v = kernel::matmul(x, heads[h].value);
    Tensor2 scores = kernel::matmul_bt(q, k);  // N × N
    for (std::size_t i = 0; i < n; ++i) {
      auto r = scores.row_span(i);
      double mx = -std::numeric_limits<double>::infinity();
      for (double& s : r) {
        s /= scale;
        mx = std::max(mx, s);
      }
      double total = 0.0;
      for (double& s : r) {
        s = std::exp(s - mx);
        total += s;
      }
      for (double& s : r) s /= total;
    }
    const Tensor2 head_out = kernel::matmul(scores, v);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < dk; ++j) out(i, h * dk + j) = head_out(i, j);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Differentiable forward pass.

namespace ad {

inline Var aft_simple(Tape& t, Var x, Var wq, Var wk, Var wv) {
  const Tensor2 zero_bias(1, t.value(wq).cols());
  Var b = t.leaf(zero_bias);
  Var q = sigmoid(t, affine(t, x, wq, b));
  Var k = softmax_over_context(t, affine(t, x, wk, b));
  Var v = affine(t, x, wv, b);
  Var pooled = column_sum(t, hadamard(t, k, v));
  return mul_rows(t, q, pooled);
}

inline Var mlp_stage(Tape& t, Var x, const LinearWeights<Var>& w, bool activate) {
  Var y = affine(t, x, w.weight, w.bias);
  return activate ? relu(t, y) : y;
}

/// MLP_desc(d) + d
inline Var project_descriptors(Tape& t, const BoosterWeights<Var>& w, Var desc) {
  Var h = mlp_stage(t, desc, w.desc_mlp[0], true);
  Var y = mlp_stage(t, h, w.desc_mlp[1], false);
  return add(t, y, desc);
}

/// MLP_geo(p): ReLU after every stage but the last.
inline Var encode_geometry(Tape& t, const BoosterWeights<Var>& w, Var geometry) {
  Var h = geometry;
  for (std::size_t i = 0; i < w.geo_mlp.size(); ++i) {
    h = mlp_stage(t, h, w.geo_mlp[i], i + 1 < w.geo_mlp.size());
  }
  return h;
}

inline Var feed_forward(Tape& t, const EncoderLayerWeights<Var>& e, Var x) {
  return mlp_stage(t, mlp_stage(t, x, e.ffn_in, true), e.ffn_out, false);
}

inline Var encoder_layer(Tape& t, const EncoderLayerWeights<Var>& e, Var x, NormPlacement norm) {
  if (norm == NormPlacement::Post) {
    Var x1 = layer_norm(t, add(t, x, aft_simple(t, x, e.query, e.key, e.value)), e.norm1_gain,
                        e.norm1_bias);
    return layer_norm(t, add(t, x1, feed_forward(t, e, x1)), e.norm2_gain, e.norm2_bias);
  }
  Var n1 = layer_norm(t, x, e.norm1_gain, e.norm1_bias);
  Var x1 = add(t, x, aft_simple(t, n1, e.query, e.key, e.value));
  Var n2 = layer_norm(t, x1, e.norm2_gain, e.norm2_bias);
  return add(t, x1, feed_forward(t, e, n2));
}

/// Everything before the output head: N×D pre-head activations.
inline Var boost_trunk(Tape& t, const BoosterWeights<Var>& w, NormPlacement norm, Var desc, Var geometry) {
  Var x = add(t, project_descriptors(t, w, desc), encode_geometry(t, w, geometry));
  for (const auto& e : w.encoder) x = encoder_layer(t, e, x, norm);
  return x;
}

inline Var apply_head(Tape& t, Var x, HeadKind head) {
  if (head == HeadKind::Real) return l2_normalize_rows(t, x);
  return binarize_st(t, tanh_act(t, x));
}

/// Leaves for all weights, in canonical order, mirroring the tensor layout.
inline BoosterWeights<Var> bind_weights(Tape& t, const BoosterParams& p) {
  BoosterWeights<Var> w;
  w.encoder.resize(p.weights.encoder.size());
  std::vector<Var> leaves;
  visit_weights(p.weights, [&](const std::string&, const Tensor2& x) { leaves.push_back(t.leaf(x)); });
  std::size_t k = 0;
  visit_weights(w, [&](const std::string&, Var& v) { v = leaves[k++]; });
  return w;
}

/// Gradient of every weight, in canonical order.
inline std::vector<double> collect_gradient(const Tape& t, const BoosterWeights<Var>& w) {
  std::vector<double> g;
  visit_weights(w, [&](const std::string&, const Var& v) {
    Tensor2 gv = t.grad(v);
    g.insert(g.end(), gv.values().begin(), gv.values().end());
  });
  return g;
}

}  // namespace ad

// ---------------------------------------------------------------------------
// Inference on feature sets.

inline void require_compatible(const FeatureSet& fs, const BoosterConfig& cfg) {
  fs.validate();
  if (!fs.empty() && fs.dim() != cfg.dim) {
    throw ConfigurationError("descriptor dimension " + std::to_string(fs.dim()) +
                             " does not match booster dimension " + std::to_string(cfg.dim));
  }
}

/// Per-keypoint projection MLP_desc(d) + d, with binary bits mapped to ±1.
inline std::vector<double> project_descriptor(const DescriptorVector& d, const BoosterParams& p) {
  if (d.dim() != p.config.dim) {
    throw ConfigurationError("descriptor dimension " + std::to_string(d.dim()) +
                             " does not match booster dimension " + std::to_string(p.config.dim));
  }
  ad::Tape t;
  auto w = ad::bind_weights(t, p);
  const auto f = d.as_floats();
  ad::Var out = ad::project_descriptors(t, w, t.leaf(Tensor2::row(f)));
  auto v = t.value(out).values();
  return {v.begin(), v.end()};
}

inline std::vector<double> encode_geometry(const KeypointGeometry& g, const BoosterParams& p) {
  ad::Tape t;
  auto w = ad::bind_weights(t, p);
  const auto a = g.as_array();
  ad::Var out = ad::encode_geometry(t, w, t.leaf(Tensor2::row(a)));
  auto v = t.value(out).values();
  return {v.begin(), v.end()};
}

inline Tensor2 encoder_layer(const Tensor2& x, const EncoderLayerWeights<Tensor2>& layer,
                             NormPlacement norm = NormPlacement::Post) {
  ad::Tape t;
  EncoderLayerWeights<ad::Var> e{t.leaf(layer.query), t.leaf(layer.key), t.leaf(layer.value),
                                 {t.leaf(layer.ffn_in.weight), t.leaf(layer.ffn_in.bias)},
                                 {t.leaf(layer.ffn_out.weight), t.leaf(layer.ffn_out.bias)},
                                 t.leaf(layer.norm1_gain), t.leaf(layer.norm1_bias),
                                 t.leaf(layer.norm2_gain), t.leaf(layer.norm2_bias)};
  return t.value(ad::encoder_layer(t, e, t.leaf(x), norm));
}

/// N×D head outputs as floats (unit rows for real, ±1 for binary).
inline Tensor2 boost_matrix(const FeatureSet& fs, const BoosterParams& p) {
  require_compatible(fs, p.config);
  if (fs.empty()) return Tensor2(0, p.config.dim);
  ad::Tape t;
  auto w = ad::bind_weights(t, p);
  ad::Var x = ad::boost_trunk(t, w, p.config.norm, t.leaf(fs.descriptor_matrix()),
                              t.leaf(fs.geometry_matrix()));
  return t.value(ad::apply_head(t, x, p.config.head));
}

/// Boosted copy of fs; geometry unchanged, descriptor kind follows the head.
inline FeatureSet boost(const FeatureSet& fs, const BoosterParams& p) {
  const Tensor2 out = boost_matrix(fs, p);
  FeatureSet r;
  r.image_id = fs.image_id;
  r.width = fs.width;
  r.height = fs.height;
  r.keypoints = fs.keypoints;
  r.kind_hint = p.config.head;
  r.dim_hint = p.config.dim;
  r.descriptors.reserve(fs.size());
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto row = out.row_span(i);
    if (p.config.head == HeadKind::Real) {
      r.descriptors.push_back(DescriptorVector::real({row.begin(), row.end()}));
    } else {
      r.descriptors.push_back(DescriptorVector::binary_from_signs(row));
    }
  }
  return r;
}

}  // namespace descboost
