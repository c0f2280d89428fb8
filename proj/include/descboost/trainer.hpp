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

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <numbers>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "descboost/booster.hpp"
#include "descboost/config.hpp"
#include "descboost/datagen.hpp"
#include "descboost/errors.hpp"
#include "descboost/fastap.hpp"
#include "descboost/matcher.hpp"

namespace descboost {

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t steps_per_epoch = 50;
  std::size_t batch = 8;
  double base_lr = 1e-3;
  std::size_t warmup_steps = 500;
  double lambda = 10.0;
  double weight_decay = 1e-2;
  std::uint64_t seed = 0;
  std::size_t bins = 10;
  HeadKind head = HeadKind::Real;
  std::size_t dim = 32;
  std::size_t layers = 2;
  NormPlacement norm = NormPlacement::Post;
  std::size_t heldout_pairs = 16;

  BoosterConfig booster() const { return {dim, layers, head, norm}; }

  // epochs = 0 is allowed: it evaluates the initial parameters only.
  void validate() const {
    if (steps_per_epoch < 1 || batch < 1 || warmup_steps < 1 || bins < 2 || heldout_pairs < 1) {
      throw ConfigurationError("train: counts must be >= 1 (bins >= 2)");
    }
    if (!(base_lr > 0.0)) throw ConfigurationError("train: base_lr must be > 0");
    if (!(lambda >= 0.0)) throw ConfigurationError("train: lambda must be >= 0");
    if (!(weight_decay >= 0.0)) throw ConfigurationError("train: weight_decay must be >= 0");
    if (dim < 1 || layers < 1) throw ConfigurationError("train: dim and layers must be >= 1");
  }

  static TrainConfig from_config(KeyValueConfig& c) {
    TrainConfig t;
    t.epochs = c.get_int<std::size_t>("epochs", t.epochs);
    t.steps_per_epoch = c.get_int<std::size_t>("steps_per_epoch", t.steps_per_epoch);
    t.batch = c.get_int<std::size_t>("batch", t.batch);
    t.base_lr = c.get_double("base_lr", t.base_lr);
    t.warmup_steps = c.get_int<std::size_t>("warmup_steps", t.warmup_steps);
    t.lambda = c.get_double("lambda", t.lambda);
    t.weight_decay = c.get_double("weight_decay", t.weight_decay);
    t.seed = c.get_int<std::uint64_t>("seed", t.seed);
    t.bins = c.get_int<std::size_t>("bins", t.bins);
    t.head = parse_descriptor_kind(c.get_string("head", to_string(t.head)));
    t.dim = c.get_int<std::size_t>("dim", t.dim);
    t.layers = c.get_int<std::size_t>("layers", t.layers);
    const std::string norm = c.get_string("norm", "post");
    if (norm == "post") {
      t.norm = NormPlacement::Post;
    } else if (norm == "pre") {
      t.norm = NormPlacement::Pre;
    } else {
      throw ConfigurationError("train: norm must be post or pre");
    }
    t.heldout_pairs = c.get_int<std::size_t>("heldout_pairs", t.heldout_pairs);
    c.reject_unknown();
    t.validate();
    return t;
  }
};

/// Linear warmup on the global step, then a cosine held constant per epoch.
inline double lr_schedule(std::size_t step, std::size_t epoch, const TrainConfig& cfg) {
  if (step < cfg.warmup_steps) {
    return cfg.base_lr * static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
  }
  if (cfg.epochs == 0) return cfg.base_lr;
  const double t = static_cast<double>(epoch) / static_cast<double>(cfg.epochs);
  return cfg.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

// ---------------------------------------------------------------------------
// AdamW with decoupled weight decay.

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;
};

struct OptimizerState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;

  explicit OptimizerState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

inline void adamw_step(std::span<double> params, std::span<const double> grads, OptimizerState& s,
                       double lr, const AdamWOptions& o = {}) {
  if (params.size() != grads.size() || s.m.size() != params.size() || s.v.size() != params.size()) {
    throw DimensionError("adamw_step: parameter, gradient and state sizes differ");
  }
  for (std::size_t k = 0; k < grads.size(); ++k) {
    if (!std::isfinite(grads[k])) {
      throw NumericalAbort("adamw_step: non-finite gradient at parameter " + std::to_string(k) +
                           " (step " + std::to_string(s.step + 1) + ")");
    }
  }
  ++s.step;
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(s.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    s.m[k] = o.beta1 * s.m[k] + (1.0 - o.beta1) * grads[k];
    s.v[k] = o.beta2 * s.v[k] + (1.0 - o.beta2) * grads[k] * grads[k];
    params[k] -= lr * o.weight_decay * params[k];
    params[k] -= lr * (s.m[k] / c1) / (std::sqrt(s.v[k] / c2) + o.eps);
  }
}

// ---------------------------------------------------------------------------
// Per-pair loss and gradient.

/// A labeled pair with its constant raw-descriptor AP table.
struct TrainingPair {
  LabeledPair pair;
  RawApTable raw;
};

inline TrainingPair prepare_pair(LabeledPair p, std::size_t bins) {
  const auto grid = QuantizationGrid::for_metric(p.a.kind(), p.a.dim(), bins);
  const Tensor2 z = distance_matrix(p.a.descriptor_matrix(), p.b.descriptor_matrix(), p.a.kind());
  TrainingPair t{std::move(p), {}};
  t.raw = raw_ap_table(z, t.pair.labels, grid);
  return t;
}

struct PairGradient {
  LossBreakdown loss;
  std::vector<double> grad;  // canonical parameter order
};

/// Loss of one pair through the full booster; the gradient is filled when
/// want_grad is set. surrogate replaces the binary head's sign by the identity.
inline PairGradient pair_loss_and_gradient(const BoosterParams& p, const TrainingPair& tp, double lambda,
                                           std::size_t bins, bool want_grad = true,
                                           bool surrogate = false) {
  ad::Tape t;
  t.straight_through_surrogate = surrogate;
  const auto w = ad::bind_weights(t, p);
  const auto& c = p.config;
  auto head = [&](const FeatureSet& fs) {
    ad::Var x = ad::boost_trunk(t, w, c.norm, t.leaf(fs.descriptor_matrix()), t.leaf(fs.geometry_matrix()));
    return ad::apply_head(t, x, c.head);
  };
  ad::Var ha = head(tp.pair.a);
  ad::Var hb = head(tp.pair.b);
  ad::Var z = ad::pairwise_distance(t, ha, hb, c.head);
  const auto grid = QuantizationGrid::for_metric(c.head, c.dim, bins);
  PairGradient out;
  ad::Var loss = ad::ap_objective(t, z, tp.raw, tp.pair.labels, grid, lambda, &out.loss);
  out.loss.kink_margin = t.kink_margin();
  if (want_grad) {
    t.backward(loss);
    out.grad = ad::collect_gradient(t, w);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Held-out evaluation.

struct EvalSummary {
  double loss = 0.0;          // mean pair loss
  double ap_boosted = 0.0;    // anchor-weighted mean AP
  double ap_raw = 0.0;
  double mma3_boosted = 0.0;  // mutual-NN matches within 3 px
  double mma3_raw = 0.0;
  double p1_boosted = 0.0;    // NN of an anchor with positives is a positive
  double p1_raw = 0.0;
  std::size_t anchors = 0;
};

namespace detail {

struct MatchTally {
  std::size_t correct3 = 0, matches = 0, nn_hits = 0, nn_anchors = 0;

  void add(const FeatureSet& a, const FeatureSet& b, const LabeledPair& p) {
    const Metric m = default_metric(a.kind());
    const MatchSet fwd = nn_match(a, b, m);
    const MatchSet mutual = mutual_check(fwd, nn_match(b, a, m));
    const MmaCurve curve = mma(mutual, p.warp, a, b);
    correct3 += static_cast<std::size_t>(std::llround(curve[2] * static_cast<double>(mutual.size())));
    matches += mutual.size();
    for (const auto& mt : fwd.matches) {
      const auto& pos = p.labels.anchors[mt.i].positives;
      if (pos.empty()) continue;
      ++nn_anchors;
      if (std::find(pos.begin(), pos.end(), mt.j) != pos.end()) ++nn_hits;
    }
  }
  double mma3() const { return matches ? static_cast<double>(correct3) / static_cast<double>(matches) : 0.0; }
  double p1() const { return nn_anchors ? static_cast<double>(nn_hits) / static_cast<double>(nn_anchors) : 0.0; }
};

}  // namespace detail

inline EvalSummary evaluate(const BoosterParams& p, const std::vector<TrainingPair>& pairs, double lambda,
                            std::size_t bins) {
  EvalSummary s;
  if (pairs.empty()) return s;
  detail::MatchTally boosted, raw;
  double ap_b = 0.0, ap_r = 0.0;
  for (const auto& tp : pairs) {
    const auto r = pair_loss_and_gradient(p, tp, lambda, bins, false);
    s.loss += r.loss.total;
    ap_b += r.loss.mean_ap_boosted * static_cast<double>(r.loss.anchors);
    ap_r += r.loss.mean_ap_raw * static_cast<double>(r.loss.anchors);
    s.anchors += r.loss.anchors;
    boosted.add(boost(tp.pair.a, p), boost(tp.pair.b, p), tp.pair);
    raw.add(tp.pair.a, tp.pair.b, tp.pair);
  }
  s.loss /= static_cast<double>(pairs.size());
  s.ap_boosted = ap_b / static_cast<double>(s.anchors);
  s.ap_raw = ap_r / static_cast<double>(s.anchors);
  s.mma3_boosted = boosted.mma3();
  s.mma3_raw = raw.mma3();
  s.p1_boosted = boosted.p1();
  s.p1_raw = raw.p1();
  return s;
}

// ---------------------------------------------------------------------------
// Training loop.

/// Source of training pairs; must be deterministic in its arguments.
using PairSource = std::function<LabeledPair(std::size_t epoch, std::size_t step, std::size_t slot)>;

inline PairSource scene_source(const SceneSpec& scene, std::uint64_t seed) {
  return [scene, seed](std::size_t e, std::size_t s, std::size_t b) {
    return generate_pair(with_seed(scene, derive_seed(seed, e, s, b)));
  };
}

inline constexpr std::uint64_t kHeldOutStream = 0x6865'6c64'6f75'74ULL;

/// Fixed held-out pairs, drawn from a stream disjoint from training.
inline std::vector<TrainingPair> heldout_set(const SceneSpec& scene, std::uint64_t seed, std::size_t count,
                                             std::size_t bins) {
  std::vector<TrainingPair> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    out.push_back(prepare_pair(generate_pair(with_seed(scene, derive_seed(seed, kHeldOutStream, k, 0))), bins));
  }
  return out;
}

struct MetricsRow {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double ap_boosted = 0.0;
  double ap_raw = 0.0;
};

inline constexpr const char* kMetricsHeader = "epoch,step,lr,loss,ap_boosted,ap_raw";

inline void write_metrics_csv(std::ostream& os, const std::vector<MetricsRow>& rows) {
  os << kMetricsHeader << '\n';
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.9e,%.9f,%.9f,%.9f\n", r.epoch, r.step, r.lr, r.loss,
                  r.ap_boosted, r.ap_raw);
    os << buf;
  }
}

struct TrainResult {
  BoosterParams params;  // last good parameters
  std::vector<MetricsRow> log;
  EvalSummary initial;
  EvalSummary final_eval;
  bool aborted = false;
  std::string diagnostics;
};

struct TrainHooks {
  // Called on every reduced batch gradient before the optimizer step.
  std::function<void(std::size_t step, std::vector<double>& grad)> on_gradient;
  // Called after each epoch's log row.
  std::function<void(const MetricsRow&)> on_epoch;
};

/// Row 0 is the held-out evaluation of the initial parameters (its loss is
/// the held-out loss). Later rows carry the epoch's mean training loss and
/// the held-out APs after the epoch.
inline TrainResult train(const TrainConfig& cfg, const PairSource& source,
                         const std::vector<TrainingPair>& heldout, BoosterParams init,
                         const TrainHooks& hooks = {}) {
  cfg.validate();
  if (!(init.config == cfg.booster())) {
    throw ConfigurationError("train: initial parameters do not match the configured booster");
  }
  TrainResult res;
  res.params = std::move(init);
  res.initial = evaluate(res.params, heldout, cfg.lambda, cfg.bins);
  res.log.push_back({0, 0, lr_schedule(0, 0, cfg), res.initial.loss, res.initial.ap_boosted,
                     res.initial.ap_raw});
  res.final_eval = res.initial;

  const AdamWOptions opt{0.9, 0.999, 1e-8, cfg.weight_decay};
  OptimizerState state(res.params.parameter_count());
  std::vector<double> theta = res.params.flatten();
  std::size_t global = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    std::size_t epoch_pairs = 0;
    double lr = 0.0;
    for (std::size_t step = 0; step < cfg.steps_per_epoch; ++step, ++global) {
      lr = lr_schedule(global, epoch, cfg);
      std::vector<double> grad(theta.size(), 0.0);
      double batch_loss = 0.0;
      std::size_t used = 0;
      for (std::size_t b = 0; b < cfg.batch; ++b) {
        const TrainingPair tp = prepare_pair(source(epoch, step, b), cfg.bins);
        PairGradient pg;
        try {
          pg = pair_loss_and_gradient(res.params, tp, cfg.lambda, cfg.bins);
        } catch (const EmptyBatchError&) {
          continue;
        } catch (const DegenerateVectorError& e) {
          // Diverged weights collapse or overflow a row before the loss goes non-finite.
          res.aborted = true;
          res.diagnostics = std::string("train: ") + e.what() + " at step " + std::to_string(global) + " (epoch " +
                            std::to_string(epoch) + ")";
          return res;
        }
        batch_loss += pg.loss.total;
        for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += pg.grad[k];
        ++used;
      }
      if (used == 0) continue;
      const double inv = 1.0 / static_cast<double>(used);
      for (double& g : grad) g *= inv;
      batch_loss *= inv;
      if (hooks.on_gradient) hooks.on_gradient(global, grad);
      try {
        if (!std::isfinite(batch_loss)) {
          throw NumericalAbort("train: non-finite loss at step " + std::to_string(global));
        }
        std::vector<double> next = theta;
        adamw_step(next, grad, state, lr, opt);
        theta = std::move(next);
      } catch (const NumericalAbort& e) {
        res.aborted = true;
        res.diagnostics = std::string(e.what()) + " (epoch " + std::to_string(epoch) + ")";
        return res;
      }
      res.params.assign(theta);
      epoch_loss += batch_loss;
      ++epoch_pairs;
    }
    res.final_eval = evaluate(res.params, heldout, cfg.lambda, cfg.bins);
    const double mean_loss = epoch_pairs ? epoch_loss / static_cast<double>(epoch_pairs) : 0.0;
    res.log.push_back({epoch + 1, global, lr, mean_loss, res.final_eval.ap_boosted, res.final_eval.ap_raw});
    if (hooks.on_epoch) hooks.on_epoch(res.log.back());
  }
  return res;
}

/// Convenience wrapper: synthetic scene stream, held-out set and seeded init.
inline TrainResult train_on_scene(const TrainConfig& cfg, const SceneSpec& scene, const TrainHooks& hooks = {}) {
  cfg.validate();
  if (scene.dim != cfg.dim) {
    throw ConfigurationError("train: scene dim " + std::to_string(scene.dim) + " does not match booster dim " +
                             std::to_string(cfg.dim));
  }
  const auto heldout = heldout_set(scene, cfg.seed, cfg.heldout_pairs, cfg.bins);
  return train(cfg, scene_source(scene, cfg.seed), heldout,
               BoosterParams::initialize(cfg.booster(), derive_seed(cfg.seed, 1, 0, 0)), hooks);
}

}  // namespace descboost
