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

// Differentiable primitives used by the booster. Two layers:
//
//   kernel::   plain forward functions on Tensor2 (no bookkeeping)
//   ad::       the same ops recorded on a Tape with vector-Jacobian products
//
// The tape works at matrix granularity: one node per op, not per scalar.

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "descboost/errors.hpp"
#include "descboost/tensor.hpp"

namespace descboost {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kNormFloor = 1e-12;

namespace kernel {

/// a[N×K] · b[K×M]
inline Tensor2 matmul(const Tensor2& a, const Tensor2& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + a.shape_string() + " · " + b.shape_string());
  }
  Tensor2 out(a.rows(), b.cols());
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double* o = out.data() + i * m;
    const double* ai = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = ai[p];
      const double* bp = b.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) o[j] += s * bp[j];
    }
  }
  return out;
}

/// aᵀ · b for a[K×N], b[K×M]
inline Tensor2 matmul_at(const Tensor2& a, const Tensor2& b) {
  if (a.rows() != b.rows()) {
    throw DimensionError("matmul_at: " + a.shape_string() + "ᵀ · " + b.shape_string());
  }
  Tensor2 out(a.cols(), b.cols());
  const std::size_t k = a.rows(), n = a.cols(), m = b.cols();
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a.data() + p * n;
    const double* bp = b.data() + p * m;
    for (std::size_t i = 0; i < n; ++i) {
      const double s = ap[i];
      if (s == 0.0) continue;
      double* o = out.data() + i * m;
      for (std::size_t j = 0; j < m; ++j) o[j] += s * bp[j];
    }
  }
  return out;
}

/// a · bᵀ for a[N×K], b[M×K]
inline Tensor2 matmul_bt(const Tensor2& a, const Tensor2& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_bt: " + a.shape_string() + " · " + b.shape_string() + "ᵀ");
  }
  Tensor2 out(a.rows(), b.rows());
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = a.data() + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const double* bj = b.data() + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      out(i, j) = s;
    }
  }
  return out;
}

/// out[i,j] = Σ_k x[i,k]·W[k,j] + b[j]; b is 1×B.
inline Tensor2 affine(const Tensor2& x, const Tensor2& w, const Tensor2& b) {
  if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols()) {
    throw DimensionError("affine: x " + x.shape_string() + ", W " + w.shape_string() + ", b " +
                         b.shape_string());
  }
  Tensor2 out = matmul(x, w);
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row_span(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += b(0, j);
  }
  return out;
}

template <class F>
Tensor2 map(const Tensor2& x, F f) {
  Tensor2 out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = f(x.data()[i]);
  return out;
}

inline double sigmoid_scalar(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

inline Tensor2 relu(const Tensor2& x) {
  return map(x, [](double v) { return v > 0.0 ? v : 0.0; });
}
inline Tensor2 sigmoid(const Tensor2& x) { return map(x, sigmoid_scalar); }
inline Tensor2 tanh_act(const Tensor2& x) {
  return map(x, [](double v) { return std::tanh(v); });
}

/// Column-wise softmax: every channel is normalized over the N rows.
inline Tensor2 softmax_over_context(const Tensor2& k) {
  if (k.rows() == 0) throw DimensionError("softmax_over_context: empty context");
  Tensor2 out(k.rows(), k.cols());
  for (std::size_t d = 0; d < k.cols(); ++d) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k.rows(); ++j) mx = std::max(mx, k(j, d));
    double total = 0.0;
    for (std::size_t j = 0; j < k.rows(); ++j) {
      const double e = std::exp(k(j, d) - mx);
      out(j, d) = e;
      total += e;
    }
    for (std::size_t j = 0; j < k.rows(); ++j) out(j, d) /= total;
  }
  return out;
}

inline double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline std::vector<double> l2_normalize(std::span<const double> v) {
  const double n = l2_norm(v);
  if (!(n > kNormFloor)) throw DegenerateVectorError("l2_normalize: vector norm is ~0");
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

inline Tensor2 l2_normalize_rows(const Tensor2& x) {
  Tensor2 out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double n = l2_norm(x.row_span(i));
    if (!(n > kNormFloor)) {
      throw DegenerateVectorError("l2_normalize: row " + std::to_string(i) + " has ~0 norm");
    }
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = x(i, j) / n;
  }
  return out;
}

/// Per-row normalization with 1/D variance, then gain/bias (both 1×D).
inline Tensor2 layer_norm(const Tensor2& x, const Tensor2& gain, const Tensor2& bias) {
  if (x.cols() < 2 || gain.cols() != x.cols() || bias.cols() != x.cols() || gain.rows() != 1 ||
      bias.rows() != 1) {
    throw DimensionError("layer_norm: x " + x.shape_string() + ", gain " + gain.shape_string() +
                         ", bias " + bias.shape_string());
  }
  const auto d = static_cast<double>(x.cols());
  Tensor2 out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double mean = 0.0;
    for (double v : x.row_span(i)) mean += v;
    mean /= d;
    double var = 0.0;
    for (double v : x.row_span(i)) var += (v - mean) * (v - mean);
    var /= d;
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t j = 0; j < x.cols(); ++j) {
      out(i, j) = (x(i, j) - mean) * inv * gain(0, j) + bias(0, j);
    }
  }
  return out;
}

inline Tensor2 column_sum(const Tensor2& x) {
  Tensor2 out(1, x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out(0, j) += x(i, j);
  return out;
}

inline Tensor2 add(const Tensor2& a, const Tensor2& b) {
  Tensor2 out = a;
  out += b;
  return out;
}

inline Tensor2 hadamard(const Tensor2& a, const Tensor2& b) {
  a.require_same_shape(b, "hadamard");
  Tensor2 out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  return out;
}

/// Every row of a multiplied elementwise by the single row r.
inline Tensor2 mul_rows(const Tensor2& a, const Tensor2& r) {
  if (r.rows() != 1 || r.cols() != a.cols()) {
    throw DimensionError("mul_rows: " + a.shape_string() + " by " + r.shape_string());
  }
  Tensor2 out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) = a(i, j) * r(0, j);
  return out;
}

/// sign with sign(0) = +1
inline Tensor2 binarize(const Tensor2& x) {
  return map(x, [](double v) { return v >= 0.0 ? 1.0 : -1.0; });
}

}  // namespace kernel

namespace debug {

// Fault-injection hook: scales the weight gradient of every affine op by
// (1 + value). Zero in normal operation; the verify command flips it to show
// the gradient checks catch a broken backward.
inline std::atomic<double>& backward_perturbation() {
  static std::atomic<double> value{0.0};
  return value;
}

}  // namespace debug

namespace ad {

struct Var {
  std::size_t id = 0;
};

class Tape;
using BackwardFn = std::function<void(Tape&, const Tensor2& out_grad)>;

/// Ordered record of executed ops. Single owner; one forward and one backward.
class Tape {
 public:
  Var leaf(Tensor2 value) { return push(std::move(value), nullptr); }

  Var push(Tensor2 value, BackwardFn backward) {
    nodes_.push_back(Node{std::move(value), Tensor2{}, false, std::move(backward)});
    return Var{nodes_.size() - 1};
  }

  const Tensor2& value(Var v) const { return nodes_.at(v.id).value; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Accumulated gradient; zeros when the node received none.
  Tensor2 grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.has_grad) return n.grad;
    return Tensor2(n.value.rows(), n.value.cols());
  }

  void accumulate(Var v, const Tensor2& g) {
    Node& n = nodes_.at(v.id);
    if (!n.has_grad) {
      n.grad = Tensor2(n.value.rows(), n.value.cols());
      n.has_grad = true;
    }
    n.grad += g;
  }

  /// Reverse sweep from a 1×1 output.
  void backward(Var out) {
    const Node& o = nodes_.at(out.id);
    if (o.value.size() != 1) {
      throw DimensionError("backward: output must be scalar, got " + o.value.shape_string());
    }
    accumulate(out, Tensor2(1, 1, 1.0));
    for (std::size_t i = out.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.has_grad || !n.backward) continue;
      // The closure may append gradients to earlier nodes only.
      const Tensor2 g = n.grad;
      n.backward(*this, g);
    }
  }

  /// Binarization forward pass becomes the identity, so the recorded
  /// function is the smooth surrogate the straight-through backward differentiates.
  bool straight_through_surrogate = false;

  // Smallest distance of any recorded non-smooth op input to its kink.
  // Finite-difference harnesses use this to avoid straddling a kink.
  void note_kink_margin(double m) { kink_margin_ = std::min(kink_margin_, m); }
  double kink_margin() const noexcept { return kink_margin_; }

 private:
  struct Node {
    Tensor2 value;
    Tensor2 grad;
    bool has_grad;
    BackwardFn backward;
  };
  std::deque<Node> nodes_;
  double kink_margin_ = std::numeric_limits<double>::infinity();
};

inline Var affine(Tape& t, Var x, Var w, Var b) {
  Tensor2 out = kernel::affine(t.value(x), t.value(w), t.value(b));
  return t.push(std::move(out), [x, w, b](Tape& tp, const Tensor2& g) {
    tp.accumulate(x, kernel::matmul_bt(g, tp.value(w)));
    Tensor2 gw = kernel::matmul_at(tp.value(x), g);
    const double p = debug::backward_perturbation().load();
    if (p != 0.0)
      for (double& v : gw.values()) v *= 1.0 + p;
    tp.accumulate(w, gw);
    tp.accumulate(b, kernel::column_sum(g));
  });
}

inline Var relu(Tape& t, Var x) {
  const Tensor2& xv = t.value(x);
  double margin = std::numeric_limits<double>::infinity();
  for (double v : xv.values()) margin = std::min(margin, std::abs(v));
  t.note_kink_margin(margin);
  return t.push(kernel::relu(xv), [x](Tape& tp, const Tensor2& g) {
    const Tensor2& xv = tp.value(x);
    Tensor2 gx(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.size(); ++i) gx.data()[i] = xv.data()[i] > 0.0 ? g.data()[i] : 0.0;
    tp.accumulate(x, gx);
  });
}

inline Var sigmoid(Tape& t, Var x) {
  const Var y{t.size()};
  return t.push(kernel::sigmoid(t.value(x)), [x, y](Tape& tp, const Tensor2& g) {
    const Tensor2& yv = tp.value(y);
    Tensor2 gx(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = yv.data()[i];
      gx.data()[i] = g.data()[i] * s * (1.0 - s);
    }
    tp.accumulate(x, gx);
  });
}

inline Var tanh_act(Tape& t, Var x) {
  const Var y{t.size()};
  return t.push(kernel::tanh_act(t.value(x)), [x, y](Tape& tp, const Tensor2& g) {
    const Tensor2& yv = tp.value(y);
    Tensor2 gx(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = yv.data()[i];
      gx.data()[i] = g.data()[i] * (1.0 - s * s);
    }
    tp.accumulate(x, gx);
  });
}

inline Var softmax_over_context(Tape& t, Var k) {
  const Var y{t.size()};
  return t.push(kernel::softmax_over_context(t.value(k)), [k, y](Tape& tp, const Tensor2& g) {
    const Tensor2& yv = tp.value(y);
    Tensor2 gk(g.rows(), g.cols());
    for (std::size_t d = 0; d < g.cols(); ++d) {
      double dot = 0.0;
      for (std::size_t j = 0; j < g.rows(); ++j) dot += g(j, d) * yv(j, d);
      for (std::size_t j = 0; j < g.rows(); ++j) gk(j, d) = yv(j, d) * (g(j, d) - dot);
    }
    tp.accumulate(k, gk);
  });
}

inline Var l2_normalize_rows(Tape& t, Var x) {
  const Var y{t.size()};
  return t.push(kernel::l2_normalize_rows(t.value(x)), [x, y](Tape& tp, const Tensor2& g) {
    const Tensor2& xv = tp.value(x);
    const Tensor2& yv = tp.value(y);
    Tensor2 gx(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.rows(); ++i) {
      const double n = kernel::l2_norm(xv.row_span(i));
      double dot = 0.0;
      for (std::size_t j = 0; j < g.cols(); ++j) dot += g(i, j) * yv(i, j);
      for (std::size_t j = 0; j < g.cols(); ++j) gx(i, j) = (g(i, j) - yv(i, j) * dot) / n;
    }
    tp.accumulate(x, gx);
  });
}

inline Var layer_norm(Tape& t, Var x, Var gain, Var bias) {
  Tensor2 out = kernel::layer_norm(t.value(x), t.value(gain), t.value(bias));
  return t.push(std::move(out), [x, gain, bias](Tape& tp, const Tensor2& g) {
    const Tensor2& xv = tp.value(x);
    const Tensor2& gv = tp.value(gain);
    const std::size_t n = xv.rows(), dim = xv.cols();
    const auto d = static_cast<double>(dim);
    Tensor2 gx(n, dim), ggain(1, dim), gbias(1, dim);
    std::vector<double> xhat(dim), dxhat(dim);
    for (std::size_t i = 0; i < n; ++i) {
      double mean = 0.0;
      for (double v : xv.row_span(i)) mean += v;
      mean /= d;
      double var = 0.0;
      for (double v : xv.row_span(i)) var += (v - mean) * (v - mean);
      var /= d;
      const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
      double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        xhat[j] = (xv(i, j) - mean) * inv;
        dxhat[j] = g(i, j) * gv(0, j);
        ggain(0, j) += g(i, j) * xhat[j];
        gbias(0, j) += g(i, j);
        mean_dxhat += dxhat[j];
        mean_dxhat_xhat += dxhat[j] * xhat[j];
      }
      mean_dxhat /= d;
      mean_dxhat_xhat /= d;
      for (std::size_t j = 0; j < dim; ++j) {
        gx(i, j) = inv * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
      }
    }
    tp.accumulate(x, gx);
    tp.accumulate(gain, ggain);
    tp.accumulate(bias, gbias);
  });
}

inline Var add(Tape& t, Var a, Var b) {
  return t.push(kernel::add(t.value(a), t.value(b)), [a, b](Tape& tp, const Tensor2& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

inline Var hadamard(Tape& t, Var a, Var b) {
  return t.push(kernel::hadamard(t.value(a), t.value(b)), [a, b](Tape& tp, const Tensor2& g) {
    tp.accumulate(a, kernel::hadamard(g, tp.value(b)));
    tp.accumulate(b, kernel::hadamard(g, tp.value(a)));
  });
}

inline Var mul_rows(Tape& t, Var a, Var r) {
  return t.push(kernel::mul_rows(t.value(a), t.value(r)), [a, r](Tape& tp, const Tensor2& g) {
    tp.accumulate(a, kernel::mul_rows(g, tp.value(r)));
    tp.accumulate(r, kernel::column_sum(kernel::hadamard(g, tp.value(a))));
  });
}

inline Var column_sum(Tape& t, Var a) {
  return t.push(kernel::column_sum(t.value(a)), [a](Tape& tp, const Tensor2& g) {
    const Tensor2& av = tp.value(a);
    Tensor2 ga(av.rows(), av.cols());
    for (std::size_t i = 0; i < av.rows(); ++i)
      for (std::size_t j = 0; j < av.cols(); ++j) ga(i, j) = g(0, j);
    tp.accumulate(a, ga);
  });
}

inline Var matmul_bt(Tape& t, Var a, Var b) {
  return t.push(kernel::matmul_bt(t.value(a), t.value(b)), [a, b](Tape& tp, const Tensor2& g) {
    tp.accumulate(a, kernel::matmul(g, tp.value(b)));
    tp.accumulate(b, kernel::matmul_at(g, tp.value(a)));
  });
}

/// alpha·a + beta, elementwise with scalar constants.
inline Var scale_shift(Tape& t, Var a, double alpha, double beta) {
  Tensor2 out = kernel::map(t.value(a), [=](double v) { return alpha * v + beta; });
  return t.push(std::move(out), [a, alpha](Tape& tp, const Tensor2& g) {
    tp.accumulate(a, kernel::map(g, [=](double v) { return alpha * v; }));
  });
}

/// Clamp into [lo, hi]; the gradient passes wherever the input was inside.
inline Var clamp(Tape& t, Var a, double lo, double hi) {
  Tensor2 out = kernel::map(t.value(a), [=](double v) { return std::clamp(v, lo, hi); });
  return t.push(std::move(out), [a, lo, hi](Tape& tp, const Tensor2& g) {
    const Tensor2& av = tp.value(a);
    Tensor2 ga(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = av.data()[i];
      ga.data()[i] = (v >= lo && v <= hi) ? g.data()[i] : 0.0;
    }
    tp.accumulate(a, ga);
  });
}

/// sign(·) forward with sign(0)=+1, identity backward (straight-through).
inline Var binarize_st(Tape& t, Var v) {
  Tensor2 out = t.straight_through_surrogate ? Tensor2(t.value(v)) : kernel::binarize(t.value(v));
  return t.push(std::move(out), [v](Tape& tp, const Tensor2& g) { tp.accumulate(v, g); });
}

inline Var sum(Tape& t, Var a) {
  double s = 0.0;
  for (double v : t.value(a).values()) s += v;
  return t.push(Tensor2(1, 1, s), [a](Tape& tp, const Tensor2& g) {
    const Tensor2& av = tp.value(a);
    tp.accumulate(a, Tensor2(av.rows(), av.cols(), g(0, 0)));
  });
}

/// Σ w ⊙ a for a constant weight tensor w; a random projection to a scalar.
inline Var weighted_sum(Tape& t, Var a, const Tensor2& w) {
  const Tensor2& av = t.value(a);
  av.require_same_shape(w, "weighted_sum");
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += av.data()[i] * w.data()[i];
  return t.push(Tensor2(1, 1, s), [a, w](Tape& tp, const Tensor2& g) {
    Tensor2 ga = w;
    for (double& v : ga.values()) v *= g(0, 0);
    tp.accumulate(a, ga);
  });
}

}  // namespace ad

// ---------------------------------------------------------------------------
// Finite-difference gradient verification.

inline constexpr double kGradCheckStep = 1e-5;

/// Symmetric relative error used by every gradient check.
inline double grad_rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

/// Compares `analytic` to central differences of f around theta, over the
/// coordinates listed in `coords` (all coordinates when empty).
inline GradCheckReport grad_check(const std::function<double(std::span<const double>)>& f,
                                  std::span<const double> theta, std::span<const double> analytic,
                                  double h = kGradCheckStep,
                                  std::span<const std::size_t> coords = {}) {
  if (analytic.size() != theta.size()) {
    throw DimensionError("grad_check: gradient has " + std::to_string(analytic.size()) +
                         " entries for " + std::to_string(theta.size()) + " parameters");
  }
  std::vector<double> probe(theta.begin(), theta.end());
  GradCheckReport rep;
  auto check_one = [&](std::size_t i) {
    const double saved = probe[i];
    probe[i] = saved + h;
    const double fp = f(probe);
    probe[i] = saved - h;
    const double fm = f(probe);
    probe[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw EvaluationError("grad_check: non-finite function value at coordinate " +
                            std::to_string(i));
    }
    const double numeric = (fp - fm) / (2.0 * h);
    const double err = grad_rel_error(analytic[i], numeric);
    if (rep.checked == 0 || err > rep.max_rel_error) {
      rep.max_rel_error = err;
      rep.worst_index = i;
    }
    ++rep.checked;
  };
  if (coords.empty()) {
    for (std::size_t i = 0; i < theta.size(); ++i) check_one(i);
  } else {
    for (std::size_t i : coords) check_one(i);
  }
  return rep;
}

/// Scalar function of several tensors, built on a tape.
using TapeFunction = std::function<ad::Var(ad::Tape&, std::span<const ad::Var>)>;

struct TapeEvaluation {
  double value = 0.0;
  std::vector<double> gradient;  // flattened over all inputs, in order
  double kink_margin = std::numeric_limits<double>::infinity();
};

inline std::vector<double> flatten(std::span<const Tensor2> ts) {
  std::vector<double> out;
  for (const auto& t : ts) out.insert(out.end(), t.values().begin(), t.values().end());
  return out;
}

inline std::vector<Tensor2> unflatten(std::span<const double> flat, std::span<const Tensor2> like) {
  std::vector<Tensor2> out;
  std::size_t off = 0;
  for (const auto& t : like) {
    out.emplace_back(t.rows(), t.cols(), flat.subspan(off, t.size()));
    off += t.size();
  }
  return out;
}

inline TapeEvaluation evaluate_on_tape(const TapeFunction& fn, std::span<const Tensor2> inputs,
                                       bool want_gradient, bool surrogate = false) {
  ad::Tape tape;
  tape.straight_through_surrogate = surrogate;
  std::vector<ad::Var> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.push_back(tape.leaf(t));
  ad::Var out = fn(tape, vars);
  TapeEvaluation ev;
  ev.value = tape.value(out)(0, 0);
  ev.kink_margin = tape.kink_margin();
  if (want_gradient) {
    tape.backward(out);
    for (auto v : vars) {
      Tensor2 g = tape.grad(v);
      ev.gradient.insert(ev.gradient.end(), g.values().begin(), g.values().end());
    }
  }
  return ev;
}

/// Gradient check of a tape-built scalar function over all (or selected)
/// input coordinates.
inline GradCheckReport grad_check_tape(const TapeFunction& fn, std::span<const Tensor2> inputs,
                                       double h = kGradCheckStep,
                                       std::span<const std::size_t> coords = {},
                                       bool surrogate = false) {
  const TapeEvaluation base = evaluate_on_tape(fn, inputs, true, surrogate);
  const std::vector<double> theta = flatten(inputs);
  std::vector<Tensor2> shapes(inputs.begin(), inputs.end());
  auto f = [&](std::span<const double> p) {
    auto ts = unflatten(p, shapes);
    return evaluate_on_tape(fn, ts, false, surrogate).value;
  };
  return grad_check(f, theta, base.gradient, h, coords);
}

}  // namespace descboost
