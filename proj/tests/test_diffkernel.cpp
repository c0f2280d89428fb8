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
#include <functional>
#include <optional>

#include "descboost/diffkernel.hpp"

namespace descboost {
namespace {

using ad::Tape;
using ad::Var;

constexpr double kOpTolerance = 1e-6;
constexpr int kOpSeeds = 100;
constexpr double kTinyGradient = 1e-4;
constexpr double kTinyAbsTolerance = 1e-9;

Tensor2 from(std::size_t r, std::size_t c, std::vector<double> v) { return Tensor2(r, c, v); }

// ---------------------------------------------------------------------------
// Forward kernels against direct evaluation.

TEST(Affine, IdentityCase) {
  const auto i2 = Tensor2::identity(2);
  EXPECT_EQ(kernel::affine(i2, i2, Tensor2(1, 2)), i2);
}

TEST(Affine, ZeroInputGivesBiasRows) {
  Rng rng(1);
  const auto w = random_tensor(rng, 3, 2);
  const auto out = kernel::affine(Tensor2(4, 3), w, from(1, 2, {1, 2}));
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(out(i, 0), 1.0);
    EXPECT_EQ(out(i, 1), 2.0);
  }
}

TEST(Affine, MatchesTripleLoop) {
  Rng rng(2);
  for (int s = 0; s < 20; ++s) {
    const auto x = random_tensor(rng, 3, 2), w = random_tensor(rng, 2, 4), b = random_tensor(rng, 1, 4);
    const auto out = kernel::affine(x, w, b);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 4; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < 2; ++k) acc += x(i, k) * w(k, j);
        EXPECT_EQ(out(i, j), acc + b(0, j));
      }
  }
}

TEST(Affine, ShapeMismatchThrows) {
  EXPECT_THROW(kernel::affine(Tensor2(2, 3), Tensor2(2, 2), Tensor2(1, 2)), DimensionError);
  EXPECT_THROW(kernel::affine(Tensor2(2, 2), Tensor2(2, 2), Tensor2(1, 3)), DimensionError);
}

TEST(Matmul, TransposedVariantsAgree) {
  Rng rng(3);
  const auto a = random_tensor(rng, 4, 3), b = random_tensor(rng, 4, 5), c = random_tensor(rng, 6, 3);
  const auto at_b = kernel::matmul_at(a, b);
  const auto a_ct = kernel::matmul_bt(a, c);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 4; ++k) s += a(k, i) * b(k, j);
      EXPECT_NEAR(at_b(i, j), s, 1e-15);
    }
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 6; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 3; ++k) s += a(i, k) * c(j, k);
      EXPECT_NEAR(a_ct(i, j), s, 1e-15);
    }
}

TEST(Activations, Examples) {
  EXPECT_EQ(kernel::sigmoid(from(1, 1, {0.0}))(0, 0), 0.5);
  EXPECT_EQ(kernel::tanh_act(from(1, 1, {0.0}))(0, 0), 0.0);
  const auto r = kernel::relu(from(1, 2, {-3.2, 1.5}));
  EXPECT_EQ(r(0, 0), 0.0);
  EXPECT_EQ(r(0, 1), 1.5);
}

TEST(Activations, SigmoidStableAtExtremes) {
  const auto s = kernel::sigmoid(from(1, 2, {-800.0, 800.0}));
  EXPECT_TRUE(s.all_finite());
  EXPECT_EQ(s(0, 0), 0.0);
  EXPECT_EQ(s(0, 1), 1.0);
}

TEST(Softmax, SingleRowIsOnes) {
  const auto s = kernel::softmax_over_context(from(1, 3, {-4, 0, 9}));
  for (double v : s.values()) EXPECT_EQ(v, 1.0);
}

TEST(Softmax, ConstantColumnIsUniform) {
  const auto s = kernel::softmax_over_context(Tensor2(5, 2, 3.7));
  for (double v : s.values()) EXPECT_NEAR(v, 0.2, 1e-15);
}

TEST(Softmax, MatchesDirectExpSum) {
  Rng rng(4);
  for (int seed = 0; seed < 50; ++seed) {
    const auto k = random_tensor(rng, 3, 2, -3, 3);
    const auto s = kernel::softmax_over_context(k);
    for (std::size_t d = 0; d < 2; ++d) {
      double total = 0.0;
      for (std::size_t j = 0; j < 3; ++j) total += std::exp(k(j, d));
      for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(s(j, d), std::exp(k(j, d)) / total, 1e-12);
    }
  }
}

TEST(Softmax, ColumnsSumToOneForExtremeInputs) {
  Rng rng(5);
  for (int seed = 0; seed < 200; ++seed) {
    const auto k = random_tensor(rng, 1 + rng.below(20), 1 + rng.below(6), -700, 700);
    const auto s = kernel::softmax_over_context(k);
    ASSERT_TRUE(s.all_finite());
    const auto cs = kernel::column_sum(s);
    for (double v : cs.values()) EXPECT_NEAR(v, 1.0, 1e-12);
  }
}

TEST(L2Normalize, Examples) {
  const std::vector<double> v{3, 4};
  const auto n = kernel::l2_normalize(v);
  EXPECT_NEAR(n[0], 0.6, 1e-15);
  EXPECT_NEAR(n[1], 0.8, 1e-15);
  const std::vector<double> unit{0, 1, 0};
  EXPECT_EQ(kernel::l2_normalize(unit), unit);
}

TEST(L2Normalize, RandomAgainstSummedNorm) {
  Rng rng(6);
  for (int s = 0; s < 100; ++s) {
    std::vector<double> v(8);
    for (double& x : v) x = rng.uniform(-2, 2);
    double n2 = 0.0;
    for (double x : v) n2 += x * x;
    const auto out = kernel::l2_normalize(v);
    double m2 = 0.0;
    for (std::size_t i = 0; i < 8; ++i) {
      EXPECT_NEAR(out[i], v[i] / std::sqrt(n2), 1e-15);
      m2 += out[i] * out[i];
    }
    EXPECT_NEAR(std::sqrt(m2), 1.0, 1e-9);
  }
}

TEST(L2Normalize, DegenerateThrows) {
  const std::vector<double> z{0.0, 1e-14};
  EXPECT_THROW(kernel::l2_normalize(z), DegenerateVectorError);
  EXPECT_THROW(kernel::l2_normalize_rows(Tensor2(2, 3)), DegenerateVectorError);
}

TEST(LayerNorm, ConstantRowGivesBias) {
  const auto bias = from(1, 3, {0.5, -1, 2});
  const auto out = kernel::layer_norm(Tensor2(2, 3, 7.0), Tensor2(1, 3, 1.0), bias);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(out(i, j), bias(0, j));
}

TEST(LayerNorm, NormalizedRowIsFixedPoint) {
  const auto x = from(1, 4, {-1, 1, -1, 1});  // mean 0, variance 1
  const auto out = kernel::layer_norm(x, Tensor2(1, 4, 1.0), Tensor2(1, 4));
  EXPECT_LT(max_abs_diff(out, x), 1e-5);
}

TEST(LayerNorm, MatchesTwoPassOracle) {
  Rng rng(7);
  for (int s = 0; s < 50; ++s) {
    const auto x = random_tensor(rng, 3, 6, -2, 2);
    const auto g = random_tensor(rng, 1, 6), b = random_tensor(rng, 1, 6);
    const auto out = kernel::layer_norm(x, g, b);
    for (std::size_t i = 0; i < 3; ++i) {
      double mean = 0.0;
      for (std::size_t j = 0; j < 6; ++j) mean += x(i, j) / 6.0;
      double var = 0.0;
      for (std::size_t j = 0; j < 6; ++j) var += (x(i, j) - mean) * (x(i, j) - mean) / 6.0;
      for (std::size_t j = 0; j < 6; ++j) {
        EXPECT_NEAR(out(i, j), (x(i, j) - mean) / std::sqrt(var + 1e-5) * g(0, j) + b(0, j), 1e-12);
      }
    }
  }
}

TEST(Binarize, SignWithTieRule) {
  const auto b = kernel::binarize(from(1, 4, {0.3, -0.7, 0.0, -0.0}));
  EXPECT_EQ(b, from(1, 4, {1, -1, 1, 1}));
}

// ---------------------------------------------------------------------------
// Gradient checker.

TEST(GradCheck, QuadraticIsExact) {
  const std::vector<double> theta{3.0};
  const std::vector<double> g{6.0};
  auto f = [](std::span<const double> p) { return p[0] * p[0]; };
  EXPECT_LT(grad_check(f, theta, g, 1e-5).max_rel_error, 1e-8);
}

TEST(GradCheck, ReportsWrongGradient) {
  const std::vector<double> theta{3.0, 1.0};
  const std::vector<double> g{6.0, 0.5};
  auto f = [](std::span<const double> p) { return p[0] * p[0] + p[1] * p[1]; };
  const auto rep = grad_check(f, theta, g);
  EXPECT_GT(rep.max_rel_error, 0.1);
  EXPECT_EQ(rep.worst_index, 1u);
  EXPECT_EQ(rep.checked, 2u);
}

TEST(GradCheck, NonFiniteFunctionThrows) {
  const std::vector<double> theta{0.0};
  const std::vector<double> g{0.0};
  auto f = [](std::span<const double> p) { return std::log(p[0]); };
  EXPECT_THROW(grad_check(f, theta, g), EvaluationError);
}

TEST(GradCheck, SigmoidSum) {
  Rng rng(8);
  const std::vector<Tensor2> in{random_tensor(rng, 3, 4, -2, 2)};
  auto fn = [](Tape& t, std::span<const Var> v) { return ad::sum(t, ad::sigmoid(t, v[0])); };
  EXPECT_LT(grad_check_tape(fn, in).max_rel_error, 1e-6);
}

// ---------------------------------------------------------------------------
// Every primitive's backward against central differences.

struct OpCase {
  const char* name;
  std::vector<std::pair<std::size_t, std::size_t>> shapes;
  std::function<Var(Tape&, std::span<const Var>)> op;
  std::function<bool(const std::vector<Tensor2>&)> admissible = nullptr;
  bool surrogate = false;
};

// Projects the op output to a scalar with fixed random weights and checks
// the gradient over all input coordinates, for kOpSeeds random instances.
void check_op(const OpCase& c) {
  Rng rng(derive_seed(99, std::hash<std::string>{}(c.name)));
  double worst = 0.0, worst_abs = 0.0;
  std::size_t checked = 0;
  int done = 0;
  while (done < kOpSeeds) {
    std::vector<Tensor2> in;
    for (auto [r, k] : c.shapes) in.push_back(random_tensor(rng, r, k, -2.0, 2.0));
    if (c.admissible && !c.admissible(in)) continue;
    std::optional<Tensor2> w;
    Rng wrng(rng.next());
    auto fn = [&](Tape& t, std::span<const Var> v) {
      Var y = c.op(t, v);
      if (!w) w = random_tensor(wrng, t.value(y).rows(), t.value(y).cols(), -1.0, 1.0);
      return ad::weighted_sum(t, y, *w);
    };
    const auto base = evaluate_on_tape(fn, in, true, c.surrogate);
    if (base.kink_margin < 1e-3) continue;
    // Relative error is meaningless once the gradient sits near the
    // central-difference roundoff floor; those coordinates get an absolute bound.
    std::vector<std::size_t> scaled, tiny;
    for (std::size_t i = 0; i < base.gradient.size(); ++i)
      (std::abs(base.gradient[i]) >= kTinyGradient ? scaled : tiny).push_back(i);
    if (!scaled.empty()) {
      worst = std::max(worst, grad_check_tape(fn, in, kGradCheckStep, scaled, c.surrogate).max_rel_error);
    }
    const auto theta = flatten(in);
    for (std::size_t i : tiny) {
      auto probe = theta;
      probe[i] += kGradCheckStep;
      const double fp = evaluate_on_tape(fn, unflatten(probe, in), false, c.surrogate).value;
      probe[i] -= 2 * kGradCheckStep;
      const double fm = evaluate_on_tape(fn, unflatten(probe, in), false, c.surrogate).value;
      worst_abs = std::max(worst_abs, std::abs((fp - fm) / (2 * kGradCheckStep) - base.gradient[i]));
    }
    checked += scaled.size() + tiny.size();
    ++done;
  }
  EXPECT_GT(checked, 0u) << c.name;
  EXPECT_LE(worst, kOpTolerance) << c.name;
  EXPECT_LE(worst_abs, kTinyAbsTolerance) << c.name;
}

bool away_from(const std::vector<Tensor2>& in, double lo, double hi) {
  for (double v : in[0].values())
    if (std::abs(v - lo) < 1e-3 || std::abs(v - hi) < 1e-3) return false;
  return true;
}

TEST(OpGradients, AllPrimitivesPassFiniteDifferences) {
  const std::vector<OpCase> cases{
      {"affine", {{4, 3}, {3, 5}, {1, 5}}, [](Tape& t, auto v) { return ad::affine(t, v[0], v[1], v[2]); }},
      {"relu", {{4, 5}}, [](Tape& t, auto v) { return ad::relu(t, v[0]); }},
      {"sigmoid", {{4, 5}}, [](Tape& t, auto v) { return ad::sigmoid(t, v[0]); }},
      {"tanh", {{4, 5}}, [](Tape& t, auto v) { return ad::tanh_act(t, v[0]); }},
      {"softmax_over_context", {{6, 4}}, [](Tape& t, auto v) { return ad::softmax_over_context(t, v[0]); }},
      {"l2_normalize_rows", {{5, 6}}, [](Tape& t, auto v) { return ad::l2_normalize_rows(t, v[0]); }},
      {"layer_norm", {{5, 6}, {1, 6}, {1, 6}}, [](Tape& t, auto v) { return ad::layer_norm(t, v[0], v[1], v[2]); }},
      {"add", {{3, 4}, {3, 4}}, [](Tape& t, auto v) { return ad::add(t, v[0], v[1]); }},
      {"hadamard", {{3, 4}, {3, 4}}, [](Tape& t, auto v) { return ad::hadamard(t, v[0], v[1]); }},
      {"mul_rows", {{5, 4}, {1, 4}}, [](Tape& t, auto v) { return ad::mul_rows(t, v[0], v[1]); }},
      {"column_sum", {{5, 4}}, [](Tape& t, auto v) { return ad::column_sum(t, v[0]); }},
      {"matmul_bt", {{4, 3}, {5, 3}}, [](Tape& t, auto v) { return ad::matmul_bt(t, v[0], v[1]); }},
      {"scale_shift", {{3, 3}}, [](Tape& t, auto v) { return ad::scale_shift(t, v[0], -2.0, 2.0); }},
      {"clamp", {{4, 4}}, [](Tape& t, auto v) { return ad::clamp(t, v[0], -1.0, 1.0); },
       [](const std::vector<Tensor2>& in) { return away_from(in, -1.0, 1.0); }},
      {"sum", {{3, 4}}, [](Tape& t, auto v) { return ad::sum(t, v[0]); }},
      {"binarize_st (surrogate)", {{3, 4}}, [](Tape& t, auto v) { return ad::binarize_st(t, v[0]); }, nullptr,
       true},
  };
  for (const auto& c : cases) check_op(c);
}

TEST(OpGradients, ReluRejectsKinks) {
  Tape t;
  Var x = t.leaf(from(1, 3, {1.0, -1e-4, 2.0}));
  ad::relu(t, x);
  EXPECT_NEAR(t.kink_margin(), 1e-4, 1e-18);
}

TEST(StraightThrough, ForwardSignBackwardIdentity) {
  Tape t;
  Var v = t.leaf(from(1, 4, {0.3, -0.7, 0.0, 0.9}));
  Var b = ad::binarize_st(t, v);
  EXPECT_EQ(t.value(b), from(1, 4, {1, -1, 1, 1}));
  const auto g = from(1, 4, {0.25, -1.5, 3.0, 0.0});
  Var s = ad::weighted_sum(t, b, g);
  t.backward(s);
  EXPECT_EQ(t.grad(v), g);
}

// ---------------------------------------------------------------------------
// Tape semantics.

TEST(Tape, CompositionMatchesManualChainRule) {
  Rng rng(10);
  const auto x = random_tensor(rng, 2, 3, -2, 2);
  const auto w = random_tensor(rng, 2, 3);
  Tape t;
  Var xv = t.leaf(x);
  t.backward(ad::weighted_sum(t, ad::tanh_act(t, ad::sigmoid(t, xv)), w));
  const Tensor2 g = t.grad(xv);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double s = 1.0 / (1.0 + std::exp(-x.data()[i]));
    const double th = std::tanh(s);
    EXPECT_NEAR(g.data()[i], w.data()[i] * (1.0 - th * th) * s * (1.0 - s), 1e-15);
  }
}

TEST(Tape, BackwardIsLinearInTheLoss) {
  Rng rng(11);
  const auto x = random_tensor(rng, 3, 4, -2, 2);
  const auto w1 = random_tensor(rng, 3, 4), w2 = random_tensor(rng, 3, 4);
  auto grad_of = [&](bool first, bool second) {
    Tape t;
    Var xv = t.leaf(x);
    Var y = ad::softmax_over_context(t, ad::tanh_act(t, xv));
    Var l1 = ad::weighted_sum(t, y, w1), l2 = ad::weighted_sum(t, y, w2);
    Var out = first && second ? ad::add(t, l1, l2) : (first ? l1 : l2);
    t.backward(out);
    return t.grad(xv);
  };
  Tensor2 sum = grad_of(true, false);
  sum += grad_of(false, true);
  EXPECT_LT(max_abs_diff(grad_of(true, true), sum), 1e-14);
}

TEST(Tape, UntouchedLeafHasZeroGradient) {
  Tape t;
  Var a = t.leaf(Tensor2(2, 2, 1.0));
  Var b = t.leaf(Tensor2(2, 2, 1.0));
  t.backward(ad::sum(t, a));
  EXPECT_EQ(t.grad(b), Tensor2(2, 2));
}

TEST(Tape, BackwardNeedsScalar) {
  Tape t;
  Var a = t.leaf(Tensor2(2, 2, 1.0));
  EXPECT_THROW(t.backward(a), DimensionError);
}

TEST(Tape, DeterministicAcrossRuns) {
  Rng rng(12);
  const std::vector<Tensor2> in{random_tensor(rng, 6, 5, -2, 2), random_tensor(rng, 5, 5), random_tensor(rng, 1, 5)};
  auto fn = [](Tape& t, std::span<const Var> v) {
    return ad::sum(t, ad::softmax_over_context(t, ad::relu(t, ad::affine(t, v[0], v[1], v[2]))));
  };
  const auto a = evaluate_on_tape(fn, in, true), b = evaluate_on_tape(fn, in, true);
  EXPECT_EQ(a.value, b.value);
  EXPECT_EQ(a.gradient, b.gradient);
}

TEST(FaultInjection, PerturbedBackwardFailsGradCheck) {
  Rng rng(13);
  const std::vector<Tensor2> in{random_tensor(rng, 3, 4, -2, 2), random_tensor(rng, 4, 2), random_tensor(rng, 1, 2)};
  auto fn = [](Tape& t, std::span<const Var> v) { return ad::sum(t, ad::tanh_act(t, ad::affine(t, v[0], v[1], v[2]))); };
  EXPECT_LT(grad_check_tape(fn, in).max_rel_error, 1e-6);
  debug::backward_perturbation().store(1e-3);
  const double broken = grad_check_tape(fn, in).max_rel_error;
  debug::backward_perturbation().store(0.0);
  EXPECT_GT(broken, 1e-4);
}

}  // namespace
}  // namespace descboost
