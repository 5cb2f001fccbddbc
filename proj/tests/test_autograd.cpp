// Copyright 2026 The keyprobe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "keyprobe/autograd.hpp"
#include "keyprobe/error.hpp"
#include "test_support.hpp"

namespace keyprobe {
namespace {

using testing::gradient_check;
using testing::random_matrix;
using testing::weighted_sum;
using V = Var<double>;
using Vs = std::vector<V>;

constexpr double kTol = 1e-5;

Tensor<double> rand(std::size_t r, std::size_t c, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  return random_matrix(r, c, rng, lo, hi);
}

// Values bounded away from zero so that finite differences never straddle
// the ReLU kink.
Tensor<double> away_from_zero(std::size_t r, std::size_t c, std::uint64_t seed) {
  Tensor<double> t = rand(r, c, seed, 0.1, 1.0);
  std::mt19937_64 rng(seed + 1);
  for (auto& v : t.storage()) {
    if (rng() % 2) v = -v;
  }
  return t;
}

TEST(GradCheck, Matmul) {
  EXPECT_LT(gradient_check([](Tape<double>&, const Vs& x) { return weighted_sum(matmul(x[0], x[1])); },
                           {rand(3, 4, 1), rand(4, 5, 2)}),
            kTol);
}

TEST(GradCheck, AddSameShapeAndRowBroadcast) {
  EXPECT_LT(gradient_check([](Tape<double>&, const Vs& x) { return weighted_sum(add(x[0], x[1])); },
                           {rand(3, 4, 3), rand(3, 4, 4)}),
            kTol);
  EXPECT_LT(gradient_check([](Tape<double>&, const Vs& x) { return weighted_sum(add(x[0], x[1])); },
                           {rand(3, 4, 5), rand(1, 4, 6)}),
            kTol);
}

TEST(GradCheck, MulScaleSum) {
  EXPECT_LT(gradient_check([](Tape<double>&, const Vs& x) { return weighted_sum(mul(x[0], x[1])); },
                           {rand(2, 5, 7), rand(2, 5, 8)}),
            kTol);
  EXPECT_LT(gradient_check([](Tape<double>&, const Vs& x) { return sum(scale(x[0], -2.5)); }, {rand(3, 3, 9)}),
            kTol);
}

TEST(GradCheck, ReluAndGelu) {
  EXPECT_LT(gradient_check([](Tape<double>&, const Vs& x) { return weighted_sum(relu(x[0])); },
                           {away_from_zero(4, 6, 10)}),
            kTol);
  EXPECT_LT(gradient_check([](Tape<double>&, const Vs& x) { return weighted_sum(gelu(x[0])); },
                           {rand(4, 6, 11, -3.0, 3.0)}),
            kTol);
}

TEST(GradCheck, SoftmaxBothAxes) {
  for (int axis : {0, 1}) {
    EXPECT_LT(gradient_check([axis](Tape<double>&, const Vs& x) { return weighted_sum(softmax(x[0], axis)); },
                             {rand(3, 5, 12, -2.0, 2.0)}),
              kTol)
        << axis;
  }
}

TEST(GradCheck, LayerNorm) {
  EXPECT_LT(gradient_check([](Tape<double>&, const Vs& x) { return weighted_sum(layer_norm(x[0])); },
                           {rand(3, 6, 13)}),
            kTol);
  EXPECT_LT(gradient_check([](Tape<double>&, const Vs& x) { return weighted_sum(layer_norm(x[0], x[1], x[2])); },
                           {rand(3, 6, 14), rand(1, 6, 15, 0.5, 1.5), rand(1, 6, 16)}),
            kTol);
}

TEST(GradCheck, DropoutTraining) {
  EXPECT_LT(gradient_check([](Tape<double>&, const Vs& x) { return weighted_sum(dropout(x[0], 0.4, 77, true)); },
                           {rand(4, 8, 17)}),
            kTol);
}

TEST(GradCheck, Pooling) {
  for (int axis : {0, 1}) {
    EXPECT_LT(gradient_check([axis](Tape<double>&, const Vs& x) { return weighted_sum(mean_pool(x[0], axis)); },
                             {rand(4, 3, 18)}),
              kTol);
  }
  EXPECT_LT(gradient_check([](Tape<double>&, const Vs& x) { return weighted_sum(segment_mean(x[0], {0, 2, 5, 6})); },
                           {rand(6, 3, 19)}),
            kTol);
}

TEST(GradCheck, Attention) {
  for (int heads : {1, 2}) {
    EXPECT_LT(gradient_check(
                  [heads](Tape<double>&, const Vs& x) {
                    return weighted_sum(scaled_dot_attention(x[0], x[1], x[2], heads, {0, 3, 7}));
                  },
                  {rand(7, 4, 20), rand(7, 4, 21), rand(7, 4, 22)}),
              kTol)
        << heads;
  }
}

TEST(GradCheck, SoftmaxCrossEntropy) {
  Tensor<double> targets = rand(4, 5, 23, 0.0, 1.0);
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 5; ++c) s += targets.at(r, c);
    for (std::size_t c = 0; c < 5; ++c) targets.at(r, c) /= s;
  }
  EXPECT_LT(gradient_check([&](Tape<double>&, const Vs& x) { return softmax_cross_entropy(x[0], targets); },
                           {rand(4, 5, 24, -2.0, 2.0)}),
            kTol);
}

TEST(GradCheck, Ntxent) {
  for (double tau : {0.1, 0.5}) {
    EXPECT_LT(gradient_check([tau](Tape<double>&, const Vs& x) { return ntxent(x[0], tau); }, {rand(6, 4, 25)}),
              kTol)
        << tau;
  }
}

TEST(GradCheck, ComposedMlpWithSharedInput) {
  EXPECT_LT(gradient_check(
                [](Tape<double>&, const Vs& x) {
                  const V h = gelu(linear(x[0], x[1], x[2]));
                  return weighted_sum(add(layer_norm(h), h));
                },
                {rand(5, 3, 26), rand(3, 4, 27), rand(1, 4, 28)}),
            kTol);
}

TEST(Ops, SoftmaxExample) {
  Tape<double> t;
  const V s = softmax(t.constant(Tensor<double>({1, 2}, {0.0, std::log(3.0)})));
  EXPECT_NEAR(s.value()[0], 0.25, 1e-12);
  EXPECT_NEAR(s.value()[1], 0.75, 1e-12);
  const V big = softmax(t.constant(Tensor<double>({1, 2}, {1000.0, 1000.0})));
  EXPECT_NEAR(big.value()[0], 0.5, 1e-12);
}

TEST(Ops, LayerNormExample) {
  Tape<double> t;
  const V y = layer_norm(t.constant(Tensor<double>({1, 3}, {1.0, 2.0, 3.0})), 0.0);
  EXPECT_NEAR(y.value()[0], -std::sqrt(1.5), 1e-12);
  EXPECT_NEAR(y.value()[1], 0.0, 1e-12);
  EXPECT_NEAR(y.value()[2], std::sqrt(1.5), 1e-12);
}

TEST(Ops, ReluAndGeluValues) {
  Tape<double> t;
  const V x = t.constant(Tensor<double>({1, 3}, {-1.0, 0.0, 2.0}));
  EXPECT_EQ(relu(x).value().to_vector(), (std::vector<double>{0.0, 0.0, 2.0}));
  const V g = gelu(x);
  EXPECT_NEAR(g.value()[1], 0.0, 1e-12);
  EXPECT_NEAR(g.value()[2], 2.0 * 0.5 * (1.0 + std::erf(2.0 / std::sqrt(2.0))), 2e-3);
}

TEST(Ops, AttentionSegmentsDoNotMix) {
  Tape<double> t;
  const Tensor<double> q = rand(5, 2, 30), k = rand(5, 2, 31);
  Tensor<double> v = rand(5, 2, 32);
  const auto first = scaled_dot_attention(t.constant(q), t.constant(k), t.constant(v), 1, {0, 2, 5}).value();
  for (std::size_t c = 0; c < 2; ++c) v.at(4, c) += 10.0;
  const auto second = scaled_dot_attention(t.constant(q), t.constant(k), t.constant(v), 1, {0, 2, 5}).value();
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(first.at(r, c), second.at(r, c));
  }
}

TEST(Dropout, EvalAndZeroRateAreIdentity) {
  Tape<double> t;
  const V x = t.constant(rand(3, 3, 40));
  EXPECT_EQ(dropout(x, 0.9, 1, false).id, x.id);
  EXPECT_EQ(dropout(x, 0.0, 1, true).id, x.id);
  EXPECT_THROW(dropout(x, 1.0, 1, true), UsageError);
}

TEST(Dropout, SeededMaskAndScaling) {
  Tape<double> t;
  const V x = t.constant(Tensor<double>({100, 100}, 1.0));
  const auto a = dropout(x, 0.75, 5, true).value();
  const auto b = dropout(x, 0.75, 5, true).value();
  const auto c = dropout(x, 0.75, 6, true).value();
  EXPECT_EQ(a.storage(), b.storage());
  EXPECT_NE(a.storage(), c.storage());
  double mean = 0.0;
  std::size_t kept = 0;
  for (double v : a.storage()) {
    mean += v;
    if (v != 0.0) {
      EXPECT_DOUBLE_EQ(v, 4.0);
      ++kept;
    }
  }
  EXPECT_NEAR(mean / 1e4, 1.0, 0.05);
  EXPECT_NEAR(static_cast<double>(kept) / 1e4, 0.25, 0.02);
}

TEST(Tape, NonFiniteValueRaisesNumericalError) {
  Tape<double> t;
  EXPECT_THROW(t.constant(Tensor<double>({1, 2}, {1.0, std::numeric_limits<double>::quiet_NaN()})),
               NumericalError);
  Tape<double> t2;
  const V big = t2.constant(Tensor<double>({1, 1}, {1e200}));
  EXPECT_THROW(mul(big, big), NumericalError);
}

TEST(Tape, BackwardRules) {
  Tape<double> t;
  const V x = t.variable(rand(2, 2, 50));
  EXPECT_THROW(t.backward(relu(x)), UsageError);
  const V loss = sum(x);
  t.backward(loss);
  EXPECT_EQ(x.grad().to_vector(), (std::vector<double>(4, 1.0)));
  EXPECT_THROW(t.backward(loss), UsageError);
  EXPECT_THROW(relu(x), UsageError);
}

TEST(Tape, ShapeMismatchIsUsageError) {
  Tape<double> t;
  EXPECT_THROW(matmul(t.constant(rand(2, 3, 1)), t.constant(rand(2, 3, 2))), UsageError);
  EXPECT_THROW(add(t.constant(rand(2, 3, 1)), t.constant(rand(3, 3, 2))), UsageError);
  EXPECT_THROW(ntxent(t.constant(rand(3, 3, 1)), 0.1), UsageError);
}

TEST(Tape, ParameterGradientsAccumulate) {
  Parameter<double> p("w", rand(2, 2, 60));
  for (int pass = 0; pass < 2; ++pass) {
    Tape<double> t;
    t.backward(sum(scale(t.parameter(p), 3.0)));
  }
  EXPECT_TRUE(p.has_grad);
  for (double g : p.grad.storage()) EXPECT_DOUBLE_EQ(g, 6.0);
  p.zero_grad();
  for (double g : p.grad.storage()) EXPECT_EQ(g, 0.0);
}

TEST(Tape, SinglePrecisionAgreesWithDouble) {
  const Tensor<double> xd = rand(4, 6, 70), wd = rand(6, 3, 71);
  Tape<double> td;
  const V vx = td.variable(xd);
  const V out_d = sum(gelu(matmul(vx, td.constant(wd))));
  td.backward(out_d);
  Tape<float> tf;
  const Var<float> fx = tf.variable(xd.cast<float>());
  const Var<float> out_f = sum(gelu(matmul(fx, tf.constant(wd.cast<float>()))));
  tf.backward(out_f);
  EXPECT_NEAR(out_f.value()[0], out_d.value()[0], 1e-4);
  for (std::size_t i = 0; i < xd.size(); ++i) EXPECT_NEAR(fx.grad()[i], vx.grad()[i], 1e-4);
}

}  // namespace
}  // namespace keyprobe
