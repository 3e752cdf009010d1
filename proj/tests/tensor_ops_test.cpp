// Copyright 2026 The TSFmicro Authors
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

#include <gtest/gtest.h>

#include <cmath>

#include "tsf/nn.hpp"
#include "tsf/ops.hpp"
#include "tsf/retention.hpp"

namespace tsf {
namespace {

Tensor<double> random(Shape shape, nn::Rng& rng) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.values()) v = rng.normal();
  return t;
}

TEST(Gemm, MatchesTripleLoopForEveryTransposeCombination) {
  nn::Rng rng(1);
  const std::size_t m = 5, n = 7, k = 4;
  for (bool ta : {false, true}) {
    for (bool tb : {false, true}) {
      const auto a = random(ta ? Shape{k, m} : Shape{m, k}, rng);
      const auto b = random(tb ? Shape{n, k} : Shape{k, n}, rng);
      Tensor<double> c = random({m, n}, rng);
      Tensor<double> expect = c;
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          double s = 0;
          for (std::size_t p = 0; p < k; ++p) {
            s += (ta ? a[p * m + i] : a[i * k + p]) * (tb ? b[j * k + p] : b[p * n + j]);
          }
          expect[i * n + j] = 2.0 * s + 0.5 * expect[i * n + j];
        }
      }
      gemm<double>(ta, tb, m, n, k, 2.0, a.data(), ta ? m : k, b.data(), tb ? k : n, 0.5,
                   c.data(), n);
      EXPECT_LT(max_abs_diff(c, expect), 1e-12);
    }
  }
}

TEST(Conv2d, MatchesBruteForce) {
  nn::Rng rng(2);
  const std::size_t B = 2, C = 3, H = 9, W = 8, O = 4, K = 3;
  for (auto [stride, pad] : {std::pair<std::size_t, std::size_t>{1, 1}, {2, 1}, {2, 0}, {3, 2}}) {
    Var<double> x(random({B, C, H, W}, rng)), w(random({O, C, K, K}, rng)),
        b(random({O}, rng));
    const auto y = ops::conv2d(x, w, b, stride, pad).value();
    const std::size_t oh = (H + 2 * pad - K) / stride + 1, ow = (W + 2 * pad - K) / stride + 1;
    ASSERT_EQ(y.shape(), (Shape{B, O, oh, ow}));
    double worst = 0;
    for (std::size_t n = 0; n < B; ++n)
      for (std::size_t o = 0; o < O; ++o)
        for (std::size_t i = 0; i < oh; ++i)
          for (std::size_t j = 0; j < ow; ++j) {
            double s = b.value()[o];
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t ki = 0; ki < K; ++ki)
                for (std::size_t kj = 0; kj < K; ++kj) {
                  const long yy = long(i * stride + ki) - long(pad);
                  const long xx = long(j * stride + kj) - long(pad);
                  if (yy < 0 || xx < 0 || yy >= long(H) || xx >= long(W)) continue;
                  s += x.value()[((n * C + c) * H + yy) * W + xx] *
                       w.value()[((o * C + c) * K + ki) * K + kj];
                }
            worst = std::max(worst, std::abs(s - y[((n * O + o) * oh + i) * ow + j]));
          }
    EXPECT_LT(worst, 1e-12) << "stride " << stride << " pad " << pad;
  }
}

TEST(Attention, MatchesNaiveSoftmax) {
  nn::Rng rng(3);
  const std::size_t B = 2, N = 5, heads = 2, dh = 3, D = heads * dh;
  Var<double> q(random({B, N, D}, rng)), k(random({B, N, D}, rng)), v(random({B, N, D}, rng));
  const auto y = ops::attention(q, k, v, heads).value();
  double worst = 0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < N; ++i) {
        std::vector<double> s(N);
        double mx = -1e300, z = 0;
        for (std::size_t j = 0; j < N; ++j) {
          for (std::size_t d = 0; d < dh; ++d) {
            s[j] += q.value()[(b * N + i) * D + h * dh + d] * k.value()[(b * N + j) * D + h * dh + d];
          }
          s[j] /= std::sqrt(double(dh));
          mx = std::max(mx, s[j]);
        }
        for (auto& e : s) z += (e = std::exp(e - mx));
        for (std::size_t d = 0; d < dh; ++d) {
          double o = 0;
          for (std::size_t j = 0; j < N; ++j) o += s[j] / z * v.value()[(b * N + j) * D + h * dh + d];
          worst = std::max(worst, std::abs(o - y[(b * N + i) * D + h * dh + d]));
        }
      }
  EXPECT_LT(worst, 1e-12);
}

TEST(CrossEntropy, UniformLogitsGiveLogC) {
  for (std::size_t c : {2, 3, 5, 7}) {
    Var<double> logits(Tensor<double>({4, c}, 0.3));
    const std::vector<int> labels{0, 1, 0, int(c) - 1};
    EXPECT_NEAR(ops::cross_entropy(logits, labels).value()[0], std::log(double(c)), 1e-12);
    EXPECT_NEAR(ops::cross_entropy(logits, labels, ops::Reduction::kSum).value()[0],
                4 * std::log(double(c)), 1e-12);
  }
}

TEST(CrossEntropy, StableForHugeLogits) {
  Var<double> logits(Tensor<double>({1, 3}, {1000.0, 0.0, -1000.0}));
  const std::vector<int> labels{1};
  EXPECT_NEAR(ops::cross_entropy(logits, labels).value()[0], 1000.0, 1e-9);
}

TEST(CrossEntropy, RejectsOutOfRangeLabel) {
  Var<double> logits(Tensor<double>({1, 3}));
  const std::vector<int> labels{3};
  EXPECT_THROW(ops::cross_entropy(logits, labels), std::exception);
}

TEST(LayerNorm, NormalizesEachRow) {
  nn::Rng rng(4);
  Var<double> x(random({3, 16}, rng));
  Var<double> g(Tensor<double>({16}, 1.0)), b(Tensor<double>({16}, 0.0));
  const auto y = ops::layer_norm(x, g, b).value();
  for (std::size_t r = 0; r < 3; ++r) {
    double m = 0, v = 0;
    for (std::size_t i = 0; i < 16; ++i) m += y[r * 16 + i] / 16;
    for (std::size_t i = 0; i < 16; ++i) v += (y[r * 16 + i] - m) * (y[r * 16 + i] - m) / 16;
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v, 1.0, 1e-4);
  }
}

TEST(BatchNorm, EvalUsesRunningStatistics) {
  Var<double> x(Tensor<double>({2, 2, 1, 1}, {1.0, 2.0, 3.0, 4.0}));
  Var<double> g(Tensor<double>({2}, 2.0)), b(Tensor<double>({2}, 1.0));
  Tensor<double> rm({2}, {1.0, -1.0}), rv({2}, {4.0, 1.0});
  const auto y = ops::batch_norm(x, g, b, rm, rv, {1, false, 0.0, 0.1}).value();
  EXPECT_NEAR(y[0], 2.0 * (1.0 - 1.0) / 2.0 + 1.0, 1e-12);
  EXPECT_NEAR(y[1], 2.0 * (2.0 + 1.0) / 1.0 + 1.0, 1e-12);
  EXPECT_NEAR(y[2], 2.0 * (3.0 - 1.0) / 2.0 + 1.0, 1e-12);
}

TEST(BatchNorm, TrainingUpdatesRunningStatistics) {
  Var<double> x(Tensor<double>({4, 1}, {1.0, 2.0, 3.0, 4.0}));
  Var<double> g(Tensor<double>({1}, 1.0)), b(Tensor<double>({1}, 0.0));
  Tensor<double> rm({1}, 0.0), rv({1}, 1.0);
  ops::batch_norm(x, g, b, rm, rv, {1, true, 1e-5, 0.1});
  EXPECT_NEAR(rm[0], 0.1 * 2.5, 1e-12);
  // Unbiased variance 5/3 enters the running estimate.
  EXPECT_NEAR(rv[0], 0.9 + 0.1 * 5.0 / 3.0, 1e-12);
}

TEST(Swish, MatchesDefinition) {
  Var<double> x(Tensor<double>({3}, {-2.0, 0.0, 1.5}));
  const auto y = ops::swish(x).value();
  for (std::size_t i = 0; i < 3; ++i) {
    const double v = x.value()[i];
    EXPECT_NEAR(y[i], v / (1 + std::exp(-v)), 1e-15);
  }
}

TEST(MeanTokens, ConstantInputGivesConstant) {
  Var<double> x(Tensor<double>({2, 6, 3}, 1.25));
  const auto y = ops::mean_tokens(x).value();
  ASSERT_EQ(y.shape(), (Shape{2, 3}));
  for (double v : y.values()) EXPECT_DOUBLE_EQ(v, 1.25);
}

TEST(TokenGrid, RoundTrip) {
  nn::Rng rng(5);
  Var<double> t(random({2, 6, 4}, rng));
  const auto g = ops::tokens_to_grid(t, 2, 3);
  ASSERT_EQ(g.shape(), (Shape{2, 4, 2, 3}));
  // token n = h * W + w
  EXPECT_EQ(g.value()[((1 * 4 + 2) * 2 + 1) * 3 + 2], t.value()[(1 * 6 + 5) * 4 + 2]);
  EXPECT_EQ(max_abs_diff(ops::grid_to_tokens(g).value(), t.value()), 0.0);
}

TEST(Autograd, SharedInputAccumulatesGradient) {
  Var<double> x(Tensor<double>({2}, {1.5, -2.0}), true);
  auto y = ops::weighted_sum(ops::mul(x, x), Tensor<double>({2}, 1.0));
  y.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 3.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], -4.0);
}

}  // namespace
}  // namespace tsf
